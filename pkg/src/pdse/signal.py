"""Waveform <-> time-frequency conversion, power-law compression and reconstruction.

Analysis uses a hopped, windowed FFT with frames centered on sample indices
``k * hop`` (reflect padding of ``fft_size // 2`` on both ends), so a signal of
length L yields ``1 + L // hop`` frames and the inverse transform recovers the
exact input length.  The frontend produces 257 frequency rows at the default
512-point configuration; the network operates on the first 256 rows (the
Nyquist row is dropped at ingress and restored as zeros at egress) so that band
splits and two pixel-unshuffle stages divide evenly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from pdse.validation import (
    check_finite,
    check_in_range,
    check_same_shape,
    check_waveform_samples,
)

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_COMPRESSION = 0.5

_WAV_SCALE = 32768.0


@dataclass
class Waveform:
    """Mono audio signal with amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = check_waveform_samples(self.samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 128
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop <= 0:
            raise ValueError("fft_size and hop must be positive")
        if self.fft_size % self.hop != 0:
            raise ValueError(
                f"hop ({self.hop}) must divide fft_size ({self.fft_size})"
            )
        if self.window != "hann":
            raise ValueError(f"unsupported window kind: {self.window!r}")
        # Exact weighted-overlap-add reconstruction needs the periodic sum of
        # the squared window over all hop shifts to stay strictly positive.
        wsq = self.window_array() ** 2
        if not np.all(wsq.reshape(-1, self.hop).sum(axis=0) > 1e-8):
            raise ValueError("window does not satisfy the overlap-add condition")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    @property
    def pad(self):
        return self.fft_size // 2

    def window_array(self):
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.fft_size)

    def frames_for_length(self, n_samples):
        if n_samples <= 0:
            raise ValueError("n_samples must be positive")
        return 1 + n_samples // self.hop


@dataclass
class ComplexSpectrogram:
    """F x T grid of complex STFT coefficients plus framing metadata."""

    data: np.ndarray
    config: StftConfig
    original_length: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {self.data.shape}")
        if self.original_length <= 0:
            raise ValueError("original_length must be positive")
        if self.config.frames_for_length(self.original_length) != self.data.shape[1]:
            raise ValueError(
                f"inconsistent metadata: {self.data.shape[1]} frames do not match "
                f"original_length={self.original_length} at hop={self.config.hop}"
            )

    @property
    def real(self):
        return self.data.real

    @property
    def imag(self):
        return self.data.imag

    @property
    def shape(self):
        return self.data.shape


@dataclass
class MagnitudeSpectrogram:
    """Non-negative F x T magnitude grid; `compressed` marks power-law state."""

    mag: np.ndarray
    compressed: bool = False

    def __post_init__(self):
        self.mag = np.asarray(self.mag, dtype=np.float64)
        check_finite(self.mag, "magnitude")
        if self.mag.size and self.mag.min() < 0:
            raise ValueError("magnitude entries must be >= 0")


def stft(wave: Waveform, config: StftConfig = StftConfig()) -> ComplexSpectrogram:
    x = check_waveform_samples(wave.samples, "waveform")
    pad = config.pad
    padded = np.pad(x, pad, mode="reflect")
    n_frames = config.frames_for_length(x.size)
    window = config.window_array()
    frames = np.empty((n_frames, config.fft_size))
    for k in range(n_frames):
        start = k * config.hop
        frames[k] = padded[start : start + config.fft_size] * window
    data = np.fft.rfft(frames, axis=1).T
    return ComplexSpectrogram(data, config, x.size)


def istft(spec: ComplexSpectrogram) -> Waveform:
    config = spec.config
    pad = config.pad
    n_frames = spec.data.shape[1]
    if spec.data.shape[0] != config.n_bins:
        raise ValueError(
            f"expected {config.n_bins} frequency rows, got {spec.data.shape[0]}"
        )
    window = config.window_array()
    frames = np.fft.irfft(spec.data.T, n=config.fft_size, axis=1) * window

    total = (n_frames - 1) * config.hop + config.fft_size
    acc = np.zeros(total)
    norm = np.zeros(total)
    wsq = window * window
    for k in range(n_frames):
        start = k * config.hop
        acc[start : start + config.fft_size] += frames[k]
        norm[start : start + config.fft_size] += wsq
    out = acc[pad : pad + spec.original_length]
    den = norm[pad : pad + spec.original_length]
    out = out / np.maximum(den, 1e-12)
    return Waveform(out)


def magnitude(spec: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(np.abs(spec.data), compressed=False)


def phase(spec: ComplexSpectrogram) -> np.ndarray:
    return np.arctan2(spec.data.imag, spec.data.real)


def power_compress(mag: MagnitudeSpectrogram, beta: float = DEFAULT_COMPRESSION) -> MagnitudeSpectrogram:
    check_in_range(beta, 0.0, 1.0, "beta", inclusive="right")
    if mag.compressed:
        raise ValueError("magnitude is already compressed")
    return MagnitudeSpectrogram(mag.mag**beta, compressed=True)


def power_expand(mag: MagnitudeSpectrogram, beta: float = DEFAULT_COMPRESSION) -> MagnitudeSpectrogram:
    check_in_range(beta, 0.0, 1.0, "beta", inclusive="right")
    if not mag.compressed:
        raise ValueError("magnitude is not compressed")
    return MagnitudeSpectrogram(mag.mag ** (1.0 / beta), compressed=False)


def compress_complex(spec: ComplexSpectrogram, beta: float = DEFAULT_COMPRESSION):
    """Compressed (real, imag, magnitude) planes: m^beta * e^{i*phase}.

    Compression acts on the magnitude only; the phase is untouched.
    """
    m = np.abs(spec.data)
    mc = m**beta
    phi = np.arctan2(spec.data.imag, spec.data.real)
    return mc * np.cos(phi), mc * np.sin(phi), mc


def reconstruct(mag: MagnitudeSpectrogram, phase_source: ComplexSpectrogram) -> Waveform:
    """Couple a magnitude grid with the phase of `phase_source` and invert."""
    if mag.compressed:
        raise ValueError("magnitude must be expanded before reconstruction")
    check_same_shape(mag.mag, phase_source.data, "magnitude", "phase source")
    phi = np.arctan2(phase_source.data.imag, phase_source.data.real)
    data = mag.mag * np.exp(1j * phi)
    return istft(ComplexSpectrogram(data, phase_source.config, phase_source.original_length))


def drop_nyquist(grid):
    """Trim the final (Nyquist) frequency row before the network ingests a grid."""
    if grid.shape[0] % 2 == 0:
        raise ValueError("expected an odd number of analysis rows")
    return grid[:-1]


def restore_nyquist(grid):
    """Append a zero Nyquist row so the grid matches the analysis bin count."""
    row = np.zeros((1, grid.shape[1]), dtype=grid.dtype)
    return np.concatenate([grid, row], axis=0)


def read_wav(path) -> Waveform:
    rate, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if rate != DEFAULT_SAMPLE_RATE:
        raise ValueError(f"{path}: expected {DEFAULT_SAMPLE_RATE} Hz input, got {rate}")
    return Waveform(data.astype(np.float64) / _WAV_SCALE, sample_rate=rate)


def write_wav(path, wave: Waveform):
    ints = np.round(wave.samples * _WAV_SCALE)
    ints = np.clip(ints, -32768, 32767).astype(np.int16)
    wavfile.write(path, wave.sample_rate, ints)
