"""Seeded, probabilistic degradation synthesis for building training corpora.

Each distortion is applied independently with its catalogue probability; all
randomness is rooted in a (seed, file index) pair so a manifest replays
bit-exactly by re-running with the recorded seed.  Unsupported catalogue rows
(codec compression, impulse-response reverberation) are kept as stubs that log
skip events so application-rate statistics remain checkable.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, resample_poly, sosfilt

from pdse.signal import Waveform
from pdse.validation import check_in_range, check_waveform_samples


@dataclass(frozen=True)
class DistortionSpec:
    """One catalogue row: a distortion kind, its application probability and parameter ranges."""

    kind: str
    probability: float
    params: tuple = ()  # ((name, low, high), ...)
    supported: bool = True

    def __post_init__(self):
        check_in_range(self.probability, 0.0, 1.0, "probability")


def default_specs(include_stubs: bool = True):
    """The degradation catalogue with its documented application probabilities."""
    specs = [
        DistortionSpec("additive_noise", 0.50, (("snr_db", 0.0, 15.0), ("color", 0.0, 1.0))),
        DistortionSpec("white_noise", 0.60, (("snr_db", 0.0, 15.0),)),
        DistortionSpec("reverberation", 0.20, (), supported=False),
        DistortionSpec("bandpass", 0.20, (("low_hz", 20.0, 300.0), ("high_hz", 3000.0, 7600.0))),
        DistortionSpec("highpass", 0.70, (("cutoff_hz", 20.0, 300.0),)),
        DistortionSpec("lowpass", 0.70, (("cutoff_hz", 3000.0, 7600.0),)),
        DistortionSpec("bit_depth", 0.10, (("bits", 8, 24),)),
        DistortionSpec("dynamic_expand", 1.00, (("ratio", 1.0, 2.0),)),
        DistortionSpec("gain", 0.10, (("gain_db", -10.0, 10.0),)),
        DistortionSpec("hard_clip", 0.25, (("threshold_frac", 0.3, 0.9),)),
        DistortionSpec("post_clip_gain", 0.25, (("gain_db", -6.0, 6.0),)),
        DistortionSpec("resample", 0.40, (("rate_hz", 3000, 32000), ("algorithm", 0, 3))),
        DistortionSpec("gsm_compression", 0.25, (), supported=False),
        DistortionSpec("speaker_gain", 0.20, (("depth", 0.1, 0.5), ("rate_hz", 0.5, 2.0))),
        DistortionSpec("nearend_gain", 0.20, (("gain_db", -6.0, 6.0), ("position", 0.25, 0.75))),
        DistortionSpec("phaser", 0.02, (("stages", 2, 5),)),
        DistortionSpec("tanh_distortion", 0.01, (("drive", 2.0, 10.0),)),
    ]
    if not include_stubs:
        specs = [s for s in specs if s.supported]
    return specs


# -- primitive operations -------------------------------------------------


def add_noise_at_snr(x: Waveform, noise, snr_db: float) -> Waveform:
    """Rescale `noise` so 10*log10(P_signal / P_noise) equals snr_db, then add."""
    sig = check_waveform_samples(x.samples, "signal")
    n = check_waveform_samples(np.asarray(noise, dtype=np.float64), "noise")
    if n.size != sig.size:
        raise ValueError("noise length must match the signal")
    p_noise = float(np.mean(n**2))
    if p_noise == 0.0:
        raise ValueError("noise is silent")
    p_sig = float(np.mean(sig**2))
    scale = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(sig + scale * n, x.sample_rate)


def hard_clip(x: Waveform, threshold: float) -> Waveform:
    check_in_range(threshold, 0.0, 1.0, "threshold", inclusive="right")
    return Waveform(np.clip(x.samples, -threshold, threshold), x.sample_rate)


def reduce_bit_depth(x: Waveform, bits: int) -> Waveform:
    """Uniform mid-rise quantisation to 2**bits levels over [-1, 1]."""
    if not 8 <= bits <= 24:
        raise ValueError(f"bits must lie in [8, 24], got {bits}")
    scale = 2.0 ** (bits - 1)
    idx = np.floor(x.samples * scale)
    idx = np.clip(idx, -scale, scale - 1)
    return Waveform((idx + 0.5) / scale, x.sample_rate)


def dynamic_expand(x: Waveform, ratio: float) -> Waveform:
    """Downward expansion: sign(x) * |x|**ratio widens the dynamic range."""
    if ratio < 1.0:
        raise ValueError("ratio must be >= 1")
    return Waveform(np.sign(x.samples) * np.abs(x.samples) ** ratio, x.sample_rate)


def apply_gain(x: Waveform, gain_db: float) -> Waveform:
    return Waveform(x.samples * 10.0 ** (gain_db / 20.0), x.sample_rate)


def _sos_filter(x: Waveform, kind, cutoff):
    nyq = x.sample_rate / 2.0
    wn = np.atleast_1d(np.asarray(cutoff, dtype=np.float64)) / nyq
    wn = np.clip(wn, 1e-4, 1.0 - 1e-4)
    sos = butter(4, wn if wn.size > 1 else float(wn[0]), btype=kind, output="sos")
    return Waveform(sosfilt(sos, x.samples), x.sample_rate)


def highpass(x: Waveform, cutoff_hz: float) -> Waveform:
    return _sos_filter(x, "highpass", cutoff_hz)


def lowpass(x: Waveform, cutoff_hz: float) -> Waveform:
    return _sos_filter(x, "lowpass", cutoff_hz)


def bandpass(x: Waveform, low_hz: float, high_hz: float) -> Waveform:
    if low_hz >= high_hz:
        raise ValueError("low cutoff must be below high cutoff")
    return _sos_filter(x, "bandpass", (low_hz, high_hz))


RESAMPLE_ALGOS = ("polyphase", "linear", "zero_order_hold")


def resample_distort(x: Waveform, rate_hz: int, algorithm: str = "polyphase") -> Waveform:
    """Round-trip through a lower (or higher) rate and back to the native rate."""
    rate_hz = int(rate_hz)
    if rate_hz <= 0:
        raise ValueError("rate must be positive")
    if algorithm not in RESAMPLE_ALGOS:
        raise ValueError(f"unknown resampling algorithm: {algorithm!r}")
    sr = x.sample_rate
    g = np.gcd(sr, rate_hz)
    up, down = rate_hz // g, sr // g
    n = x.samples.size

    if algorithm == "polyphase":
        mid = resample_poly(x.samples, up, down)
        out = resample_poly(mid, down, up)
    else:
        m = max(1, int(round(n * rate_hz / sr)))
        t_mid = np.arange(m) * (sr / rate_hz)
        if algorithm == "linear":
            mid = np.interp(t_mid, np.arange(n), x.samples)
            out = np.interp(np.arange(n) * (rate_hz / sr), np.arange(m), mid)
        else:  # zero-order hold
            mid = x.samples[np.minimum(t_mid.astype(np.int64), n - 1)]
            idx = np.minimum((np.arange(n) * (rate_hz / sr)).astype(np.int64), m - 1)
            out = mid[idx]
    out = out[:n]
    if out.size < n:
        out = np.pad(out, (0, n - out.size))
    return Waveform(out, sr)


def tanh_distort(x: Waveform, drive: float) -> Waveform:
    if drive <= 0:
        raise ValueError("drive must be positive")
    return Waveform(np.tanh(drive * x.samples), x.sample_rate)


def phaser(x: Waveform, break_hz) -> Waveform:
    """Static phaser snapshot: first-order allpass cascade mixed 50/50 with dry."""
    wet = x.samples
    for f in np.atleast_1d(break_hz):
        # first-order allpass via bilinear transform at break frequency f
        tan_half = np.tan(np.pi * f / x.sample_rate)
        a = (tan_half - 1.0) / (tan_half + 1.0)
        sos = np.array([[a, 1.0, 0.0, 1.0, a, 0.0]])
        wet = sosfilt(sos, wet)
    return Waveform(0.5 * (x.samples + wet), x.sample_rate)


def speaker_gain(x: Waveform, depth: float, rate_hz: float) -> Waveform:
    """Slow sinusoidal gain fluctuation."""
    check_in_range(depth, 0.0, 1.0, "depth", inclusive="left")
    t = np.arange(x.samples.size) / x.sample_rate
    env = 1.0 + depth * np.sin(2.0 * np.pi * rate_hz * t)
    return Waveform(x.samples * env, x.sample_rate)


def nearend_gain(x: Waveform, gain_db: float, position: float) -> Waveform:
    """Step gain change at a fractional position, with a 10 ms linear crossfade."""
    check_in_range(position, 0.0, 1.0, "position", inclusive="neither")
    n = x.samples.size
    split = int(n * position)
    fade = min(int(0.010 * x.sample_rate), max(1, n - split))
    g = 10.0 ** (gain_db / 20.0)
    env = np.ones(n)
    env[split + fade :] = g
    env[split : split + fade] = np.linspace(1.0, g, fade, endpoint=False)
    return Waveform(x.samples * env, x.sample_rate)


# -- catalogue-driven application -----------------------------------------


@dataclass
class DegradationManifest:
    """Replayable record of one degraded output."""

    input: str
    output: str
    seed: int
    index: int
    applied: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(
            {
                "input": self.input,
                "output": self.output,
                "seed": self.seed,
                "index": self.index,
                "applied": self.applied,
            }
        )

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(d["input"], d["output"], d["seed"], d["index"], d["applied"])


def _rng_for(seed, index):
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(index))))


def _colored_noise(rng, n, color, sample_rate):
    """White noise shaped by a one-pole lowpass; color in [0, 1) sets the pole."""
    white = rng.standard_normal(n)
    if color <= 0:
        return white
    pole = 0.98 * color
    sos = np.array([[1.0 - pole, 0.0, 0.0, 1.0, -pole, 0.0]])
    return sosfilt(sos, white)


def degrade(x: Waveform, specs=None, seed: int = 0, index: int = 0):
    """Apply each catalogue row independently with its probability.

    Returns (degraded_waveform, manifest).  The output is peak-normalised so
    its maximum absolute amplitude never exceeds 1 (a no-op when it already
    fits).  Fully deterministic given (specs, seed, index, input).
    """
    if specs is None:
        specs = default_specs()
    rng = _rng_for(seed, index)
    out = Waveform(x.samples.copy(), x.sample_rate)
    manifest = DegradationManifest("", "", int(seed), int(index))

    for spec in specs:
        if rng.uniform() >= spec.probability:
            continue
        if not spec.supported:
            manifest.applied.append({"kind": spec.kind, "skipped": True})
            continue
        record = {"kind": spec.kind}
        if spec.kind == "additive_noise":
            snr = rng.uniform(*_range(spec, "snr_db"))
            color = rng.uniform(*_range(spec, "color"))
            noise = _colored_noise(rng, out.samples.size, color, out.sample_rate)
            out = add_noise_at_snr(out, noise, snr)
            record.update(snr_db=snr, color=color)
        elif spec.kind == "white_noise":
            snr = rng.uniform(*_range(spec, "snr_db"))
            noise = rng.standard_normal(out.samples.size)
            out = add_noise_at_snr(out, noise, snr)
            record.update(snr_db=snr)
        elif spec.kind == "bandpass":
            lo = rng.uniform(*_range(spec, "low_hz"))
            hi = rng.uniform(*_range(spec, "high_hz"))
            out = bandpass(out, lo, hi)
            record.update(low_hz=lo, high_hz=hi)
        elif spec.kind == "highpass":
            cut = rng.uniform(*_range(spec, "cutoff_hz"))
            out = highpass(out, cut)
            record.update(cutoff_hz=cut)
        elif spec.kind == "lowpass":
            cut = rng.uniform(*_range(spec, "cutoff_hz"))
            out = lowpass(out, cut)
            record.update(cutoff_hz=cut)
        elif spec.kind == "bit_depth":
            lo, hi = _range(spec, "bits")
            bits = int(rng.integers(int(lo), int(hi) + 1))
            out = reduce_bit_depth(out, bits)
            record.update(bits=bits)
        elif spec.kind == "dynamic_expand":
            ratio = rng.uniform(*_range(spec, "ratio"))
            out = dynamic_expand(out, ratio)
            record.update(ratio=ratio)
        elif spec.kind in ("gain", "post_clip_gain"):
            db = rng.uniform(*_range(spec, "gain_db"))
            out = apply_gain(out, db)
            record.update(gain_db=db)
        elif spec.kind == "hard_clip":
            frac = rng.uniform(*_range(spec, "threshold_frac"))
            peak = float(np.max(np.abs(out.samples)))
            threshold = min(1.0, max(frac * peak, 1e-6))
            out = hard_clip(out, threshold)
            record.update(threshold=threshold)
        elif spec.kind == "resample":
            lo, hi = _range(spec, "rate_hz")
            rate = int(rng.integers(int(lo), int(hi) + 1))
            algo = RESAMPLE_ALGOS[int(rng.integers(0, len(RESAMPLE_ALGOS)))]
            out = resample_distort(out, rate, algo)
            record.update(rate_hz=rate, algorithm=algo)
        elif spec.kind == "speaker_gain":
            depth = rng.uniform(*_range(spec, "depth"))
            rate = rng.uniform(*_range(spec, "rate_hz"))
            out = speaker_gain(out, depth, rate)
            record.update(depth=depth, rate_hz=rate)
        elif spec.kind == "nearend_gain":
            db = rng.uniform(*_range(spec, "gain_db"))
            pos = rng.uniform(*_range(spec, "position"))
            out = nearend_gain(out, db, pos)
            record.update(gain_db=db, position=pos)
        elif spec.kind == "phaser":
            lo, hi = _range(spec, "stages")
            stages = int(rng.integers(int(lo), int(hi)))
            freqs = rng.uniform(200.0, 4000.0, size=stages)
            out = phaser(out, freqs)
            record.update(break_hz=[float(f) for f in freqs])
        elif spec.kind == "tanh_distortion":
            drive = rng.uniform(*_range(spec, "drive"))
            out = tanh_distort(out, drive)
            record.update(drive=drive)
        else:
            raise ValueError(f"unknown distortion kind: {spec.kind!r}")
        manifest.applied.append(record)

    peak = float(np.max(np.abs(out.samples)))
    if peak > 1.0:
        out = Waveform(out.samples / peak, out.sample_rate)
        manifest.applied.append({"kind": "peak_normalize", "scale": 1.0 / peak})
    return out, manifest


def _range(spec, name):
    for pname, lo, hi in spec.params:
        if pname == name:
            return lo, hi
    raise KeyError(f"{spec.kind} has no parameter {name!r}")


def load_spec_file(path):
    """Custom catalogue from a JSON file: a list of rows overriding defaults.

    Each row is an object with "kind" and optional "probability" and
    "params" ({name: [low, high]}); omitted fields keep the default row's
    values.  Kinds absent from the file keep their default rows; a kind may
    be dropped entirely with "probability": 0.
    """
    with open(path, encoding="utf-8") as fh:
        rows = json.load(fh)
    if not isinstance(rows, list):
        raise ValueError(f"{path}: expected a JSON list of catalogue rows")
    by_kind = {s.kind: s for s in default_specs()}
    for row in rows:
        kind = row.get("kind")
        if kind not in by_kind:
            raise ValueError(f"{path}: unknown distortion kind {kind!r}")
        base = by_kind[kind]
        probability = float(row.get("probability", base.probability))
        params = base.params
        if "params" in row:
            defaults = dict((name, (lo, hi)) for name, lo, hi in base.params)
            for name, bounds in row["params"].items():
                if name not in defaults:
                    raise ValueError(f"{path}: {kind} has no parameter {name!r}")
                lo, hi = bounds
                defaults[name] = (float(lo), float(hi))
            params = tuple((name, lo, hi) for name, (lo, hi) in defaults.items())
        by_kind[kind] = DistortionSpec(kind, probability, params, supported=base.supported)
    return list(by_kind.values())


def replay(manifest: DegradationManifest, x: Waveform, specs=None):
    """Re-run a manifest's degradation; bit-exact against the original output."""
    out, again = degrade(x, specs=specs, seed=manifest.seed, index=manifest.index)
    if again.applied != manifest.applied:
        raise ValueError("replayed distortion sequence does not match the manifest")
    return out
