"""Objective evaluation: SI-SDR and log-spectral distance."""

from dataclasses import dataclass, field

import numpy as np

from pdse.signal import StftConfig, Waveform, magnitude, stft
from pdse.validation import check_waveform_samples

SI_SDR_CAP_DB = 100.0


def si_sdr(est: Waveform, ref: Waveform) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The estimate is orthogonally projected onto the reference; the returned
    ratio compares projection energy against residual energy and is capped at
    +100 dB for numerically perfect matches.  Signals must be sample-aligned
    and equally long.
    """
    e = check_waveform_samples(est.samples, "estimate")
    r = check_waveform_samples(ref.samples, "reference")
    if e.size != r.size:
        raise ValueError(f"length mismatch: {e.size} vs {r.size}")
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise ValueError("reference signal is silent")
    proj = (np.dot(e, r) / ref_energy) * r
    noise = e - proj
    num = float(np.dot(proj, proj))
    den = float(np.dot(noise, noise))
    if den == 0.0 or num / den > 10.0**(SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    if num == 0.0:
        return -float("inf")
    return 10.0 * np.log10(num / den)


def log_spectral_distance(est: Waveform, ref: Waveform, config: StftConfig = StftConfig()) -> float:
    """RMS over frames of the per-frame RMS log10 magnitude difference, x10 (dB)."""
    if len(est) != len(ref):
        raise ValueError(f"length mismatch: {len(est)} vs {len(ref)}")
    floor = 1e-8
    m_est = np.maximum(magnitude(stft(est, config)).mag, floor)
    m_ref = np.maximum(magnitude(stft(ref, config)).mag, floor)
    diff = np.log10(m_est) - np.log10(m_ref)
    per_frame = np.sqrt((diff**2).mean(axis=0))
    return 10.0 * float(np.sqrt((per_frame**2).mean()))


@dataclass
class MetricReport:
    """Per-file rows plus corpus aggregates over an identical file set."""

    rows: list = field(default_factory=list)  # (name, si_sdr, lsd)

    def add(self, name, si_sdr_db, lsd_db):
        self.rows.append((name, float(si_sdr_db), float(lsd_db)))

    @property
    def mean_si_sdr(self):
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def std_si_sdr(self):
        return float(np.std([r[1] for r in self.rows]))

    @property
    def mean_lsd(self):
        return float(np.mean([r[2] for r in self.rows]))

    def to_csv(self):
        lines = ["file,si_sdr,lsd"]
        for name, s, l in self.rows:
            lines.append(f"{name},{s:.6f},{l:.6f}")
        return "\n".join(lines) + "\n"
