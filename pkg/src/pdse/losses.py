"""Training objectives: spectral MSEs, anti-wrapping phase terms, score matching.

The total objective is

    total = lambda1 * mag + (1 - lambda1) * comp + lambda2 * pha + score

with defaults lambda1 = 0.5 and lambda2 = 0.002 chosen so the components sit
in the same order of magnitude during training.
"""

from dataclasses import dataclass

import numpy as np
import torch

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 0.002

    def __post_init__(self):
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ValueError(f"lambda1 must lie in [0, 1], got {self.lambda1}")
        if self.lambda2 < 0.0:
            raise ValueError(f"lambda2 must be >= 0, got {self.lambda2}")


@dataclass
class LossReport:
    """Per-step scalar loss components plus training telemetry."""

    mag: float
    comp: float
    ip: float
    gd: float
    iaf: float
    pha: float
    score: float
    total: float
    grad_norm: float = 0.0
    lr: float = 0.0
    step: int = 0

    LOG_HEADER = "step\tmag\tcomp\tip\tgd\tiaf\tscore\ttotal\tgrad_norm\tlr"

    def log_line(self):
        return (
            f"{self.step}\t{self.mag:.6e}\t{self.comp:.6e}\t{self.ip:.6e}\t"
            f"{self.gd:.6e}\t{self.iaf:.6e}\t{self.score:.6e}\t{self.total:.6e}\t"
            f"{self.grad_norm:.6e}\t{self.lr:.6e}"
        )


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_mag(est_m, ref_m):
    """Mean squared error between magnitude grids."""
    _check_shapes(est_m, ref_m)
    return ((est_m - ref_m) ** 2).mean()


def loss_comp(est_ri, ref_ri):
    """Sum of per-plane MSEs over the real and imaginary planes.

    Inputs are [..., 2, F, T] with the plane axis third from the end.
    """
    _check_shapes(est_ri, ref_ri)
    if est_ri.shape[-3] != 2:
        raise ValueError(f"expected 2 planes, got {est_ri.shape[-3]}")
    diff = (est_ri - ref_ri) ** 2
    return diff[..., 0, :, :].mean() + diff[..., 1, :, :].mean()


def anti_wrap(t):
    """f(t) = |t - 2*pi*round(t / 2*pi)|: 2*pi-periodic, even, range [0, pi].

    Works on torch tensors (with the a.e. subgradient sign(wrapped residual)
    flowing through autograd) and on floats / numpy arrays.
    """
    if isinstance(t, torch.Tensor):
        return torch.abs(t - TWO_PI * torch.round(t / TWO_PI))
    t = np.asarray(t, dtype=np.float64)
    return np.abs(t - TWO_PI * np.round(t / TWO_PI))


def loss_phase(est_phase, ref_phase):
    """(ip, gd, iaf, total) anti-wrapping phase losses.

    ip compares phases directly; gd and iaf compare first differences along
    the frequency and time axes (valid region, no wrap padding), wrapping
    after differencing.  Axes are [..., F, T].
    """
    _check_shapes(est_phase, ref_phase)
    ip = anti_wrap(est_phase - ref_phase).mean()
    d_f_est = est_phase[..., 1:, :] - est_phase[..., :-1, :]
    d_f_ref = ref_phase[..., 1:, :] - ref_phase[..., :-1, :]
    gd = anti_wrap(d_f_est - d_f_ref).mean()
    d_t_est = est_phase[..., :, 1:] - est_phase[..., :, :-1]
    d_t_ref = ref_phase[..., :, 1:] - ref_phase[..., :, :-1]
    iaf = anti_wrap(d_t_est - d_t_ref).mean()
    return ip, gd, iaf, ip + gd + iaf


def loss_score(s_theta, z, sigma_t):
    """Mean squared residual against the score target -z / sigma(t).

    sigma_t may be a positive scalar or a tensor broadcastable to z.
    """
    if isinstance(sigma_t, torch.Tensor):
        if (sigma_t <= 0).any():
            raise ValueError("sigma_t must be > 0")
        sigma = sigma_t
    else:
        if not sigma_t > 0:
            raise ValueError("sigma_t must be > 0")
        sigma = float(sigma_t)
    _check_shapes(s_theta, z)
    return ((s_theta + z / sigma) ** 2).mean()


def total_loss(mag, comp, pha, score, weights: LossWeights = LossWeights()):
    """Weighted combination of the four objectives."""
    for name, part in (("mag", mag), ("comp", comp), ("pha", pha), ("score", score)):
        value = float(part.detach()) if isinstance(part, torch.Tensor) else float(part)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss component {name}: {value}")
    return weights.lambda1 * mag + (1.0 - weights.lambda1) * comp + weights.lambda2 * pha + score
