"""Inference-time recalibration of diffusion-branch skip and backbone features.

Eight scale factors -- {skip, backbone} x {level 1, 2} x {low, high band} --
modulate the diffusion U-Net without any retraining.  The band boundary sits
at row 64 of the 128-row encoder grid (the 2 kHz line of a 512-point analysis)
and halves at each deeper level.  Skip features are scaled uniformly per band;
backbone (decoder) features are modulated by an affine map of the min-max
normalised channel-mean activation, so the multiplier runs from 1 where the
map is quiet to the band's factor where it is strongest.

Profiles are plain data and every operation is a pure function, so concurrent
use over different tensors is safe.  These operations belong to the diffusion
branch only; the predictive branch is never modulated.
"""

from dataclasses import dataclass

import torch

_FIELD_ORDER = ("s1_low", "s1_high", "b1_low", "b1_high", "s2_low", "s2_high", "b2_low", "b2_high")

# CLI order for --tlb-custom: s1l,s1h,b1l,b1h,s2l,s2h,b2l,b2h
CUSTOM_FIELDS = _FIELD_ORDER

TIERS = ("severe", "moderate", "high")


@dataclass(frozen=True)
class TlbProfile:
    """Skip (s) and backbone (b) factors per level and frequency band."""

    s1_low: float = 1.0
    s1_high: float = 1.0
    b1_low: float = 1.0
    b1_high: float = 1.0
    s2_low: float = 1.0
    s2_high: float = 1.0
    b2_low: float = 1.0
    b2_high: float = 1.0
    boundary_bin: int = 64
    tier: str = "custom"

    def __post_init__(self):
        for name in _FIELD_ORDER:
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.boundary_bin <= 0:
            raise ValueError("boundary_bin must be positive")

    @classmethod
    def identity(cls):
        return cls(tier="identity")

    @property
    def is_identity(self):
        return all(getattr(self, name) == 1.0 for name in _FIELD_ORDER)

    def factors(self, level):
        """(s_low, s_high, b_low, b_high) for a level in {1, 2}."""
        if level == 1:
            return self.s1_low, self.s1_high, self.b1_low, self.b1_high
        if level == 2:
            return self.s2_low, self.s2_high, self.b2_low, self.b2_high
        raise ValueError(f"level must be 1 or 2, got {level}")

    def boundary_for(self, level, n_rows):
        """Band boundary row at `level`, tracking the halving feature grid."""
        if level not in (1, 2):
            raise ValueError(f"level must be 1 or 2, got {level}")
        boundary = self.boundary_bin >> (level - 1)
        base_rows = 128 >> (level - 1)
        if n_rows != base_rows:
            # Non-default grids (e.g. the uniform-stride encoder ablation)
            # keep the same proportional split.
            boundary = max(1, round(boundary * n_rows / base_rows))
        return boundary


def tier_profile(tier: str) -> TlbProfile:
    """Stored per-tier factor sets, selected by baseline quality."""
    if tier == "severe":
        return TlbProfile(
            s1_low=2.0, s1_high=0.8, b1_low=2.5, b1_high=1.0,
            s2_low=4.1, s2_high=0.5, b2_low=1.5, b2_high=1.0,
            tier="severe",
        )
    if tier == "moderate":
        return TlbProfile(
            s1_low=1.5, s1_high=1.5, b1_low=2.5, b1_high=2.5,
            s2_low=2.0, s2_high=2.0, b2_low=1.5, b2_high=1.5,
            tier="moderate",
        )
    if tier == "high":
        return TlbProfile(
            s1_low=1.0, s1_high=1.1, b1_low=1.0, b1_high=1.2,
            s2_low=1.0, s2_high=1.2, b2_low=1.0, b2_high=1.1,
            tier="high",
        )
    raise ValueError(f"unknown tier: {tier!r} (expected one of {TIERS})")


def tier_for_score(score: float) -> str:
    """Quality tier for a baseline score: <2 severe, [2, 3) moderate, >=3 high."""
    if score < 2.0:
        return "severe"
    if score < 3.0:
        return "moderate"
    return "high"


def parse_custom(text: str) -> TlbProfile:
    """Profile from 8 comma-separated decimals in CLI order."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 8:
        raise ValueError(f"expected 8 comma-separated factors, got {len(parts)}")
    values = dict(zip(CUSTOM_FIELDS, (float(p) for p in parts)))
    return TlbProfile(**values, tier="custom")


def scale_skip(x: torch.Tensor, level: int, profile: TlbProfile) -> torch.Tensor:
    """Scale rows below the band boundary by s_low and the rest by s_high."""
    s_low, s_high, _, _ = profile.factors(level)
    boundary = profile.boundary_for(level, x.shape[-2])
    out = x.clone()
    out[..., :boundary, :] = out[..., :boundary, :] * s_low
    out[..., boundary:, :] = out[..., boundary:, :] * s_high
    return out


def modulate_backbone(x: torch.Tensor, level: int, profile: TlbProfile) -> torch.Tensor:
    """Modulate decoder features by ((b - 1) * m + 1) per band.

    m is the channel-mean F x T map, min-max normalised to [0, 1] per sample;
    a constant map (zero range) normalises to 0.5 everywhere so the operator
    stays total.
    """
    if x.dim() != 4:
        raise ValueError(f"expected a batched C x F x T tensor, got shape {tuple(x.shape)}")
    _, _, b_low, b_high = profile.factors(level)
    boundary = profile.boundary_for(level, x.shape[-2])

    m = x.mean(dim=1, keepdim=True)
    flat = m.flatten(start_dim=1)
    lo = flat.min(dim=1).values.view(-1, 1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1, 1)
    span = hi - lo
    safe_span = torch.where(span > 0, span, torch.ones_like(span))
    m = torch.where(span > 0, (m - lo) / safe_span, torch.full_like(m, 0.5))

    mult = torch.ones_like(m)
    mult[..., :boundary, :] = (b_low - 1.0) * m[..., :boundary, :] + 1.0
    mult[..., boundary:, :] = (b_high - 1.0) * m[..., boundary:, :] + 1.0
    return x * mult
