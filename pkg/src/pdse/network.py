"""Dual-branch 3-level U-Net: deterministic estimator plus score estimator.

Both branches share one topology: band-split encoding to a 128-row grid,
a refinement unit per level (axial attention followed by stripe filtering),
pixel-unshuffle downsampling with channel doubling (C -> 2C -> 4C), a
bottleneck (two units on the diffusion side, one on the predictive side),
and a mirrored decoder with additive skip fusion.  The predictive branch
decodes to a 2-plane complex estimate; the diffusion branch receives the
predictive features through gated cross-branch injection at six points
(post-encoder, each level, bottleneck, and a final calibration of the decoder
output) and decodes to a 1-plane score estimate.

Inference-time recalibration (skip scaling, backbone modulation) hooks into
the diffusion branch only, controlled by an optional profile argument.
"""

import hashlib
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from pdse import tlb
from pdse.bands import BandMergeDecoder, BandPlan, BandSplitEncoder, TimeEmbedding
from pdse.blocks import (
    AxialAttention,
    CrossBranchGate,
    DualPathBlock,
    StripeRefiner,
    pixel_shuffle,
    pixel_unshuffle,
)

ABLATIONS = ("full", "uniform_codec", "no_global_gate", "dual_path_local")
N_LEVEL_FEATURES = 6


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 24
    heads: int = 4
    pred_bottleneck_blocks: int = 1
    diff_bottleneck_blocks: int = 2
    share_encoder_weights: bool = False
    ablation: str = "full"
    gate_pool: int = 4

    def __post_init__(self):
        if self.base_channels <= 0 or self.base_channels % self.heads:
            raise ValueError(
                f"base_channels must be a positive multiple of heads, got {self.base_channels}"
            )
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.pred_bottleneck_blocks < 1 or self.diff_bottleneck_blocks < 1:
            raise ValueError("bottleneck block counts must be >= 1")

    @property
    def level_channels(self):
        c = self.base_channels
        return (c, 2 * c, 4 * c)

    @property
    def emb_dim(self):
        return 4 * self.base_channels

    def digest(self):
        text = "|".join(
            str(v)
            for v in (
                self.base_channels, self.heads, self.pred_bottleneck_blocks,
                self.diff_bottleneck_blocks, self.share_encoder_weights,
                self.ablation, self.gate_pool,
            )
        )
        return hashlib.sha256(text.encode()).hexdigest()


class RefinementUnit(nn.Module):
    """Global-to-local refinement: axial attention, then stripe filtering."""

    def __init__(self, channels, config: NetworkConfig):
        super().__init__()
        self.attention = AxialAttention(channels, config.heads)
        if config.ablation == "dual_path_local":
            self.local = DualPathBlock(channels)
        else:
            self.local = StripeRefiner(channels)

    def forward(self, x):
        return self.local(self.attention(x))


class Downsample(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(4 * c_in, c_out, 3, padding=1)

    def forward(self, x):
        return self.conv(pixel_unshuffle(x, 2))


class Upsample(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, 4 * c_out, 3, padding=1)

    def forward(self, x):
        return pixel_shuffle(self.conv(x), 2)


class _Branch(nn.Module):
    """One U-Net tower (units and resampling); interaction lives in the parent."""

    def __init__(self, config: NetworkConfig, bottleneck_blocks):
        super().__init__()
        c0, c1, c2 = config.level_channels
        self.unit_e0 = RefinementUnit(c0, config)
        self.down0 = Downsample(c0, c1)
        self.unit_e1 = RefinementUnit(c1, config)
        self.down1 = Downsample(c1, c2)
        self.bottleneck = nn.ModuleList(
            RefinementUnit(c2, config) for _ in range(bottleneck_blocks)
        )
        self.up1 = Upsample(c2, c1)
        self.unit_d1 = RefinementUnit(c1, config)
        self.up0 = Upsample(c1, c0)
        self.unit_d0 = RefinementUnit(c0, config)


def _pad_time(x, multiple=4):
    t = x.shape[-1]
    pad = (-t) % multiple
    if pad:
        x = F.pad(x, (0, pad))
    return x, pad


def _crop_time(x, pad):
    return x[..., : x.shape[-1] - pad] if pad else x


class DualBranchNet(nn.Module):
    def __init__(self, config: NetworkConfig = NetworkConfig(), plan: BandPlan = BandPlan()):
        super().__init__()
        self.config = config
        self.plan = plan
        c0, c1, c2 = config.level_channels
        uniform = config.ablation == "uniform_codec"
        freq_path = config.ablation != "no_global_gate"

        self.time_emb = TimeEmbedding(config.emb_dim)
        self.pred_encoder = BandSplitEncoder(3, c0, plan, diffusion=False, uniform=uniform)
        if config.share_encoder_weights:
            # The diffusion input is lifted to 3 channels by zero padding so
            # the predictive band convolutions can serve both branches; the
            # time injection stays branch-specific.
            self.diff_encoder = None
            self.shared_time_inject = nn.Linear(config.emb_dim, c0)
        else:
            self.diff_encoder = BandSplitEncoder(
                1, c0, plan, diffusion=True, emb_dim=config.emb_dim, uniform=uniform
            )
        self.pred_decoder = BandMergeDecoder(c0, 2, plan, uniform=uniform)
        self.diff_decoder = BandMergeDecoder(c0, 1, plan, uniform=uniform)

        self.pred = _Branch(config, config.pred_bottleneck_blocks)
        self.diff = _Branch(config, config.diff_bottleneck_blocks)

        def gate(channels):
            return CrossBranchGate(channels, config.emb_dim, pool=config.gate_pool, freq_path=freq_path)

        self.gate_in = gate(c0)
        self.gate_e0 = gate(c0)
        self.gate_e1 = gate(c1)
        self.gate_bott = gate(c2)
        self.gate_d1 = gate(c1)
        self.gate_out = gate(c0)

    # -- predictive branch --------------------------------------------------

    def predictive_forward(self, y):
        """Degraded 3-plane grid -> (2-plane complex estimate, level features).

        The six cached features feed the diffusion branch's interaction gates.
        """
        br = self.pred
        e_in = self.pred_encoder(y)
        e_in, pad = _pad_time(e_in)
        h0 = e_in
        e0 = br.unit_e0(e_in)
        e1 = br.unit_e1(br.down0(e0))
        x = br.down1(e1)
        for unit in br.bottleneck:
            x = unit(x)
        h3 = x
        d1 = br.unit_d1(br.up1(x) + e1)
        d0 = br.unit_d0(br.up0(d1) + e0)
        features = [h0, e0, e1, h3, d1, d0]
        xri = self.pred_decoder(_crop_time(d0, pad))
        return xri, features

    # -- diffusion branch ---------------------------------------------------

    def _encode_diffusion(self, x_t, t_trunk):
        if self.diff_encoder is not None:
            return self.diff_encoder(x_t, t_trunk)
        lifted = F.pad(x_t, (0, 0, 0, 0, 0, 2))
        e = self.pred_encoder.fuse(self.pred_encoder.band_features(lifted))
        return e + self.shared_time_inject(t_trunk).view(t_trunk.shape[0], -1, 1, 1)

    def diffusion_forward(self, x_t, t, features, profile: tlb.TlbProfile = None):
        """Perturbed magnitude -> score estimate, guided by predictive features.

        `profile` enables inference-time skip/backbone recalibration; the
        predictive branch is never touched by it.
        """
        if len(features) != N_LEVEL_FEATURES:
            raise ValueError(
                f"expected {N_LEVEL_FEATURES} cached level features, got {len(features)}"
            )
        h0, h1, h2, h3, h4, h5 = features
        br = self.diff
        t_trunk = self.time_emb(t)

        e = self._encode_diffusion(x_t, t_trunk)
        e, pad = _pad_time(e)
        if e.shape != h0.shape:
            raise ValueError(
                f"level features were cached for shape {tuple(h0.shape)}, got {tuple(e.shape)}"
            )
        e = self.gate_in(e, h0, t_trunk)

        e0 = self.gate_e0(br.unit_e0(e), h1, t_trunk)
        skip0 = tlb.scale_skip(e0, 1, profile) if profile is not None else e0
        e1 = self.gate_e1(br.unit_e1(br.down0(e0)), h2, t_trunk)
        skip1 = tlb.scale_skip(e1, 2, profile) if profile is not None else e1

        x = br.down1(e1)
        for unit in br.bottleneck:
            x = unit(x)
        x = self.gate_bott(x, h3, t_trunk)

        d1 = self.gate_d1(br.unit_d1(br.up1(x) + skip1), h4, t_trunk)
        if profile is not None:
            d1 = tlb.modulate_backbone(d1, 2, profile)

        q_d = br.unit_d0(br.up0(d1) + skip0)
        q_o = self.gate_out(q_d, h5, t_trunk)
        if profile is not None:
            q_o = tlb.modulate_backbone(q_o, 1, profile)

        return self.diff_decoder(_crop_time(q_o, pad))

    def forward(self, y, x_t, t, profile=None):
        xri, features = self.predictive_forward(y)
        score = self.diffusion_forward(x_t, t, features, profile)
        return xri, score


def count_parameters(module: nn.Module) -> int:
    """Exact count of learnable scalars."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
