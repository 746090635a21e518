"""Band-adaptive frequency compression encoder and its mirrored decoder.

The 256-row input grid is split at rows 64 and 128.  The low band (rows 0-64,
up to 2 kHz at the default analysis) passes at stride 1 so harmonic structure
is preserved; the mid band is compressed by 2 and the high band by 4, each
with its own kernel footprint (3x3, 3x5, 3x7) so the receptive field widens
along time where the grid is squeezed along frequency.  Compressed rows
concatenate to 64 + 32 + 32 = 128, followed by a 1x1 fusion projection.  The
decoder mirrors the layout with per-band sub-pixel (depth-to-frequency)
upsampling.  A `uniform` switch replaces the codec with a single stride-3
convolution (output padded 86 -> 88 rows so two halvings stay integral).

The diffusion-branch encoder adds a projected sinusoidal time embedding after
the fusion projection; the predictive encoder rejects time input.
"""

from dataclasses import dataclass

import torch
from torch import nn

FULL_BINS = 256
UNIFORM_BINS = 88
_UNIFORM_STRIDE = 3
_UNIFORM_PAD = 4
TIME_EMB_SCALE = 1000.0


@dataclass(frozen=True)
class BandPlan:
    boundaries: tuple = (64, 128)
    strides: tuple = (1, 2, 4)
    kernel_shapes: tuple = ((3, 3), (3, 5), (3, 7))

    def __post_init__(self):
        if list(self.boundaries) != sorted(self.boundaries) or len(set(self.boundaries)) != len(self.boundaries):
            raise ValueError("boundaries must be strictly increasing")
        if any(b >= FULL_BINS for b in self.boundaries):
            raise ValueError(f"boundaries must be < {FULL_BINS}")
        if len(self.strides) != len(self.boundaries) + 1:
            raise ValueError("need one stride per band")
        if len(self.kernel_shapes) != len(self.strides):
            raise ValueError("need one kernel shape per band")
        for size, stride in zip(self.band_sizes, self.strides):
            if size % stride:
                raise ValueError(f"band of {size} rows is not divisible by stride {stride}")

    @property
    def band_sizes(self):
        edges = (0,) + tuple(self.boundaries) + (FULL_BINS,)
        return tuple(edges[i + 1] - edges[i] for i in range(len(edges) - 1))

    @property
    def compressed_sizes(self):
        return tuple(s // r for s, r in zip(self.band_sizes, self.strides))

    @property
    def f_out(self):
        return sum(self.compressed_sizes)


def sinusoidal_time_embedding(t, dim):
    """Deterministic sin/cos features of the diffusion time t in [0, 1]."""
    if dim % 2:
        raise ValueError("embedding dimension must be even")
    t = torch.as_tensor(t, dtype=torch.get_default_dtype()).reshape(-1)
    half = dim // 2
    exponent = -torch.arange(half, dtype=t.dtype) / max(half - 1, 1)
    freqs = torch.pow(torch.tensor(10000.0, dtype=t.dtype), exponent)
    angles = TIME_EMB_SCALE * t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class TimeEmbedding(nn.Module):
    """Shared trunk: sinusoidal features through one hidden layer."""

    def __init__(self, dim):
        super().__init__()
        self.dim = dim
        self.hidden = nn.Linear(dim, dim)
        self.act = nn.SiLU()

    def forward(self, t):
        emb = sinusoidal_time_embedding(t, self.dim)
        emb = emb.to(dtype=self.hidden.weight.dtype)
        return self.act(self.hidden(emb))


def freq_shuffle(x, r):
    """(B, C*r, F, T) -> (B, C, F*r, T) depth-to-frequency rearrangement."""
    b, cr, f, t = x.shape
    if cr % r:
        raise ValueError(f"channel dim {cr} is not divisible by r={r}")
    c = cr // r
    return x.view(b, c, r, f, t).permute(0, 1, 3, 2, 4).reshape(b, c, f * r, t)


def freq_unshuffle(x, r):
    """(B, C, F*r, T) -> (B, C*r, F, T); inverse of :func:`freq_shuffle`."""
    b, c, fr, t = x.shape
    if fr % r:
        raise ValueError(f"frequency dim {fr} is not divisible by r={r}")
    f = fr // r
    return x.view(b, c, f, r, t).permute(0, 1, 3, 2, 4).reshape(b, c * r, f, t)


class BandSplitEncoder(nn.Module):
    def __init__(self, in_channels, channels, plan: BandPlan = BandPlan(),
                 diffusion=False, emb_dim=None, uniform=False):
        super().__init__()
        if in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {in_channels}")
        self.in_channels = in_channels
        self.channels = channels
        self.plan = plan
        self.diffusion = diffusion
        self.uniform = uniform
        if uniform:
            self.uniform_conv = nn.Conv2d(
                in_channels, channels, (3, 3), stride=(_UNIFORM_STRIDE, 1),
                padding=(_UNIFORM_PAD, 1),
            )
        else:
            self.band_convs = nn.ModuleList(
                nn.Conv2d(in_channels, channels, kernel, stride=(stride, 1),
                          padding=(kernel[0] // 2, kernel[1] // 2))
                for kernel, stride in zip(plan.kernel_shapes, plan.strides)
            )
        self.fuse = nn.Conv2d(channels, channels, 1)
        if diffusion:
            if emb_dim is None:
                raise ValueError("diffusion encoder needs emb_dim")
            self.time_inject = nn.Linear(emb_dim, channels)

    @property
    def f_out(self):
        return UNIFORM_BINS if self.uniform else self.plan.f_out

    def band_features(self, x):
        """Per-band outputs concatenated along frequency, before fusion."""
        self._check_input(x)
        if self.uniform:
            return self.uniform_conv(x)
        edges = (0,) + tuple(self.plan.boundaries) + (FULL_BINS,)
        outs = [
            conv(x[:, :, edges[i] : edges[i + 1], :])
            for i, conv in enumerate(self.band_convs)
        ]
        return torch.cat(outs, dim=2)

    def _check_input(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected (B, {self.in_channels}, {FULL_BINS}, T), got {tuple(x.shape)}"
            )
        if x.shape[2] != FULL_BINS:
            raise ValueError(f"expected {FULL_BINS} frequency rows, got {x.shape[2]}")

    def forward(self, x, t_emb=None):
        if t_emb is not None and not self.diffusion:
            raise ValueError("time injection is only valid on the diffusion branch")
        out = self.fuse(self.band_features(x))
        if self.diffusion:
            if t_emb is None:
                raise ValueError("diffusion encoder requires a time embedding")
            out = out + self.time_inject(t_emb).view(t_emb.shape[0], -1, 1, 1)
        return out


class BandMergeDecoder(nn.Module):
    def __init__(self, channels, out_channels, plan: BandPlan = BandPlan(), uniform=False):
        super().__init__()
        self.channels = channels
        self.out_channels = out_channels
        self.plan = plan
        self.uniform = uniform
        if uniform:
            self.uniform_conv = nn.Conv2d(
                channels, out_channels * _UNIFORM_STRIDE, (3, 3), padding=(1, 1)
            )
        else:
            self.band_convs = nn.ModuleList(
                nn.Conv2d(channels, out_channels * stride, kernel,
                          padding=(kernel[0] // 2, kernel[1] // 2))
                for kernel, stride in zip(plan.kernel_shapes, plan.strides)
            )

    @property
    def f_in(self):
        return UNIFORM_BINS if self.uniform else self.plan.f_out

    def forward(self, q):
        if q.dim() != 4 or q.shape[1] != self.channels or q.shape[2] != self.f_in:
            raise ValueError(
                f"expected (B, {self.channels}, {self.f_in}, T), got {tuple(q.shape)}"
            )
        if self.uniform:
            up = freq_shuffle(self.uniform_conv(q), _UNIFORM_STRIDE)
            return up[:, :, _UNIFORM_PAD : _UNIFORM_PAD + FULL_BINS, :]
        edges = [0]
        for size in self.plan.compressed_sizes:
            edges.append(edges[-1] + size)
        outs = []
        for i, (conv, stride) in enumerate(zip(self.band_convs, self.plan.strides)):
            band = conv(q[:, :, edges[i] : edges[i + 1], :])
            outs.append(freq_shuffle(band, stride) if stride > 1 else band)
        return torch.cat(outs, dim=2)
