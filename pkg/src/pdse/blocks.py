"""Reusable network blocks.

* :class:`AxialAttention` -- residual multi-head self-attention along the time
  axis then the frequency axis (global context at linear-in-area cost).
* :class:`StripeRefiner` -- three-stage dynamic stripe filtering: per-instance
  3-tap kernels from pooled context, anisotropic stripe convolutions along
  both axes at dilations {3, 5, 7}, and a gated dual-path fusion with a static
  depthwise stripe path.
* :class:`CrossBranchGate` -- gated injection of predictive features into the
  diffusion branch with a time-conditioned joint gate and a pooled global
  gate.
* pixel shuffle / unshuffle wrappers with explicit divisibility checks.

All blocks preserve the C x F x T shape except the pixel rearrangements,
whose shape law is exact.  Forward evaluation is pure given the weights.
"""

import torch
import torch.nn.functional as F
from torch import nn

STRIPE_DILATIONS = (3, 5, 7)
STRIPE_TAPS = 3


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """(B, C, F, T) -> (B, C*r*r, F/r, T/r); exact element rearrangement."""
    if x.shape[-2] % r or x.shape[-1] % r:
        raise ValueError(
            f"spatial dims {tuple(x.shape[-2:])} are not divisible by r={r}"
        )
    return F.pixel_unshuffle(x, r)


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """(B, C, F, T) -> (B, C/(r*r), F*r, T*r); exact element rearrangement."""
    if x.shape[-3] % (r * r):
        raise ValueError(f"channel dim {x.shape[-3]} is not divisible by r^2={r * r}")
    return F.pixel_shuffle(x, r)


class _AxisAttention(nn.Module):
    """Pre-norm multi-head self-attention along one spatial axis."""

    def __init__(self, channels, heads):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels ({channels}) must divide into {heads} heads")
        self.heads = heads
        self.norm = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)
        # Zero output projection makes the residual branch start as identity.
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x, axis, return_weights=False):
        b, c, f, t = x.shape
        if axis == "time":
            seq = x.permute(0, 2, 3, 1).reshape(b * f, t, c)
        elif axis == "freq":
            seq = x.permute(0, 3, 2, 1).reshape(b * t, f, c)
        else:
            raise ValueError(f"axis must be 'time' or 'freq', got {axis!r}")

        n, length, _ = seq.shape
        h = self.norm(seq)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        dh = c // self.heads

        def split(tensor):
            return tensor.view(n, length, self.heads, dh).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = None
        if return_weights:
            attn = torch.softmax(q @ k.transpose(-2, -1) / dh**0.5, dim=-1)
            out = attn @ v
        else:
            out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(n, length, c)
        out = self.proj(out)

        if axis == "time":
            out = out.view(b, f, t, c).permute(0, 3, 1, 2)
        else:
            out = out.view(b, t, f, c).permute(0, 3, 2, 1)
        result = x + out
        if return_weights:
            return result, attn
        return result


class AxialAttention(nn.Module):
    """Two sequential residual attention passes: time axis, then frequency axis."""

    def __init__(self, channels, heads=4):
        super().__init__()
        self.time_attn = _AxisAttention(channels, heads)
        self.freq_attn = _AxisAttention(channels, heads)

    def forward(self, x):
        x = self.time_attn(x, "time")
        return self.freq_attn(x, "freq")


def dynamic_stripe(x: torch.Tensor, weights: torch.Tensor, axis: str, dilation: int) -> torch.Tensor:
    """3-tap per-channel stripe filter at offsets (-d, 0, +d) with zero padding.

    `weights` has shape (B, C, 3); tap k reads the input shifted by (k-1)*d
    along the chosen axis.
    """
    if dilation not in STRIPE_DILATIONS:
        raise ValueError(f"dilation must be one of {STRIPE_DILATIONS}, got {dilation}")
    if weights.shape[-1] != STRIPE_TAPS:
        raise ValueError(f"expected {STRIPE_TAPS} taps, got {weights.shape[-1]}")
    b, c, f, t = x.shape
    d = dilation
    if axis == "freq":
        xp = F.pad(x, (0, 0, d, d))
        slices = [xp[:, :, k * d : k * d + f, :] for k in range(STRIPE_TAPS)]
    elif axis == "time":
        xp = F.pad(x, (d, d))
        slices = [xp[:, :, :, k * d : k * d + t] for k in range(STRIPE_TAPS)]
    else:
        raise ValueError(f"axis must be 'freq' or 'time', got {axis!r}")
    w = weights.view(b, c, STRIPE_TAPS, 1, 1)
    return w[:, :, 0] * slices[0] + w[:, :, 1] * slices[1] + w[:, :, 2] * slices[2]


class _StaticStripe(nn.Module):
    """Sequential depthwise time- then frequency-stripe convolution at one dilation."""

    def __init__(self, channels, dilation):
        super().__init__()
        self.time_conv = nn.Conv2d(
            channels, channels, (1, 3), padding=(0, dilation),
            dilation=(1, dilation), groups=channels,
        )
        self.freq_conv = nn.Conv2d(
            channels, channels, (3, 1), padding=(dilation, 0),
            dilation=(dilation, 1), groups=channels,
        )
        nn.init.zeros_(self.time_conv.bias)
        nn.init.zeros_(self.freq_conv.bias)

    def forward(self, x):
        return self.freq_conv(self.time_conv(x))


class StripeRefiner(nn.Module):
    """Dynamic stripe filtering over dilations {3, 5, 7}.

    Per dilation d: instance kernels W_d = tanh(1x1 conv of the global average
    pool); a frequency stripe pass gated against the input, then a time stripe
    pass gated against that result (one W_d serves both axes); the per-dilation
    results and a static depthwise stripe path are mixed by learned scalars and
    projected by a 1x1 channel-mixing convolution.
    """

    def __init__(self, channels, dilations=STRIPE_DILATIONS):
        super().__init__()
        self.channels = channels
        self.dilations = tuple(dilations)
        self.kernel_gen = nn.ModuleDict(
            {str(d): nn.Conv2d(channels, channels * STRIPE_TAPS, 1) for d in self.dilations}
        )
        self.static_path = nn.ModuleDict(
            {str(d): _StaticStripe(channels, d) for d in self.dilations}
        )
        # Gates start near identity: the pass-through gains dominate.
        self.gate_f1 = nn.ParameterDict(
            {str(d): nn.Parameter(torch.full((channels,), 0.1)) for d in self.dilations}
        )
        self.gate_f2 = nn.ParameterDict(
            {str(d): nn.Parameter(torch.ones(channels)) for d in self.dilations}
        )
        self.gate_t1 = nn.ParameterDict(
            {str(d): nn.Parameter(torch.full((channels,), 0.1)) for d in self.dilations}
        )
        self.gate_t2 = nn.ParameterDict(
            {str(d): nn.Parameter(torch.ones(channels)) for d in self.dilations}
        )
        n = len(self.dilations)
        self.mix_static = nn.ParameterDict(
            {str(d): nn.Parameter(torch.tensor(1.0 / n)) for d in self.dilations}
        )
        self.mix_dynamic = nn.ParameterDict(
            {str(d): nn.Parameter(torch.tensor(1.0 / n)) for d in self.dilations}
        )
        self.out_proj = nn.Conv2d(channels, channels, 1)
        for conv in self.kernel_gen.values():
            nn.init.zeros_(conv.bias)
        nn.init.zeros_(self.out_proj.bias)

    def instance_kernel(self, x, dilation):
        """W_d in (-1, 1): tanh of a 1x1 projection of the global average pool."""
        b = x.shape[0]
        pooled = x.mean(dim=(2, 3), keepdim=True)
        return torch.tanh(self.kernel_gen[str(dilation)](pooled)).view(
            b, self.channels, STRIPE_TAPS
        )

    def forward(self, x):
        def gain(p):
            return p.view(1, -1, 1, 1)

        acc = None
        for d in self.dilations:
            key = str(d)
            w = self.instance_kernel(x, d)
            o_f = gain(self.gate_f1[key]) * dynamic_stripe(x, w, "freq", d) + gain(
                self.gate_f2[key]
            ) * x
            n_d = gain(self.gate_t1[key]) * dynamic_stripe(o_f, w, "time", d) + gain(
                self.gate_t2[key]
            ) * o_f
            term = self.mix_static[key] * self.static_path[key](x) + self.mix_dynamic[key] * n_d
            acc = term if acc is None else acc + term
        return self.out_proj(acc)


class CrossBranchGate(nn.Module):
    """Gated injection of predictive features into the diffusion latent.

    out = e_d + (G1 * G2) * e_p, where G1 is a sigmoid over a joint
    convolution of both features plus a projected time embedding, and G2 is a
    sigmoid over a pooled-and-upsampled convolution of the predictive feature
    (the frequency-selective path; disabled it contributes no weighting).
    When `bypass` is set the predictive injection is cut entirely (gate 0).
    """

    def __init__(self, channels, emb_dim, pool=4, freq_path=True):
        super().__init__()
        self.joint_conv = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(emb_dim, channels)
        self.freq_path = freq_path
        self.pool = pool
        if freq_path:
            self.global_conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.bypass = False

    def forward(self, e_d, e_p, t_emb):
        if e_d.shape != e_p.shape:
            raise ValueError(
                f"shape mismatch: diffusion {tuple(e_d.shape)} vs predictive {tuple(e_p.shape)}"
            )
        if self.bypass:
            return e_d
        gate = self.gate_value(e_d, e_p, t_emb)
        return e_d + gate * e_p

    def gate_value(self, e_d, e_p, t_emb):
        """The reliability weight G1 * G2 in (0, 1)."""
        joint = self.joint_conv(torch.cat([e_d, e_p], dim=1))
        joint = joint + self.time_proj(t_emb).view(t_emb.shape[0], -1, 1, 1)
        g1 = torch.sigmoid(joint)
        if not self.freq_path:
            return g1
        kf = min(self.pool, e_p.shape[-2])
        kt = min(self.pool, e_p.shape[-1])
        pooled = F.avg_pool2d(e_p, (kf, kt))
        g2 = torch.sigmoid(
            F.interpolate(self.global_conv(pooled), size=e_p.shape[-2:], mode="nearest")
        )
        return g1 * g2


class DualPathBlock(nn.Module):
    """Conventional dual-path replacement for the stripe refiner.

    Bidirectional GRU over the frequency axis (intra) then the time axis
    (inter), each followed by a linear projection and a residual add.
    """

    def __init__(self, channels):
        super().__init__()
        self.norm_f = nn.LayerNorm(channels)
        self.norm_t = nn.LayerNorm(channels)
        self.rnn_f = nn.GRU(channels, channels, batch_first=True, bidirectional=True)
        self.rnn_t = nn.GRU(channels, channels, batch_first=True, bidirectional=True)
        self.proj_f = nn.Linear(2 * channels, channels)
        self.proj_t = nn.Linear(2 * channels, channels)

    def _pass(self, x, norm, rnn, proj, axis):
        b, c, f, t = x.shape
        if axis == "freq":
            seq = x.permute(0, 3, 2, 1).reshape(b * t, f, c)
        else:
            seq = x.permute(0, 2, 3, 1).reshape(b * f, t, c)
        out, _ = rnn(norm(seq))
        out = proj(out)
        if axis == "freq":
            out = out.view(b, t, f, c).permute(0, 3, 2, 1)
        else:
            out = out.view(b, f, t, c).permute(0, 3, 1, 2)
        return x + out

    def forward(self, x):
        x = self._pass(x, self.norm_f, self.rnn_f, self.proj_f, "freq")
        return self._pass(x, self.norm_t, self.rnn_t, self.proj_t, "time")
