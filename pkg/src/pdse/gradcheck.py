"""Central finite-difference verification of autograd gradients.

Each scenario builds a small double-precision instance of one building block
(or the full network with its training objective), randomises the weights,
and compares autograd gradients against central differences at sampled
weights.  Sampling cycles through every parameter tensor so each weight group
is covered at least once before extras are drawn.
"""

import numpy as np
import torch

from pdse.bands import BandMergeDecoder, BandSplitEncoder
from pdse.blocks import AxialAttention, CrossBranchGate, DualPathBlock, StripeRefiner
from pdse.losses import LossWeights, loss_comp, loss_mag, loss_phase, loss_score, total_loss
from pdse.network import DualBranchNet, NetworkConfig

DEFAULT_TOLERANCE = 1e-4


def _randomize(module, generator):
    for p in module.parameters():
        with torch.no_grad():
            p.copy_(torch.empty_like(p).normal_(0.0, 0.4, generator=generator))


def _weighted_sum_loss(module, inputs, generator):
    """Project the output onto a fixed random tensor so every element matters."""
    with torch.no_grad():
        probe = torch.empty_like(module(*inputs)).normal_(0.0, 1.0, generator=generator)

    def loss_fn():
        return (module(*inputs) * probe).sum()

    return loss_fn


def _scenario_attention(gen):
    module = AxialAttention(4, heads=4).double()
    _randomize(module, gen)
    x = torch.empty(2, 4, 8, 8, dtype=torch.float64).normal_(0, 1, generator=gen)
    return module, _weighted_sum_loss(module, (x,), gen)


def _scenario_stripe(gen):
    module = StripeRefiner(4).double()
    _randomize(module, gen)
    x = torch.empty(2, 4, 8, 8, dtype=torch.float64).normal_(0, 1, generator=gen)
    return module, _weighted_sum_loss(module, (x,), gen)


def _scenario_dualpath(gen):
    module = DualPathBlock(4).double()
    _randomize(module, gen)
    x = torch.empty(2, 4, 8, 8, dtype=torch.float64).normal_(0, 1, generator=gen)
    return module, _weighted_sum_loss(module, (x,), gen)


def _scenario_gate(gen):
    module = CrossBranchGate(4, emb_dim=16).double()
    _randomize(module, gen)
    e_d = torch.empty(2, 4, 8, 8, dtype=torch.float64).normal_(0, 1, generator=gen)
    e_p = torch.empty(2, 4, 8, 8, dtype=torch.float64).normal_(0, 1, generator=gen)
    emb = torch.empty(2, 16, dtype=torch.float64).normal_(0, 1, generator=gen)
    return module, _weighted_sum_loss(module, (e_d, e_p, emb), gen)


class _BandCodec(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.encoder = BandSplitEncoder(3, 4)
        self.decoder = BandMergeDecoder(4, 2)

    def forward(self, x):
        return self.decoder(self.encoder(x))


def _scenario_bands(gen):
    module = _BandCodec().double()
    _randomize(module, gen)
    x = torch.empty(1, 3, 256, 4, dtype=torch.float64).normal_(0, 1, generator=gen)
    return module, _weighted_sum_loss(module, (x,), gen)


def _scenario_network(gen):
    """Full dual-branch model under the combined training objective."""
    torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
    module = DualBranchNet(NetworkConfig(base_channels=4, heads=4)).double()
    _randomize(module, gen)
    rand = lambda *shape: torch.empty(*shape, dtype=torch.float64).normal_(0, 1, generator=gen)
    y3 = rand(1, 3, 256, 8)
    x_ri = rand(1, 2, 256, 8)
    x_m = rand(1, 1, 256, 8).abs()
    y_m = rand(1, 1, 256, 8).abs()
    z = rand(1, 1, 256, 8)
    sigma, t = 0.5, 0.3
    x_t = 0.7 * x_m + 0.3 * y_m + sigma * z
    weights = LossWeights()

    def loss_fn():
        xri_hat, features = module.predictive_forward(y3)
        mag_hat = torch.sqrt(xri_hat[:, 0] ** 2 + xri_hat[:, 1] ** 2 + 1e-12)[:, None]
        l_mag = loss_mag(mag_hat, x_m)
        l_comp = loss_comp(xri_hat, x_ri)
        _, _, _, l_pha = loss_phase(
            torch.atan2(xri_hat[:, 1], xri_hat[:, 0]), torch.atan2(x_ri[:, 1], x_ri[:, 0])
        )
        s_theta = module.diffusion_forward(x_t, t, features)
        l_score = loss_score(s_theta, z, sigma)
        return total_loss(l_mag, l_comp, l_pha, l_score, weights)

    return module, loss_fn


SCENARIOS = {
    "attention": _scenario_attention,
    "stripe": _scenario_stripe,
    "gate": _scenario_gate,
    "bands": _scenario_bands,
    "network": _scenario_network,
    "dualpath": _scenario_dualpath,
}


def finite_difference_check(name, n_weights=20, h=1e-6, seed=0):
    """Compare autograd against central differences at sampled weights.

    Returns (max_rel_err, rows) where rows are
    (param_name, flat_index, autograd, finite_diff, rel_err).
    """
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    gen = torch.Generator().manual_seed(seed)
    module, loss_fn = SCENARIOS[name](gen)

    loss = loss_fn()
    module.zero_grad()
    loss.backward()

    named = [(n, p) for n, p in module.named_parameters()]
    rng = np.random.default_rng(seed)
    picks = []
    cursor = 0
    while len(picks) < n_weights:
        pname, p = named[cursor % len(named)]
        flat = int(rng.integers(0, p.numel()))
        picks.append((pname, p, flat))
        cursor += 1

    rows = []
    max_rel = 0.0
    for pname, p, flat in picks:
        auto = float(p.grad.reshape(-1)[flat])
        with torch.no_grad():
            original = float(p.reshape(-1)[flat])
            p.reshape(-1)[flat] = original + h
            up = float(loss_fn())
            p.reshape(-1)[flat] = original - h
            down = float(loss_fn())
            p.reshape(-1)[flat] = original
        fd = (up - down) / (2.0 * h)
        denom = max(abs(auto), abs(fd))
        rel = abs(auto - fd) / denom if denom > 1e-8 else 0.0
        max_rel = max(max_rel, rel)
        rows.append((pname, flat, auto, fd, rel))
    return max_rel, rows
