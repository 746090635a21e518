import pytest
import torch
import torch.nn.functional as F

from pdse.blocks import (
    STRIPE_DILATIONS,
    AxialAttention,
    CrossBranchGate,
    DualPathBlock,
    StripeRefiner,
    dynamic_stripe,
    pixel_shuffle,
    pixel_unshuffle,
)


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestPixelRearrangement:
    def test_shape_law(self):
        x = torch.randn(2, 24, 128, 100, generator=_gen())
        out = pixel_unshuffle(x, 2)
        assert out.shape == (2, 96, 64, 50)
        back = pixel_shuffle(out, 2)
        assert back.shape == x.shape

    def test_bijection(self):
        x = torch.randn(1, 8, 16, 12, generator=_gen(1))
        assert torch.equal(pixel_shuffle(pixel_unshuffle(x, 2), 2), x)

    def test_element_count_preserved(self):
        x = torch.randn(3, 4, 8, 8, generator=_gen(2))
        assert pixel_unshuffle(x, 2).numel() == x.numel()

    def test_divisibility_errors(self):
        with pytest.raises(ValueError):
            pixel_unshuffle(torch.zeros(1, 4, 7, 8), 2)
        with pytest.raises(ValueError):
            pixel_shuffle(torch.zeros(1, 6, 4, 4), 2)


class TestAxialAttention:
    def test_residual_identity_at_default_init(self):
        # Output projections start at zero, so the block is the identity.
        block = AxialAttention(8, heads=4)
        x = torch.randn(2, 8, 12, 10, generator=_gen(3))
        assert torch.equal(block(x), x)

    def test_shape_preserving_after_randomisation(self):
        block = AxialAttention(8, heads=4)
        for p in block.parameters():
            with torch.no_grad():
                p.normal_(0, 0.3, generator=_gen(4))
        x = torch.randn(2, 8, 12, 10, generator=_gen(5))
        assert block(x).shape == x.shape

    def test_no_cross_sample_leakage(self):
        block = AxialAttention(8, heads=4)
        for p in block.parameters():
            with torch.no_grad():
                p.normal_(0, 0.3, generator=_gen(6))
        x = torch.randn(4, 8, 6, 6, generator=_gen(7))
        perm = torch.tensor([3, 1, 0, 2])
        assert torch.allclose(block(x)[perm], block(x[perm]), atol=1e-6)

    def test_attention_rows_sum_to_one(self):
        block = AxialAttention(8, heads=4)
        for p in block.parameters():
            with torch.no_grad():
                p.normal_(0, 0.3, generator=_gen(8))
        x = torch.randn(2, 8, 6, 5, generator=_gen(9))
        _, weights = block.time_attn(x, "time", return_weights=True)
        sums = weights.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
        _, weights = block.freq_attn(x, "freq", return_weights=True)
        sums = weights.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_channels_must_divide_heads(self):
        with pytest.raises(ValueError):
            AxialAttention(6, heads=4)


class TestDynamicStripe:
    def test_center_tap_identity(self):
        x = torch.randn(2, 3, 10, 9, generator=_gen(10))
        w = torch.zeros(2, 3, 3)
        w[:, :, 1] = 1.0
        for axis in ("freq", "time"):
            for d in STRIPE_DILATIONS:
                assert torch.allclose(dynamic_stripe(x, w, axis, d), x)

    def test_first_tap_shifts_by_dilation(self):
        d = 3
        x = torch.zeros(1, 1, 16, 1)
        x[0, 0, 5, 0] = 1.0
        w = torch.zeros(1, 1, 3)
        w[0, 0, 0] = 1.0  # reads x shifted by -d: hot element moves to 5 + d
        out = dynamic_stripe(x, w, "freq", d)
        assert out[0, 0, 5 + d, 0] == 1.0
        assert out.abs().sum() == 1.0

    def test_matches_dilated_depthwise_conv_oracle(self):
        gen = _gen(11)
        for axis in ("freq", "time"):
            for d in STRIPE_DILATIONS:
                x = torch.randn(2, 8, 8, 8, generator=gen, dtype=torch.float64)
                w = torch.randn(2, 8, 3, generator=gen, dtype=torch.float64)
                got = dynamic_stripe(x, w, axis, d)
                for b in range(x.shape[0]):
                    if axis == "freq":
                        kernel = w[b].view(8, 1, 3, 1)
                        ref = F.conv2d(x[b : b + 1], kernel, padding=(d, 0), dilation=(d, 1), groups=8)
                    else:
                        kernel = w[b].view(8, 1, 1, 3)
                        ref = F.conv2d(x[b : b + 1], kernel, padding=(0, d), dilation=(1, d), groups=8)
                    assert (got[b : b + 1] - ref).abs().max() < 1e-6

    def test_invalid_axis_and_dilation(self):
        x = torch.zeros(1, 1, 8, 8)
        w = torch.zeros(1, 1, 3)
        with pytest.raises(ValueError):
            dynamic_stripe(x, w, "depth", 3)
        with pytest.raises(ValueError):
            dynamic_stripe(x, w, "freq", 4)


class TestStripeRefiner:
    def test_instance_kernels_bounded(self):
        torch.manual_seed(0)
        block = StripeRefiner(6)
        x = torch.randn(3, 6, 10, 10, generator=_gen(12)) * 3
        for d in STRIPE_DILATIONS:
            w = block.instance_kernel(x, d)
            assert w.shape == (3, 6, 3)
            assert torch.all(w > -1) and torch.all(w < 1)
        # float32 tanh rounds to exactly +/-1 under saturation; the bound
        # stays closed even for extreme inputs.
        w = block.instance_kernel(x * 1e6, 3)
        assert torch.all(w >= -1) and torch.all(w <= 1)

    def test_kernels_depend_only_on_spatial_mean(self):
        block = StripeRefiner(4)
        gen = _gen(13)
        a = torch.randn(1, 4, 8, 8, generator=gen)
        shuffled = a.flatten(2)[:, :, torch.randperm(64, generator=gen)].view(1, 4, 8, 8)
        for d in STRIPE_DILATIONS:
            assert torch.allclose(block.instance_kernel(a, d), block.instance_kernel(shuffled, d), atol=1e-6)

    def test_pre_tanh_logits_scale_linearly(self):
        block = StripeRefiner(4)
        x = torch.randn(1, 4, 8, 8, generator=_gen(14))
        conv = block.kernel_gen["3"]
        pooled = x.mean(dim=(2, 3), keepdim=True)
        assert torch.allclose(conv(3.0 * pooled), 3.0 * conv(pooled), atol=1e-6)  # zero bias

    def test_gating_collapse_to_identity(self):
        block = StripeRefiner(4)
        with torch.no_grad():
            for key in map(str, STRIPE_DILATIONS):
                block.gate_f1[key].zero_()
                block.gate_t1[key].zero_()
                block.gate_f2[key].fill_(1.0)
                block.gate_t2[key].fill_(1.0)
                block.mix_static[key].zero_()
            block.mix_dynamic["3"].fill_(0.5)
            block.mix_dynamic["5"].fill_(0.25)
            block.mix_dynamic["7"].fill_(0.25)
            block.out_proj.weight.copy_(torch.eye(4).view(4, 4, 1, 1))
            block.out_proj.bias.zero_()
        x = torch.randn(2, 4, 8, 8, generator=_gen(15))
        assert torch.allclose(block(x), x, atol=1e-6)

    def test_zero_input_gives_zero_output(self):
        block = StripeRefiner(4)  # biases are zero-initialised
        out = block(torch.zeros(1, 4, 8, 8))
        assert torch.all(out == 0)

    def test_shape_preserving(self):
        block = StripeRefiner(8)
        x = torch.randn(2, 8, 16, 12, generator=_gen(16))
        assert block(x).shape == x.shape


class TestCrossBranchGate:
    def _inputs(self, seed=17):
        gen = _gen(seed)
        e_d = torch.randn(2, 4, 8, 8, generator=gen)
        e_p = torch.randn(2, 4, 8, 8, generator=gen)
        emb = torch.randn(2, 16, generator=gen)
        return e_d, e_p, emb

    def test_zero_predictive_feature_passes_diffusion_through(self):
        gate = CrossBranchGate(4, emb_dim=16)
        e_d, _, emb = self._inputs()
        out = gate(e_d, torch.zeros_like(e_d), emb)
        assert torch.allclose(out, e_d, atol=1e-6)

    def test_gate_values_in_unit_interval(self):
        gate = CrossBranchGate(4, emb_dim=16)
        e_d, e_p, emb = self._inputs(18)
        g = gate.gate_value(e_d, e_p, emb)
        assert torch.all(g > 0) and torch.all(g < 1)

    def test_saturated_gate_gives_plain_residual(self, monkeypatch):
        gate = CrossBranchGate(4, emb_dim=16)
        e_d, e_p, emb = self._inputs(19)
        monkeypatch.setattr(gate, "gate_value", lambda *a: torch.ones_like(e_d))
        assert torch.equal(gate(e_d, e_p, emb), e_d + e_p)

    def test_bypass_cuts_injection(self):
        gate = CrossBranchGate(4, emb_dim=16)
        e_d, e_p, emb = self._inputs(20)
        gate.bypass = True
        assert torch.equal(gate(e_d, e_p, emb), e_d)

    def test_disabled_freq_path_uses_joint_gate_only(self):
        gate = CrossBranchGate(4, emb_dim=16, freq_path=False)
        e_d, e_p, emb = self._inputs(21)
        g = gate.gate_value(e_d, e_p, emb)
        joint = torch.sigmoid(
            gate.joint_conv(torch.cat([e_d, e_p], dim=1)) + gate.time_proj(emb).view(2, -1, 1, 1)
        )
        assert torch.allclose(g, joint)

    def test_shape_mismatch_rejected(self):
        gate = CrossBranchGate(4, emb_dim=16)
        e_d, e_p, emb = self._inputs(22)
        with pytest.raises(ValueError):
            gate(e_d, e_p[:, :, :4], emb)

    def test_small_time_axis_pooling(self):
        gate = CrossBranchGate(4, emb_dim=16)
        gen = _gen(23)
        e_d = torch.randn(1, 4, 32, 2, generator=gen)
        e_p = torch.randn(1, 4, 32, 2, generator=gen)
        emb = torch.randn(1, 16, generator=gen)
        assert gate(e_d, e_p, emb).shape == e_d.shape


class TestDualPathBlock:
    def test_shape_and_grads(self):
        block = DualPathBlock(4)
        x = torch.randn(2, 4, 8, 6, generator=_gen(24), requires_grad=True)
        out = block(x)
        assert out.shape == x.shape
        out.sum().backward()
        assert x.grad is not None and torch.all(torch.isfinite(x.grad))
