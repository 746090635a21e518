import pytest
import torch

from pdse import tlb


class TestProfile:
    def test_identity_profile(self):
        prof = tlb.TlbProfile.identity()
        assert prof.is_identity
        assert prof.factors(1) == (1.0, 1.0, 1.0, 1.0)
        assert prof.factors(2) == (1.0, 1.0, 1.0, 1.0)

    def test_factors_must_be_positive(self):
        with pytest.raises(ValueError):
            tlb.TlbProfile(s1_low=0.0)
        with pytest.raises(ValueError):
            tlb.TlbProfile(b2_high=-0.5)

    def test_invalid_level(self):
        with pytest.raises(ValueError):
            tlb.TlbProfile.identity().factors(3)

    def test_boundary_halves_per_level(self):
        prof = tlb.TlbProfile.identity()
        assert prof.boundary_for(1, 128) == 64
        assert prof.boundary_for(2, 64) == 32

    def test_boundary_scales_on_nonstandard_grids(self):
        prof = tlb.TlbProfile.identity()
        assert prof.boundary_for(1, 88) == round(64 * 88 / 128)


class TestTierProfiles:
    def test_severe_values(self):
        p = tlb.tier_profile("severe")
        assert (p.s1_low, p.b1_low, p.s2_low, p.b2_low) == (2.0, 2.5, 4.1, 1.5)
        assert (p.s1_high, p.s2_high, p.b1_high, p.b2_high) == (0.8, 0.5, 1.0, 1.0)

    def test_moderate_values(self):
        p = tlb.tier_profile("moderate")
        assert (p.s1_low, p.b1_low, p.s2_low, p.b2_low) == (1.5, 2.5, 2.0, 1.5)
        assert (p.s1_high, p.b1_high, p.s2_high, p.b2_high) == (1.5, 2.5, 2.0, 1.5)

    def test_high_values(self):
        p = tlb.tier_profile("high")
        assert (p.s1_low, p.s2_low, p.b1_low, p.b2_low) == (1.0, 1.0, 1.0, 1.0)
        assert (p.s1_high, p.s2_high) == (1.1, 1.2)
        assert (p.b1_high, p.b2_high) == (1.2, 1.1)

    def test_unknown_tier(self):
        with pytest.raises(ValueError):
            tlb.tier_profile("extreme")

    def test_exactly_one_tier_per_score(self):
        for score, tier in ((0.5, "severe"), (1.99, "severe"), (2.0, "moderate"),
                            (2.99, "moderate"), (3.0, "high"), (4.5, "high")):
            assert tlb.tier_for_score(score) == tier


class TestParseCustom:
    def test_round_trip(self):
        p = tlb.parse_custom("2.0,0.8,2.5,1.0,4.1,0.5,1.5,1.0")
        assert p == tlb.tier_profile("severe").__class__(
            s1_low=2.0, s1_high=0.8, b1_low=2.5, b1_high=1.0,
            s2_low=4.1, s2_high=0.5, b2_low=1.5, b2_high=1.0, tier="custom",
        )

    def test_wrong_count(self):
        with pytest.raises(ValueError, match="8"):
            tlb.parse_custom("1,2,3")


class TestScaleSkip:
    def test_identity(self):
        x = torch.randn(2, 3, 128, 10, generator=torch.Generator().manual_seed(0))
        out = tlb.scale_skip(x, 1, tlb.TlbProfile.identity())
        assert torch.equal(out, x)

    def test_band_split_values(self):
        prof = tlb.TlbProfile(s1_low=2.0, s1_high=1.0)
        x = torch.ones(1, 2, 128, 4)
        out = tlb.scale_skip(x, 1, prof)
        assert torch.all(out[:, :, :64] == 2.0)
        assert torch.all(out[:, :, 64:] == 1.0)

    def test_energy_ratio_scales_quadratically(self):
        prof = tlb.TlbProfile(s2_low=3.0, s2_high=0.5)
        x = torch.randn(1, 4, 64, 8, generator=torch.Generator().manual_seed(1))
        out = tlb.scale_skip(x, 2, prof)
        ratio_in = (x[:, :, :32] ** 2).sum() / (x[:, :, 32:] ** 2).sum()
        ratio_out = (out[:, :, :32] ** 2).sum() / (out[:, :, 32:] ** 2).sum()
        assert float(ratio_out / ratio_in) == pytest.approx((3.0 / 0.5) ** 2, rel=1e-5)

    def test_input_not_mutated(self):
        x = torch.ones(1, 1, 128, 2)
        snapshot = x.clone()
        tlb.scale_skip(x, 1, tlb.tier_profile("severe"))
        assert torch.equal(x, snapshot)


class TestModulateBackbone:
    def test_identity_when_b_is_one(self):
        x = torch.randn(2, 3, 128, 6, generator=torch.Generator().manual_seed(2))
        out = tlb.modulate_backbone(x, 1, tlb.TlbProfile.identity())
        assert torch.equal(out, x)

    def test_affine_endpoints(self):
        # Channel mean runs 0..1 after min-max normalisation: the multiplier
        # is exactly 1 at the minimum position and exactly b at the maximum.
        prof = tlb.TlbProfile(b1_low=2.5, b1_high=2.5)
        x = torch.zeros(1, 1, 128, 4)
        x[0, 0, 0, 0] = 0.0  # minimum
        x[0, 0, 5, 2] = 4.0  # maximum
        out = tlb.modulate_backbone(x, 1, prof)
        assert float(out[0, 0, 0, 0]) == pytest.approx(0.0)  # 0 * anything
        assert float(out[0, 0, 5, 2]) == pytest.approx(4.0 * 2.5)

    def test_constant_map_uses_half(self):
        prof = tlb.TlbProfile(b1_low=3.0, b1_high=3.0)
        x = torch.full((1, 2, 128, 4), 2.0)
        out = tlb.modulate_backbone(x, 1, prof)
        assert torch.allclose(out, x * ((3.0 - 1.0) * 0.5 + 1.0))

    def test_multiplier_bounded_by_b(self):
        prof = tlb.TlbProfile(b2_low=2.0, b2_high=0.5)
        x = torch.randn(3, 4, 64, 8, generator=torch.Generator().manual_seed(3)).abs() + 0.1
        out = tlb.modulate_backbone(x, 2, prof)
        mult = out / x
        assert torch.all(mult[:, :, :32] >= 1.0 - 1e-6)
        assert torch.all(mult[:, :, :32] <= 2.0 + 1e-6)
        assert torch.all(mult[:, :, 32:] >= 0.5 - 1e-6)
        assert torch.all(mult[:, :, 32:] <= 1.0 + 1e-6)

    def test_batch_permutation_commutes(self):
        prof = tlb.tier_profile("severe")
        x = torch.randn(4, 3, 128, 5, generator=torch.Generator().manual_seed(4))
        perm = torch.tensor([2, 0, 3, 1])
        a = tlb.modulate_backbone(x, 1, prof)[perm]
        b = tlb.modulate_backbone(x[perm], 1, prof)
        assert torch.allclose(a, b)
        a = tlb.scale_skip(x, 1, prof)[perm]
        b = tlb.scale_skip(x[perm], 1, prof)
        assert torch.equal(a, b)

    def test_deterministic(self):
        prof = tlb.tier_profile("moderate")
        x = torch.randn(2, 3, 128, 5, generator=torch.Generator().manual_seed(5))
        assert torch.equal(tlb.modulate_backbone(x, 1, prof), tlb.modulate_backbone(x, 1, prof))
