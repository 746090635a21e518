import numpy as np
import pytest
import torch

from pdse.bands import (
    BandMergeDecoder,
    BandPlan,
    BandSplitEncoder,
    TimeEmbedding,
    freq_shuffle,
    freq_unshuffle,
    sinusoidal_time_embedding,
)


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestBandPlan:
    def test_default_compression(self):
        plan = BandPlan()
        assert plan.band_sizes == (64, 64, 128)
        assert plan.compressed_sizes == (64, 32, 32)
        assert plan.f_out == 128

    def test_invariants(self):
        with pytest.raises(ValueError):
            BandPlan(boundaries=(128, 64))
        with pytest.raises(ValueError):
            BandPlan(boundaries=(64, 300))
        with pytest.raises(ValueError):
            BandPlan(strides=(1, 2))
        with pytest.raises(ValueError):
            BandPlan(boundaries=(63, 128))  # low band 63 not divisible by... stride 1 ok, mid 65 % 2


class TestFreqShuffle:
    def test_bijection(self):
        x = torch.randn(2, 8, 16, 5, generator=_gen(1))
        assert torch.equal(freq_unshuffle(freq_shuffle(x, 4), 4), x)

    def test_shape(self):
        x = torch.randn(1, 6, 4, 3, generator=_gen(2))
        assert freq_shuffle(x, 2).shape == (1, 3, 8, 3)
        assert freq_unshuffle(freq_shuffle(x, 2), 2).shape == x.shape


class TestEncoder:
    def test_output_shape(self):
        enc = BandSplitEncoder(3, 8)
        x = torch.randn(2, 3, 256, 100, generator=_gen(3))
        assert enc(x).shape == (2, 8, 128, 100)

    def test_zero_input_with_zero_bias_gives_zero(self):
        enc = BandSplitEncoder(3, 8)
        with torch.no_grad():
            for conv in enc.band_convs:
                conv.bias.zero_()
            enc.fuse.bias.zero_()
        out = enc(torch.zeros(1, 3, 256, 10))
        assert torch.all(out == 0)

    def test_low_band_impulse_stays_in_low_rows_before_projection(self):
        # Perturbation trace: an impulse at bin 10 may only influence the
        # stride-1 low-band section (rows 0..63) of the pre-projection map.
        enc = BandSplitEncoder(1, 4)
        base = torch.zeros(1, 1, 256, 12)
        poke = base.clone()
        poke[0, 0, 10, 6] = 1.0
        delta = (enc.band_features(poke) - enc.band_features(base)).abs()
        assert delta[:, :, :64].sum() > 0
        assert torch.all(delta[:, :, 64:] == 0)

    def test_band_isolation_per_band(self):
        enc = BandSplitEncoder(1, 4)
        base = torch.zeros(1, 1, 256, 8)
        sections = {0: slice(0, 64), 1: slice(64, 96), 2: slice(96, 128)}
        bands = {0: slice(0, 64), 1: slice(64, 128), 2: slice(128, 256)}
        for b in range(3):
            poke = base.clone()
            poke[0, 0, bands[b].start + 5] = 1.0
            delta = (enc.band_features(poke) - enc.band_features(base)).abs()
            for other, section in sections.items():
                if other == b:
                    assert delta[:, :, section].sum() > 0
                else:
                    assert torch.all(delta[:, :, section] == 0)

    def test_wrong_f_rejected(self):
        enc = BandSplitEncoder(3, 8)
        with pytest.raises(ValueError):
            enc(torch.zeros(1, 3, 128, 10))

    def test_wrong_channels_rejected(self):
        with pytest.raises(ValueError):
            BandSplitEncoder(2, 8)
        enc = BandSplitEncoder(3, 8)
        with pytest.raises(ValueError):
            enc(torch.zeros(1, 1, 256, 10))

    def test_uniform_variant_shape(self):
        enc = BandSplitEncoder(3, 8, uniform=True)
        x = torch.randn(1, 3, 256, 10, generator=_gen(4))
        assert enc(x).shape == (1, 8, 88, 10)


class TestTimeInjection:
    def test_predictive_encoder_rejects_time(self):
        enc = BandSplitEncoder(3, 8)
        emb = torch.randn(1, 32, generator=_gen(5))
        with pytest.raises(ValueError, match="diffusion"):
            enc(torch.zeros(1, 3, 256, 4), emb)

    def test_diffusion_encoder_requires_time(self):
        enc = BandSplitEncoder(1, 8, diffusion=True, emb_dim=32)
        with pytest.raises(ValueError, match="time"):
            enc(torch.zeros(1, 1, 256, 4))

    def test_zero_projection_weights_leave_features_unchanged(self):
        enc = BandSplitEncoder(1, 8, diffusion=True, emb_dim=32)
        with torch.no_grad():
            enc.time_inject.weight.zero_()
            enc.time_inject.bias.zero_()
        x = torch.randn(1, 1, 256, 4, generator=_gen(6))
        emb = torch.randn(1, 32, generator=_gen(7))
        plain = enc.fuse(enc.band_features(x))
        assert torch.equal(enc(x, emb), plain)

    def test_injection_is_deterministic(self):
        trunk = TimeEmbedding(32)
        a = trunk(torch.tensor([0.37]))
        b = trunk(torch.tensor([0.37]))
        assert torch.equal(a, b)

    def test_embeddings_at_distant_times_differ(self):
        # Direct evaluation of the sinusoidal formula as the oracle.
        dim = 64
        e1 = sinusoidal_time_embedding(0.1, dim)[0]
        e2 = sinusoidal_time_embedding(0.9, dim)[0]
        half = dim // 2
        freqs = 10000.0 ** (-np.arange(half) / (half - 1))
        oracle1 = np.concatenate([np.sin(1000 * 0.1 * freqs), np.cos(1000 * 0.1 * freqs)])
        oracle2 = np.concatenate([np.sin(1000 * 0.9 * freqs), np.cos(1000 * 0.9 * freqs)])
        # float32 angles of several hundred radians round at ~1e-4
        assert np.allclose(e1.numpy(), oracle1, atol=5e-4)
        assert np.allclose(e2.numpy(), oracle2, atol=5e-4)
        differing = np.count_nonzero(np.abs(oracle1 - oracle2) > 0.1)
        assert differing >= dim // 2
        assert torch.count_nonzero((e1 - e2).abs() > 0.1) >= dim // 2

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            sinusoidal_time_embedding(0.5, 33)


class TestDecoder:
    def test_output_shape(self):
        dec = BandMergeDecoder(8, 2)
        q = torch.randn(2, 8, 128, 100, generator=_gen(8))
        assert dec(q).shape == (2, 2, 256, 100)

    def test_single_channel_output(self):
        dec = BandMergeDecoder(8, 1)
        q = torch.randn(1, 8, 128, 7, generator=_gen(9))
        assert dec(q).shape == (1, 1, 256, 7)

    def test_wrong_f_rejected(self):
        dec = BandMergeDecoder(8, 2)
        with pytest.raises(ValueError):
            dec(torch.zeros(1, 8, 64, 5))

    def test_uniform_variant_restores_full_rows(self):
        dec = BandMergeDecoder(8, 2, uniform=True)
        q = torch.randn(1, 8, 88, 6, generator=_gen(10))
        assert dec(q).shape == (1, 2, 256, 6)

    def test_codec_composition_is_differentiable(self):
        enc = BandSplitEncoder(3, 4)
        dec = BandMergeDecoder(4, 2)
        x = torch.randn(1, 3, 256, 8, generator=_gen(11), requires_grad=True)
        out = dec(enc(x))
        assert out.shape == (1, 2, 256, 8)
        out.sum().backward()
        assert x.grad is not None and torch.all(torch.isfinite(x.grad))
        for p in list(enc.parameters()) + list(dec.parameters()):
            assert p.grad is not None and torch.all(torch.isfinite(p.grad))
