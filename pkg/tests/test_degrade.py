import numpy as np
import pytest

from pdse import degrade as dg
from pdse.signal import Waveform


def _clip(seed=0, n=4000):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 16000
    x = 0.5 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 1320 * t)
    return Waveform(x + 0.01 * rng.standard_normal(n))


class TestCatalogue:
    def test_documented_probabilities(self):
        expected = {
            "additive_noise": 0.50, "white_noise": 0.60, "reverberation": 0.20,
            "bandpass": 0.20, "highpass": 0.70, "lowpass": 0.70, "bit_depth": 0.10,
            "dynamic_expand": 1.00, "gain": 0.10, "hard_clip": 0.25,
            "post_clip_gain": 0.25, "resample": 0.40, "gsm_compression": 0.25,
            "speaker_gain": 0.20, "nearend_gain": 0.20, "phaser": 0.02,
            "tanh_distortion": 0.01,
        }
        specs = dg.default_specs()
        assert {s.kind: s.probability for s in specs} == expected

    def test_stub_rows_are_marked(self):
        stubs = {s.kind for s in dg.default_specs() if not s.supported}
        assert stubs == {"reverberation", "gsm_compression"}
        assert not any(
            s.kind in stubs for s in dg.default_specs(include_stubs=False)
        )


class TestAddNoiseAtSnr:
    def test_zero_db_matches_powers(self):
        x = _clip()
        noise = np.random.default_rng(1).standard_normal(len(x))
        out = dg.add_noise_at_snr(x, noise, 0.0)
        added = out.samples - x.samples
        p_sig = np.mean(x.samples**2)
        p_noise = np.mean(added**2)
        assert p_noise == pytest.approx(p_sig, rel=1e-9)

    def test_huge_snr_is_near_identity(self):
        x = _clip()
        noise = np.random.default_rng(2).standard_normal(len(x))
        out = dg.add_noise_at_snr(x, noise, 120.0)
        assert np.abs(out.samples - x.samples).max() < 1e-5

    def test_measured_snr_matches_request(self):
        x = _clip()
        noise = np.random.default_rng(3).standard_normal(len(x))
        for snr in (-5.0, 0.0, 7.3, 15.0):
            out = dg.add_noise_at_snr(x, noise, snr)
            added = out.samples - x.samples
            measured = 10 * np.log10(np.mean(x.samples**2) / np.mean(added**2))
            assert measured == pytest.approx(snr, abs=1e-6)

    def test_silent_noise_rejected(self):
        with pytest.raises(ValueError, match="silent"):
            dg.add_noise_at_snr(_clip(), np.zeros(4000), 5.0)


class TestHardClip:
    def test_identity_above_peak(self):
        x = _clip()
        peak = np.abs(x.samples).max()
        out = dg.hard_clip(x, min(1.0, peak + 0.05))
        assert np.array_equal(out.samples, x.samples)

    def test_constant_signal(self):
        out = dg.hard_clip(Waveform(np.ones(100)), 0.5)
        assert np.all(out.samples == 0.5)

    def test_output_bounded(self):
        out = dg.hard_clip(_clip(), 0.3)
        assert np.abs(out.samples).max() <= 0.3


class TestBitDepth:
    def test_24_bits_on_16bit_grid_within_half_step(self):
        grid = np.arange(-32768, 32768, 97, dtype=np.float64) / 32768.0
        out = dg.reduce_bit_depth(Waveform(grid), 24)
        assert np.abs(out.samples - grid).max() <= 2.0**-24 + 1e-15

    def test_error_bounded_by_half_step(self):
        x = _clip()
        for bits in (8, 12, 16):
            out = dg.reduce_bit_depth(x, bits)
            assert np.abs(out.samples - x.samples).max() <= 2.0**-bits + 1e-15

    def test_idempotent(self):
        x = _clip()
        once = dg.reduce_bit_depth(x, 10)
        twice = dg.reduce_bit_depth(once, 10)
        assert np.array_equal(once.samples, twice.samples)

    def test_range_validation(self):
        with pytest.raises(ValueError):
            dg.reduce_bit_depth(_clip(), 7)
        with pytest.raises(ValueError):
            dg.reduce_bit_depth(_clip(), 25)


class TestFilters:
    def test_stable_on_white_noise(self):
        rng = np.random.default_rng(4)
        x = Waveform(rng.uniform(-1, 1, 16000))
        for out in (
            dg.highpass(x, 100.0),
            dg.lowpass(x, 4000.0),
            dg.bandpass(x, 200.0, 3500.0),
        ):
            assert np.all(np.isfinite(out.samples))
            assert np.abs(out.samples).max() < 10.0

    def test_bandpass_cutoff_order(self):
        with pytest.raises(ValueError):
            dg.bandpass(_clip(), 3000.0, 200.0)

    def test_lowpass_attenuates_high_tone(self):
        t = np.arange(16000) / 16000
        tone = Waveform(0.5 * np.sin(2 * np.pi * 6000 * t))
        out = dg.lowpass(tone, 1000.0)
        assert np.sqrt(np.mean(out.samples**2)) < 0.05 * np.sqrt(np.mean(tone.samples**2))


class TestResample:
    @pytest.mark.parametrize("algo", dg.RESAMPLE_ALGOS)
    def test_length_preserved(self, algo):
        x = _clip()
        out = dg.resample_distort(x, 8000, algo)
        assert len(out) == len(x)
        assert np.all(np.isfinite(out.samples))

    def test_upsampling_rate_is_mild(self):
        x = _clip()
        out = dg.resample_distort(x, 32000, "polyphase")
        assert np.abs(out.samples - x.samples).mean() < 0.05

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            dg.resample_distort(_clip(), 8000, "sinc_best")


class TestOtherOps:
    def test_dynamic_expand_widens_range(self):
        x = Waveform(np.array([0.1, 0.5, 1.0, -0.1, -1.0]))
        out = dg.dynamic_expand(x, 2.0)
        assert np.allclose(out.samples, np.sign(x.samples) * x.samples**2)

    def test_gain(self):
        x = _clip()
        out = dg.apply_gain(x, 6.0)
        assert np.allclose(out.samples, x.samples * 10 ** (6 / 20))

    def test_tanh_is_bounded(self):
        out = dg.tanh_distort(Waveform(np.linspace(-1, 1, 100) * 5), 4.0)
        assert np.abs(out.samples).max() <= 1.0

    def test_phaser_preserves_energy_scale(self):
        x = _clip()
        out = dg.phaser(x, [500.0, 1500.0])
        assert 0.1 < np.sqrt(np.mean(out.samples**2)) / np.sqrt(np.mean(x.samples**2)) < 2.0

    def test_speaker_gain_envelope(self):
        x = Waveform(np.ones(16000))
        out = dg.speaker_gain(x, depth=0.5, rate_hz=1.0)
        assert out.samples.max() == pytest.approx(1.5, abs=1e-3)
        assert out.samples.min() == pytest.approx(0.5, abs=1e-3)

    def test_nearend_gain_steps(self):
        x = Waveform(np.ones(1000))
        out = dg.nearend_gain(x, gain_db=6.0, position=0.5)
        assert out.samples[0] == 1.0
        assert out.samples[-1] == pytest.approx(10 ** (6 / 20))


class TestDegrade:
    def test_zero_probability_specs_are_identity(self):
        specs = [dg.DistortionSpec("white_noise", 0.0, (("snr_db", 0.0, 15.0),))]
        x = _clip()
        out, manifest = dg.degrade(x, specs, seed=1)
        assert np.array_equal(out.samples, x.samples)
        assert manifest.applied == []

    def test_peak_normalised(self):
        rng = np.random.default_rng(5)
        x = Waveform(rng.uniform(-0.99, 0.99, 8000))
        for seed in range(5):
            out, _ = dg.degrade(x, seed=seed)
            assert np.abs(out.samples).max() <= 1.0 + 1e-12

    def test_deterministic_and_replayable(self):
        x = _clip()
        for seed in (0, 7):
            out1, manifest = dg.degrade(x, seed=seed, index=3)
            out2, _ = dg.degrade(x, seed=seed, index=3)
            assert np.array_equal(out1.samples, out2.samples)
            replayed = dg.replay(manifest, x)
            assert np.array_equal(replayed.samples, out1.samples)

    def test_different_indices_differ(self):
        x = _clip()
        a, _ = dg.degrade(x, seed=0, index=0)
        b, _ = dg.degrade(x, seed=0, index=1)
        assert not np.array_equal(a.samples, b.samples)

    def test_manifest_json_round_trip(self):
        x = _clip()
        _, manifest = dg.degrade(x, seed=2, index=5)
        manifest.input, manifest.output = "in.wav", "out.wav"
        back = dg.DegradationManifest.from_json(manifest.to_json())
        assert back == manifest

    def test_stub_rows_log_skips(self):
        specs = [dg.DistortionSpec("gsm_compression", 1.0, (), supported=False)]
        x = _clip()
        out, manifest = dg.degrade(x, specs, seed=0)
        assert np.array_equal(out.samples, x.samples)
        assert manifest.applied == [{"kind": "gsm_compression", "skipped": True}]

    def test_custom_spec_file(self, tmp_path):
        import json

        path = tmp_path / "spec.json"
        path.write_text(json.dumps([
            {"kind": "white_noise", "probability": 1.0, "params": {"snr_db": [5.0, 5.0]}},
            {"kind": "hard_clip", "probability": 0.0},
        ]))
        specs = dg.load_spec_file(path)
        by_kind = {s.kind: s for s in specs}
        assert by_kind["white_noise"].probability == 1.0
        assert dict((n, (lo, hi)) for n, lo, hi in by_kind["white_noise"].params) == {
            "snr_db": (5.0, 5.0)
        }
        assert by_kind["hard_clip"].probability == 0.0
        assert by_kind["lowpass"].probability == 0.70  # untouched rows keep defaults

    def test_spec_file_rejects_unknown_kind(self, tmp_path):
        import json

        path = tmp_path / "spec.json"
        path.write_text(json.dumps([{"kind": "vinyl_crackle", "probability": 0.5}]))
        with pytest.raises(ValueError, match="vinyl_crackle"):
            dg.load_spec_file(path)

    def test_spec_file_rejects_unknown_param(self, tmp_path):
        import json

        path = tmp_path / "spec.json"
        path.write_text(json.dumps([{"kind": "white_noise", "params": {"color": [0, 1]}}]))
        with pytest.raises(ValueError, match="color"):
            dg.load_spec_file(path)

    def test_application_rates_small_sample(self):
        # Coarse rate check; the acceptance suite runs the full-scale version.
        n = 800
        x = _clip(n=1500)
        counts = {s.kind: 0 for s in dg.default_specs()}
        for i in range(n):
            _, manifest = dg.degrade(x, seed=123, index=i)
            for entry in manifest.applied:
                if entry["kind"] in counts:
                    counts[entry["kind"]] += 1
        for spec in dg.default_specs():
            rate = counts[spec.kind] / n
            sigma = np.sqrt(spec.probability * (1 - spec.probability) / n)
            assert abs(rate - spec.probability) <= max(4 * sigma, 0.01), spec.kind
