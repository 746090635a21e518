"""Scikit-learn style estimators wrapping the enhancement pipeline.

:class:`WaveformEnhancer` is fit on paired degraded / clean waveforms and
transforms degraded waveforms into enhanced ones; :class:`WaveformDegrader`
is a stateless transformer applying the seeded degradation catalogue.  Both
expose ``get_params`` / ``set_params`` so they compose with model selection
utilities; ``score`` reports mean SI-SDR in dB.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from pdse import pipeline as pl
from pdse import signal as sig
from pdse.degrade import default_specs, degrade
from pdse.losses import LossWeights
from pdse.metrics import si_sdr
from pdse.network import NetworkConfig
from pdse.sde import SdeSpec
from pdse.tlb import tier_profile


def _as_waveform(x, sample_rate):
    if isinstance(x, sig.Waveform):
        return x
    return sig.Waveform(np.asarray(x, dtype=np.float64), sample_rate)


def _validate_waveform_list(X, sample_rate, name="X"):
    if hasattr(X, "ndim") and getattr(X, "ndim", 1) == 2:
        X = list(X)
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError(f"{name} must be a non-empty list of 1-D waveforms")
    return [_as_waveform(x, sample_rate) for x in X]


class WaveformEnhancer(BaseEstimator):
    """Trainable dual-branch enhancer with a fit/transform interface.

    Parameters mirror the configuration keys; see the package README for the
    full reference.  ``transform`` (alias ``predict``) maps degraded waveforms
    (1-D arrays in [-1, 1] at 16 kHz) to enhanced arrays of equal length.
    """

    def __init__(
        self,
        base_channels=8,
        epochs=20,
        batch_size=4,
        lr=1e-3,
        clip_seconds=0.25,
        sde_kind="bbed",
        alpha=0.4,
        t_rs=0.12,
        n_steps=3,
        tlb_tier="off",
        beta=0.5,
        lambda1=0.5,
        lambda2=0.002,
        sample_rate=sig.DEFAULT_SAMPLE_RATE,
        seed=0,
    ):
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.clip_seconds = clip_seconds
        self.sde_kind = sde_kind
        self.alpha = alpha
        self.t_rs = t_rs
        self.n_steps = n_steps
        self.tlb_tier = tlb_tier
        self.beta = beta
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.sample_rate = sample_rate
        self.seed = seed

    def _train_config(self):
        return pl.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weights=LossWeights(self.lambda1, self.lambda2), beta=self.beta,
            clip_seconds=self.clip_seconds, seed=self.seed,
        )

    def _inference_config(self):
        profile = None if self.tlb_tier == "off" else tier_profile(self.tlb_tier)
        delta_t = self.t_rs / self.n_steps
        return pl.InferenceConfig(
            alpha=self.alpha, t_rs=self.t_rs, n_steps=self.n_steps,
            delta_t=delta_t, tlb=profile, seed=self.seed,
        )

    def fit(self, X, y):
        """Train on degraded waveforms X against clean references y."""
        noisy = _validate_waveform_list(X, self.sample_rate, "X")
        clean = _validate_waveform_list(y, self.sample_rate, "y")
        if len(noisy) != len(clean):
            raise ValueError(f"X and y differ in length: {len(noisy)} vs {len(clean)}")
        train_config = self._train_config()
        self.state_ = pl.new_state(
            NetworkConfig(base_channels=self.base_channels),
            SdeSpec(kind=self.sde_kind),
            beta=self.beta, train_config=train_config, seed=self.seed,
        )
        pairs = list(zip(clean, noisy))
        self.epoch_losses_ = pl.train(self.state_, pairs, train_config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("this WaveformEnhancer instance is not fitted yet")

    def transform(self, X):
        self._check_fitted()
        waves = _validate_waveform_list(X, self.sample_rate, "X")
        icfg = self._inference_config()
        return [
            pl.enhance(w, self.state_, icfg, file_index=i).samples
            for i, w in enumerate(waves)
        ]

    predict = transform

    def score(self, X, y):
        """Mean SI-SDR (dB) of the enhanced estimates against clean references."""
        clean = _validate_waveform_list(y, self.sample_rate, "y")
        enhanced = self.transform(X)
        values = [
            si_sdr(sig.Waveform(est, self.sample_rate), ref)
            for est, ref in zip(enhanced, clean)
        ]
        return float(np.mean(values))


class WaveformDegrader(BaseEstimator, TransformerMixin):
    """Stateless seeded degradation transformer over waveform lists."""

    def __init__(self, seed=0, include_stubs=True, sample_rate=sig.DEFAULT_SAMPLE_RATE):
        self.seed = seed
        self.include_stubs = include_stubs
        self.sample_rate = sample_rate

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        waves = _validate_waveform_list(X, self.sample_rate, "X")
        specs = default_specs(include_stubs=self.include_stubs)
        out = []
        for i, w in enumerate(waves):
            degraded, _ = degrade(w, specs, seed=self.seed, index=i)
            out.append(degraded.samples)
        return out
