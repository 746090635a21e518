"""Training and inference orchestration.

Training jointly optimises both branches: the predictive branch against
magnitude / complex / phase objectives and the diffusion branch against the
denoising score-matching objective, all in the compressed-magnitude domain.

Inference follows a partial reverse refinement: the predictive estimate seeds
the diffusion state at a reduced start time, a short Euler-Maruyama chain
refines it (optionally recalibrated per level), the non-negative deterministic
update of the last step is fused with the predictive magnitude, and the result
is reconstructed with the predictive phase.

All randomness derives from explicit seeds through a counter-based splitting
scheme: draw ``k`` of file ``i`` under root seed ``s`` uses the generator
seeded by ``(s, i, k)``, so changing the number of reverse steps never
perturbs earlier draws.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from pdse import signal as sig
from pdse.checkpoint import CheckpointError, load_blobs, save_blobs
from pdse.degrade import add_noise_at_snr, lowpass
from pdse.losses import LossReport, LossWeights, loss_comp, loss_mag, loss_phase, loss_score, total_loss
from pdse.network import DualBranchNet, NetworkConfig
from pdse.sde import SdeSpec
from pdse.tlb import TlbProfile


class TrainingDivergence(FloatingPointError):
    """Raised when a loss component stops being finite."""


@dataclass(frozen=True)
class InferenceConfig:
    alpha: float = 0.4
    t_rs: float = 0.12
    n_steps: int = 3
    delta_t: float = 0.04
    tlb: TlbProfile = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if abs(self.n_steps * self.delta_t - self.t_rs) > 1e-9:
            raise ValueError(
                f"n_steps * delta_t must equal t_rs "
                f"({self.n_steps} * {self.delta_t} != {self.t_rs})"
            )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.97
    lr_decay_every: int = 2
    clip_norm: float = 5.0
    weights: LossWeights = LossWeights()
    beta: float = sig.DEFAULT_COMPRESSION
    clip_seconds: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.clip_norm <= 0 or self.clip_seconds <= 0:
            raise ValueError("lr, clip_norm and clip_seconds must be positive")


@dataclass
class ModelState:
    """Network weights plus optimiser state and the configs that shaped them."""

    net: DualBranchNet
    sde_spec: SdeSpec
    net_config: NetworkConfig
    stft_config: sig.StftConfig
    beta: float
    optimizer: torch.optim.Optimizer = None
    step: int = 0
    epoch: int = 0
    rng: torch.Generator = None

    def config_digest(self):
        parts = [
            self.net_config.digest(),
            self.sde_spec.kind,
            repr(self.sde_spec.gamma),
            repr(self.sde_spec.c),
            repr(self.sde_spec.k),
            repr(self.sde_spec.T),
            repr(self.beta),
            str(self.stft_config.fft_size),
            str(self.stft_config.hop),
            self.stft_config.window,
        ]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()


def new_state(
    net_config: NetworkConfig = NetworkConfig(),
    sde_spec: SdeSpec = SdeSpec(),
    stft_config: sig.StftConfig = sig.StftConfig(),
    beta: float = sig.DEFAULT_COMPRESSION,
    train_config: TrainConfig = None,
    seed: int = 0,
) -> ModelState:
    torch.manual_seed(seed)
    net = DualBranchNet(net_config)
    state = ModelState(net, sde_spec, net_config, stft_config, beta)
    if train_config is not None:
        state.optimizer = torch.optim.AdamW(net.parameters(), lr=train_config.lr)
        state.rng = torch.Generator().manual_seed(train_config.seed)
    return state


def noise_generator(seed, *counters):
    """Deterministic per-(file, draw) generator for the splitting scheme."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(c) for c in (seed, *counters))))


# -- preprocessing ----------------------------------------------------------


def _compressed_planes(wave: sig.Waveform, stft_config, beta):
    spec = sig.stft(wave, stft_config)
    real, imag, mag = sig.compress_complex(spec, beta)
    return spec, sig.drop_nyquist(real), sig.drop_nyquist(imag), sig.drop_nyquist(mag)


def pair_tensors(clean: sig.Waveform, noisy: sig.Waveform, stft_config, beta):
    """Network-ready tensors for one (clean, degraded) pair."""
    _, xr, xi, xm = _compressed_planes(clean, stft_config, beta)
    _, yr, yi, ym = _compressed_planes(noisy, stft_config, beta)
    as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
    return {
        "y3": torch.stack([as_t(yr), as_t(yi), as_t(ym)]),
        "x_ri": torch.stack([as_t(xr), as_t(xi)]),
        "x_m": as_t(xm)[None],
        "y_m": as_t(ym)[None],
    }


# -- training ---------------------------------------------------------------


def train_step(state: ModelState, batch, config: TrainConfig) -> LossReport:
    """One joint optimisation step over a preprocessed batch.

    Draws a per-sample diffusion time and noise, perturbs the clean compressed
    magnitude, and backpropagates the weighted objective with gradient-norm
    clipping.  Deterministic given (state RNG, batch).
    """
    if state.optimizer is None or state.rng is None:
        raise ValueError("state was not created for training")
    net, spec = state.net, state.sde_spec
    y3, x_ri, x_m, y_m = batch["y3"], batch["x_ri"], batch["x_m"], batch["y_m"]
    b = y3.shape[0]

    xri_hat, features = net.predictive_forward(y3)
    mag_hat = torch.sqrt(xri_hat[:, 0] ** 2 + xri_hat[:, 1] ** 2 + 1e-12)[:, None]
    l_mag = loss_mag(mag_hat, x_m)
    l_comp = loss_comp(xri_hat, x_ri)
    phase_hat = torch.atan2(xri_hat[:, 1], xri_hat[:, 0])
    phase_ref = torch.atan2(x_ri[:, 1], x_ri[:, 0])
    ip, gd, iaf, l_pha = loss_phase(phase_hat, phase_ref)

    t_draw = torch.rand(b, generator=state.rng)
    t = spec.t_eps + (spec.T - spec.t_eps) * t_draw
    t_np = t.numpy().astype(np.float64)
    w0, wy = spec.mean_weights(t_np)
    sigma = spec.std(t_np)
    shape = (b, 1, 1, 1)
    w0_t = torch.from_numpy(np.ascontiguousarray(w0, dtype=np.float32)).view(shape)
    wy_t = torch.from_numpy(np.ascontiguousarray(wy, dtype=np.float32)).view(shape)
    sig_t = torch.from_numpy(np.ascontiguousarray(sigma, dtype=np.float32)).view(shape)
    z = torch.randn(x_m.shape, generator=state.rng)
    x_t = w0_t * x_m + wy_t * y_m + sig_t * z

    s_theta = net.diffusion_forward(x_t, t, features)
    l_score = loss_score(s_theta, z, sig_t)

    try:
        total = total_loss(l_mag, l_comp, l_pha, l_score, config.weights)
    except FloatingPointError as exc:
        raise TrainingDivergence(str(exc)) from exc

    state.optimizer.zero_grad()
    total.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(net.parameters(), config.clip_norm)
    if not torch.isfinite(grad_norm):
        raise TrainingDivergence(f"non-finite gradient norm at step {state.step + 1}")
    state.optimizer.step()
    state.step += 1

    item = lambda v: float(v.detach())
    return LossReport(
        mag=item(l_mag), comp=item(l_comp), ip=item(ip), gd=item(gd),
        iaf=item(iaf), pha=item(l_pha), score=item(l_score), total=item(total),
        grad_norm=float(grad_norm), lr=state.optimizer.param_groups[0]["lr"],
        step=state.step,
    )


def _epoch_lr(base_lr, epoch, decay, every):
    return base_lr * decay ** (epoch // every)


def train(state: ModelState, pairs, config: TrainConfig, log_fh=None, progress=None):
    """Train over (clean, degraded) waveform pairs; returns per-epoch mean totals.

    Each epoch takes one deterministic random crop of ``clip_seconds`` per
    pair, shuffles, batches, and steps.  The learning rate decays by
    ``lr_decay`` every ``lr_decay_every`` epochs.
    """
    if log_fh is not None:
        print(LossReport.LOG_HEADER, file=log_fh)
    crop_len = int(round(config.clip_seconds * sig.DEFAULT_SAMPLE_RATE))
    epoch_means = []
    for epoch in range(config.epochs):
        lr = _epoch_lr(config.lr, epoch, config.lr_decay, config.lr_decay_every)
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        order_rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch)))
        order = order_rng.permutation(len(pairs))
        totals = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            tensors = []
            for i in idx:
                clean, noisy = pairs[i]
                n = len(clean)
                if n > crop_len:
                    off = int(order_rng.integers(0, n - crop_len + 1))
                    clean = sig.Waveform(clean.samples[off : off + crop_len], clean.sample_rate)
                    noisy = sig.Waveform(noisy.samples[off : off + crop_len], noisy.sample_rate)
                elif n < crop_len:
                    # shorter clips are zero-padded so batches stack
                    pad = crop_len - n
                    clean = sig.Waveform(np.pad(clean.samples, (0, pad)), clean.sample_rate)
                    noisy = sig.Waveform(np.pad(noisy.samples, (0, pad)), noisy.sample_rate)
                tensors.append(pair_tensors(clean, noisy, state.stft_config, state.beta))
            batch = {k: torch.stack([t[k] for t in tensors]) for k in tensors[0]}
            report = train_step(state, batch, config)
            totals.append(report.total)
            if log_fh is not None:
                print(report.log_line(), file=log_fh)
        state.epoch = epoch + 1
        epoch_means.append(float(np.mean(totals)))
        if progress is not None:
            progress(epoch + 1, epoch_means[-1])
    return epoch_means


# -- inference --------------------------------------------------------------


def reverse_refine(x_init, y_m, score_fn, spec: SdeSpec, config: InferenceConfig, noise_fn):
    """Partial reverse chain from t_rs; returns the final deterministic update.

    ``score_fn(x, t)`` evaluates the score estimate (exactly ``n_steps``
    times); ``noise_fn(k)`` supplies the k-th standard-normal draw.  The last
    step's stochastic kick is never consumed, matching the convention that the
    output magnitude is the deterministic part of the final update.
    """
    x = x_init
    x_mean = x_init
    for i in range(config.n_steps):
        t_i = config.t_rs - i * config.delta_t
        score = score_fn(x, t_i)
        noise = noise_fn(i + 1) if i < config.n_steps - 1 else torch.zeros_like(x)
        x, x_mean = spec.reverse_step(x, y_m, t_i, config.delta_t, score, noise)
    return x_mean


def _spectral_enhance(y_wave: sig.Waveform, state: ModelState, config: InferenceConfig, file_index=0):
    """Run the full pipeline up to the fused compressed magnitude.

    Returns (fused, pred_mag, diff_mag, phase, spec) where the first three are
    compressed-domain [1, 1, F, T] tensors and `spec` is the analysis
    spectrogram of the input (for framing metadata).
    """
    net, sde_spec = state.net, state.sde_spec
    y_spec, yr, yi, ym = _compressed_planes(y_wave, state.stft_config, state.beta)
    as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
    y3 = torch.stack([as_t(yr), as_t(yi), as_t(ym)])[None]
    y_m = as_t(ym)[None, None]

    with torch.no_grad():
        xri, features = net.predictive_forward(y3)
        pred_mag = torch.sqrt(xri[:, 0] ** 2 + xri[:, 1] ** 2)[:, None]
        phase = torch.atan2(xri[:, 1], xri[:, 0])[:, None]

        def noise_fn(k):
            gen = noise_generator(config.seed, file_index, k)
            return torch.from_numpy(
                gen.standard_normal(tuple(y_m.shape)).astype(np.float32)
            )

        x_init = sde_spec.mean(pred_mag, y_m, config.t_rs) + float(
            sde_spec.std(config.t_rs)
        ) * noise_fn(0)

        def score_fn(x, t):
            return net.diffusion_forward(x, t, features, config.tlb)

        x_mean = reverse_refine(x_init, y_m, score_fn, sde_spec, config, noise_fn)
        diff_mag = torch.clamp(x_mean, min=0.0)
        fused = config.alpha * pred_mag + (1.0 - config.alpha) * diff_mag
    return fused, pred_mag, diff_mag, phase, y_spec


def _reconstruct(mag_compressed, phase, y_spec, state) -> sig.Waveform:
    mag = mag_compressed[0, 0].numpy().astype(np.float64)
    phi = phase[0, 0].numpy().astype(np.float64)
    mag_full = sig.restore_nyquist(mag ** (1.0 / state.beta))
    phi_full = sig.restore_nyquist(phi)
    phase_spec = sig.ComplexSpectrogram(
        np.exp(1j * phi_full), y_spec.config, y_spec.original_length
    )
    return sig.reconstruct(sig.MagnitudeSpectrogram(mag_full), phase_spec)


def enhance(y_wave: sig.Waveform, state: ModelState, config: InferenceConfig = InferenceConfig(), file_index=0) -> sig.Waveform:
    """Enhance one degraded waveform; deterministic given (seed, input, state)."""
    fused, _, _, phase, y_spec = _spectral_enhance(y_wave, state, config, file_index)
    return _reconstruct(fused, phase, y_spec, state)


def predictive_only(y_wave: sig.Waveform, state: ModelState) -> sig.Waveform:
    """Reconstruction from the predictive branch alone (no sampling involved)."""
    net = state.net
    y_spec, yr, yi, ym = _compressed_planes(y_wave, state.stft_config, state.beta)
    as_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))
    y3 = torch.stack([as_t(yr), as_t(yi), as_t(ym)])[None]
    with torch.no_grad():
        xri, _ = net.predictive_forward(y3)
        pred_mag = torch.sqrt(xri[:, 0] ** 2 + xri[:, 1] ** 2)[:, None]
        phase = torch.atan2(xri[:, 1], xri[:, 0])[:, None]
    return _reconstruct(pred_mag, phase, y_spec, state)


# -- checkpointing ----------------------------------------------------------


def save_checkpoint(state: ModelState, path, include_optimizer=True):
    blobs = [(f"model.{k}", v) for k, v in state.net.state_dict().items()]
    if include_optimizer and state.optimizer is not None:
        names = [n for n, _ in state.net.named_parameters()]
        params = [p for _, p in state.net.named_parameters()]
        opt_state = state.optimizer.state
        for name, p in zip(names, params):
            entry = opt_state.get(p)
            if not entry:
                continue
            for key in sorted(entry):
                blobs.append((f"opt.{name}.{key}", entry[key]))
    save_blobs(path, state.config_digest(), state.step, blobs)


def load_checkpoint(
    path,
    net_config: NetworkConfig = NetworkConfig(),
    sde_spec: SdeSpec = SdeSpec(),
    stft_config: sig.StftConfig = sig.StftConfig(),
    beta: float = sig.DEFAULT_COMPRESSION,
    train_config: TrainConfig = None,
) -> ModelState:
    state = new_state(net_config, sde_spec, stft_config, beta, train_config)
    _, step, blobs = load_blobs(path, expected_digest_hex=state.config_digest())
    state.step = step

    model_blobs = {k[len("model."):]: v for k, v in blobs.items() if k.startswith("model.")}
    expected = set(state.net.state_dict())
    if set(model_blobs) != expected:
        raise CheckpointError(f"{path}: checkpoint weight names do not match the model")
    state.net.load_state_dict(
        {k: torch.from_numpy(v.copy()) for k, v in model_blobs.items()}
    )

    if state.optimizer is not None:
        opt_blobs = {k: v for k, v in blobs.items() if k.startswith("opt.")}
        if opt_blobs:
            for name, p in state.net.named_parameters():
                entry = {}
                for key in ("step", "exp_avg", "exp_avg_sq"):
                    blob = opt_blobs.get(f"opt.{name}.{key}")
                    if blob is not None:
                        tens = torch.from_numpy(blob.copy())
                        entry[key] = tens.reshape(p.shape) if key != "step" else tens.reshape(())
                if entry:
                    state.optimizer.state[p] = entry
    return state


# -- synthetic desk corpus ---------------------------------------------------


def synthesize_clip(rng, n_samples=16000, sample_rate=sig.DEFAULT_SAMPLE_RATE) -> sig.Waveform:
    """Sum of 2-4 random sinusoids (100-3000 Hz) over a quiet band-limited noise floor."""
    n_sines = int(rng.integers(2, 5))
    t = np.arange(n_samples) / sample_rate
    x = np.zeros(n_samples)
    for _ in range(n_sines):
        f = rng.uniform(100.0, 3000.0)
        a = rng.uniform(0.3, 1.0)
        ph = rng.uniform(0.0, 2.0 * np.pi)
        x += a * np.sin(2.0 * np.pi * f * t + ph)
    floor = lowpass(sig.Waveform(rng.standard_normal(n_samples), sample_rate), rng.uniform(2000.0, 6000.0)).samples
    floor *= np.sqrt(np.mean(x**2)) * 10 ** (-30 / 20) / max(np.sqrt(np.mean(floor**2)), 1e-12)
    x = x + floor
    x *= 0.7 / np.max(np.abs(x))
    return sig.Waveform(x, sample_rate)


def make_synthetic_pairs(n_clips=200, seed=0, snr_range=(0.0, 10.0), n_samples=16000):
    """In-memory (clean, degraded) pairs: clips plus white noise at a drawn SNR."""
    pairs = []
    for i in range(n_clips):
        rng = noise_generator(seed, i)
        clean = synthesize_clip(rng, n_samples)
        snr = rng.uniform(*snr_range)
        noisy = add_noise_at_snr(clean, rng.standard_normal(n_samples), snr)
        peak = float(np.max(np.abs(noisy.samples)))
        if peak > 1.0:
            noisy = sig.Waveform(noisy.samples / peak, noisy.sample_rate)
            clean = sig.Waveform(clean.samples / peak, clean.sample_rate)
        pairs.append((clean, noisy))
    return pairs


def write_corpus(out_dir, pairs):
    """Write pairs as clean/NNN.wav and noisy/NNN.wav under out_dir."""
    import os

    clean_dir = os.path.join(out_dir, "clean")
    noisy_dir = os.path.join(out_dir, "noisy")
    os.makedirs(clean_dir, exist_ok=True)
    os.makedirs(noisy_dir, exist_ok=True)
    for i, (clean, noisy) in enumerate(pairs):
        name = f"{i:04d}.wav"
        sig.write_wav(os.path.join(clean_dir, name), clean)
        sig.write_wav(os.path.join(noisy_dir, name), noisy)
