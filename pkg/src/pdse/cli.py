"""Command-line entry point.

Subcommands: degrade, train, enhance, evaluate, sde-check, grad-check.
Values resolve with precedence: flags > --set overrides > config file >
desk preset > defaults.  Exit codes: 0 success, 2 configuration error,
3 I/O failure, 4 numerical failure.  Errors print one machine-parsable line
``error: <code>: <message>`` on stderr.
"""

import argparse
import concurrent.futures
import csv
import os
import sys

import numpy as np
import torch

import pdse
from pdse import config as cfgmod
from pdse import pipeline as pl
from pdse import signal as sig
from pdse import tlb as tlbmod
from pdse.config import ConfigError
from pdse.degrade import default_specs, degrade, load_spec_file
from pdse.gradcheck import DEFAULT_TOLERANCE, SCENARIOS, finite_difference_check
from pdse.losses import LossWeights
from pdse.metrics import MetricReport, log_spectral_distance, si_sdr
from pdse.network import NetworkConfig, count_parameters
from pdse.sde import SdeSpec, forward_simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _build_parser():
    parser = argparse.ArgumentParser(prog="pdse", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pdse {pdse.__version__} (torch {torch.__version__})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides",
                       help="override one configuration key (repeatable)")
        p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("degrade", help="apply the seeded degradation catalogue to a directory of WAV files")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--spec", dest="spec_file",
                   help="JSON catalogue overrides (list of {kind, probability, params})")
    p.add_argument("--no-stubs", action="store_true",
                   help="drop unsupported catalogue rows instead of logging skip events")

    p = sub.add_parser("train", help="train the dual-branch model")
    common(p)
    p.add_argument("--out", dest="checkpoint", default="model.ckpt")
    p.add_argument("--log", dest="log_path", help="tab-separated per-step training log")
    p.add_argument("--synth-clips", type=int, default=0,
                   help="train on this many synthetic clips instead of train.clean_dir/noisy_dir")

    p = sub.add_parser("enhance", help="enhance WAV files with a trained checkpoint")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--checkpoint", default="model.ckpt")
    p.add_argument("--seed", type=int)
    p.add_argument("--tlb", choices=("off", "severe", "moderate", "high", "custom"))
    p.add_argument("--tlb-custom", metavar="s1l,s1h,b1l,b1h,s2l,s2h,b2l,b2h")
    p.add_argument("--quality-scores", metavar="FILE",
                   help="lines of 'path score'; selects a per-file tier from the baseline score")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("evaluate", help="score estimates against references")
    common(p)
    p.add_argument("--ref", dest="ref_dir", required=True)
    p.add_argument("--est", dest="est_dir", required=True)
    p.add_argument("--out", dest="report", default="report.csv")

    p = sub.add_parser("sde-check", help="compare closed-form SDE statistics against a forward simulation")
    common(p)
    p.add_argument("--kind", choices=("ouve", "bbed"))
    p.add_argument("--c", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--t-grid", type=int, default=100)
    p.add_argument("--mc-paths", type=int, default=1000)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="csv_out", help="CSV destination (default stdout)")

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--module", choices=sorted(SCENARIOS), required=True)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _resolved(args):
    try:
        file_settings = cfgmod.parse_file(args.config) if args.config else {}
        overrides = cfgmod.parse_overrides(args.overrides)
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, str(exc))
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    cfg = cfgmod.resolve(file_settings, overrides)
    if args.verbose:
        explicit = {**file_settings, **overrides}
        for key in sorted(explicit):
            print(f"config: {key} = {explicit[key]}", file=sys.stderr)
    return cfg


def _sde_from(cfg):
    return SdeSpec(kind=cfg["sde.kind"], gamma=cfg["sde.gamma"], c=cfg["sde.c"],
                   k=cfg["sde.k"], T=cfg["sde.T"], t_eps=cfg["sde.t_eps"])


def _net_from(cfg):
    return NetworkConfig(
        base_channels=cfg["net.base_channels"], heads=cfg["net.heads"],
        pred_bottleneck_blocks=cfg["net.pred_bottleneck"],
        diff_bottleneck_blocks=cfg["net.diff_bottleneck"],
        share_encoder_weights=cfg["net.share_encoder_weights"],
        ablation=cfg["net.ablation"], gate_pool=cfg["net.gate_pool"],
    )


def _stft_from(cfg):
    return sig.StftConfig(cfg["stft.fft_size"], cfg["stft.hop"], cfg["stft.window"])


def _train_from(cfg):
    return pl.TrainConfig(
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"], lr=cfg["train.lr"],
        lr_decay=cfg["train.lr_decay"], lr_decay_every=cfg["train.lr_decay_every"],
        clip_norm=cfg["train.clip_norm"],
        weights=LossWeights(cfg["train.lambda1"], cfg["train.lambda2"]),
        beta=cfg["signal.beta"], clip_seconds=cfg["train.clip_seconds"], seed=cfg["train.seed"],
    )


def _wav_files(directory):
    try:
        names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".wav"))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot list {directory}: {exc}")
    if not names:
        raise CliError(EXIT_IO, f"no .wav files in {directory}")
    return names


def _profile_for(cfg, args, baseline_score=None):
    tier = getattr(args, "tlb", None) or cfg["tlb.tier"]
    if baseline_score is not None:
        tier = tlbmod.tier_for_score(baseline_score)
    if tier == "off":
        return None
    if tier == "custom":
        text = getattr(args, "tlb_custom", None) or cfg["tlb.custom"]
        if not text:
            raise CliError(EXIT_CONFIG, "tlb tier 'custom' needs --tlb-custom or tlb.custom")
        try:
            return tlbmod.parse_custom(text)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
    return tlbmod.tier_profile(tier)


# -- subcommands ------------------------------------------------------------


def _cmd_degrade(args):
    cfg = _resolved(args)
    seed = args.seed if args.seed is not None else cfg["degrade.seed"]
    include_stubs = cfg["degrade.include_stubs"] and not args.no_stubs
    if args.spec_file:
        try:
            specs = load_spec_file(args.spec_file)
        except FileNotFoundError as exc:
            raise CliError(EXIT_IO, str(exc))
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
        if not include_stubs:
            specs = [s for s in specs if s.supported]
    else:
        specs = default_specs(include_stubs=include_stubs)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest_path = os.path.join(args.out_dir, "manifest.jsonl")
    names = _wav_files(args.in_dir)
    with open(manifest_path, "w", encoding="utf-8") as mfh:
        for index, name in enumerate(names):
            try:
                wave = sig.read_wav(os.path.join(args.in_dir, name))
            except (OSError, ValueError) as exc:
                raise CliError(EXIT_IO, f"{name}: {exc}")
            out, manifest = degrade(wave, specs, seed=seed, index=index)
            manifest.input = os.path.join(args.in_dir, name)
            manifest.output = os.path.join(args.out_dir, name)
            sig.write_wav(manifest.output, out)
            print(manifest.to_json(), file=mfh)
    print(f"degraded {len(names)} files -> {args.out_dir} (manifest: {manifest_path})")
    return EXIT_OK


def _cmd_train(args):
    cfg = _resolved(args)
    train_config = _train_from(cfg)
    state = pl.new_state(_net_from(cfg), _sde_from(cfg), _stft_from(cfg),
                         beta=cfg["signal.beta"], train_config=train_config,
                         seed=train_config.seed)
    if args.synth_clips:
        pairs = pl.make_synthetic_pairs(args.synth_clips, seed=train_config.seed)
    else:
        clean_dir, noisy_dir = cfg["train.clean_dir"], cfg["train.noisy_dir"]
        if not clean_dir or not noisy_dir:
            raise CliError(EXIT_CONFIG, "set train.clean_dir and train.noisy_dir (or use --synth-clips)")
        names = _wav_files(clean_dir)
        pairs = []
        for name in names:
            try:
                clean = sig.read_wav(os.path.join(clean_dir, name))
                noisy = sig.read_wav(os.path.join(noisy_dir, name))
            except (OSError, ValueError) as exc:
                raise CliError(EXIT_IO, f"{name}: {exc}")
            n = min(len(clean), len(noisy))
            pairs.append((sig.Waveform(clean.samples[:n]), sig.Waveform(noisy.samples[:n])))
    if args.verbose:
        print(f"parameters: {count_parameters(state.net):,}", file=sys.stderr)
    log_fh = open(args.log_path, "w", encoding="utf-8") if args.log_path else None
    progress = (lambda e, m: print(f"epoch {e}: mean total {m:.6f}", file=sys.stderr)) if args.verbose else None
    try:
        pl.train(state, pairs, train_config, log_fh=log_fh, progress=progress)
    except pl.TrainingDivergence as exc:
        raise CliError(EXIT_NUMERIC, f"training diverged: {exc}")
    finally:
        if log_fh:
            log_fh.close()
    pl.save_checkpoint(state, args.checkpoint)
    print(f"saved checkpoint: {args.checkpoint}")
    return EXIT_OK


def _load_scores(path):
    scores = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                name, value = line.rsplit(None, 1)
                scores[os.path.basename(name)] = float(value)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"bad quality-score file {path}: {exc}")
    return scores


def _cmd_enhance(args):
    cfg = _resolved(args)
    try:
        state = pl.load_checkpoint(args.checkpoint, _net_from(cfg), _sde_from(cfg),
                                   _stft_from(cfg), beta=cfg["signal.beta"])
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, str(exc))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc))
    seed = args.seed if args.seed is not None else cfg["infer.seed"]
    scores = _load_scores(args.quality_scores) if args.quality_scores else None
    base_profile = _profile_for(cfg, args) if scores is None else None
    workers = args.workers if args.workers is not None else cfg["run.workers"]
    os.makedirs(args.out_dir, exist_ok=True)
    names = _wav_files(args.in_dir)

    def one(index_name):
        index, name = index_name
        wave = sig.read_wav(os.path.join(args.in_dir, name))
        profile = base_profile
        if scores is not None:
            if name not in scores:
                raise CliError(EXIT_CONFIG, f"no quality score for {name}")
            profile = tlbmod.tier_profile(tlbmod.tier_for_score(scores[name]))
        icfg = pl.InferenceConfig(
            alpha=cfg["infer.alpha"], t_rs=cfg["infer.t_rs"], n_steps=cfg["infer.n_steps"],
            delta_t=cfg["infer.delta_t"], tlb=profile, seed=seed,
        )
        out = pl.enhance(wave, state, icfg, file_index=index)
        sig.write_wav(os.path.join(args.out_dir, name), out)
        return name

    jobs = list(enumerate(names))
    try:
        if workers > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(one, jobs))
        else:
            for job in jobs:
                one(job)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, str(exc))
    print(f"enhanced {len(names)} files -> {args.out_dir}")
    return EXIT_OK


def _cmd_evaluate(args):
    cfg = _resolved(args)
    stft_config = _stft_from(cfg)
    names = _wav_files(args.est_dir)
    report = MetricReport()
    for name in names:
        ref_path = os.path.join(args.ref_dir, name)
        if not os.path.exists(ref_path):
            raise CliError(EXIT_IO, f"missing reference for {name}")
        try:
            ref = sig.read_wav(ref_path)
            est = sig.read_wav(os.path.join(args.est_dir, name))
            report.add(name, si_sdr(est, ref), log_spectral_distance(est, ref, stft_config))
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_IO, f"{name}: {exc}")
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(
        f"evaluated {len(names)} files: mean si_sdr {report.mean_si_sdr:.2f} dB "
        f"(+/- {report.std_si_sdr:.2f}), mean lsd {report.mean_lsd:.2f} dB -> {args.report}"
    )
    return EXIT_OK


def _cmd_sde_check(args):
    cfg = _resolved(args)
    kind = args.kind or cfg["sde.kind"]
    spec = SdeSpec(
        kind=kind,
        gamma=args.gamma if args.gamma is not None else cfg["sde.gamma"],
        c=args.c if args.c is not None else cfg["sde.c"],
        k=args.k if args.k is not None else cfg["sde.k"],
        T=args.T if args.T is not None else cfg["sde.T"],
    )
    grid = np.linspace(spec.T / args.t_grid, spec.T, args.t_grid)
    results = forward_simulate(
        spec, args.x0, args.y, checkpoints=grid, n_paths=args.mc_paths,
        dt=1e-3, seed=args.seed, antithetic=True,
    )
    # Discrepancies are normalised by the largest closed-form second moment on
    # the grid, so rows near a vanishing mean or variance stay meaningful.
    scale = max(
        spec.mean(args.x0, args.y, float(t)) ** 2 + float(spec.variance(float(t)))
        for t in grid
    )
    rows = []
    for t in grid:
        mean_mc, var_mc = results[float(t)]
        mean_cl = spec.mean(args.x0, args.y, float(t))
        var_cl = float(spec.variance(float(t)))
        rel = (abs(mean_mc - mean_cl) + abs(var_mc - var_cl)) / scale
        rows.append((float(t), mean_cl, mean_mc, var_cl, var_mc, rel))
    out_fh = open(args.csv_out, "w", newline="", encoding="utf-8") if args.csv_out else sys.stdout
    try:
        writer = csv.writer(out_fh)
        writer.writerow(["t", "mean_closed", "mean_mc", "var_closed", "var_mc", "rel_err"])
        for row in rows:
            writer.writerow([f"{v:.8g}" for v in row])
    finally:
        if args.csv_out:
            out_fh.close()
    worst = max(r[-1] for r in rows)
    if args.verbose:
        print(f"worst rel_err {worst:.3e} over {len(rows)} rows", file=sys.stderr)
    return EXIT_OK


def _cmd_grad_check(args):
    _resolved(args)
    max_rel, rows = finite_difference_check(args.module, n_weights=args.samples, seed=args.seed)
    if args.verbose:
        for pname, flat, auto, fd, rel in rows:
            print(f"{pname}[{flat}]: autograd {auto:+.6e}  fd {fd:+.6e}  rel {rel:.3e}", file=sys.stderr)
    print(f"{args.module}: max rel err {max_rel:.3e} over {len(rows)} weights")
    if max_rel >= DEFAULT_TOLERANCE:
        raise CliError(EXIT_NUMERIC, f"gradient check failed: {max_rel:.3e} >= {DEFAULT_TOLERANCE}")
    return EXIT_OK


_COMMANDS = {
    "degrade": _cmd_degrade,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "evaluate": _cmd_evaluate,
    "sde-check": _cmd_sde_check,
    "grad-check": _cmd_grad_check,
}


def run(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {EXIT_CONFIG}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
