"""Flat key = value configuration with a fixed, validated schema.

Files are UTF-8 text, one ``key = value`` per line; ``#`` starts a comment.
Keys are namespaced (``sde.kind``, ``infer.alpha``, ``tlb.tier``,
``train.epochs``, ...).  Unknown keys are errors.  Effective values resolve
with precedence: command-line overrides > file > desk preset (when enabled) >
defaults.
"""


class ConfigError(ValueError):
    pass


def _bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ConfigError(f"expected one of {options}, got {text!r}")
        return text

    return parse


# key -> (parser, default)
SCHEMA = {
    "stft.fft_size": (int, 512),
    "stft.hop": (int, 128),
    "stft.window": (_choice("hann"), "hann"),
    "signal.beta": (float, 0.5),
    "sde.kind": (_choice("ouve", "bbed"), "bbed"),
    "sde.c": (float, 0.51),
    "sde.k": (float, 2.6),
    "sde.gamma": (float, 1.5),
    "sde.T": (float, 0.999),
    "sde.t_eps": (float, 0.03),
    "net.base_channels": (int, 24),
    "net.heads": (int, 4),
    "net.pred_bottleneck": (int, 1),
    "net.diff_bottleneck": (int, 2),
    "net.share_encoder_weights": (_bool, False),
    "net.ablation": (_choice("full", "uniform_codec", "no_global_gate", "dual_path_local"), "full"),
    "net.gate_pool": (int, 4),
    "train.epochs": (int, 200),
    "train.batch_size": (int, 32),
    "train.lr": (float, 1e-3),
    "train.lr_decay": (float, 0.97),
    "train.lr_decay_every": (int, 2),
    "train.clip_norm": (float, 5.0),
    "train.lambda1": (float, 0.5),
    "train.lambda2": (float, 0.002),
    "train.clip_seconds": (float, 1.0),
    "train.seed": (int, 0),
    "train.clean_dir": (str, ""),
    "train.noisy_dir": (str, ""),
    "train.desk": (_bool, False),
    "infer.alpha": (float, 0.4),
    "infer.t_rs": (float, 0.12),
    "infer.n_steps": (int, 3),
    "infer.delta_t": (float, 0.04),
    "infer.seed": (int, 0),
    "tlb.tier": (_choice("off", "severe", "moderate", "high", "custom"), "off"),
    "tlb.custom": (str, ""),
    "degrade.seed": (int, 0),
    "degrade.include_stubs": (_bool, True),
    "run.workers": (int, 1),
}

# Values the desk profile substitutes for keys the user did not set explicitly.
DESK_PRESET = {
    "net.base_channels": 8,
    "train.epochs": 20,
    "train.batch_size": 4,
    "train.clip_seconds": 0.25,
}


def defaults():
    return {key: default for key, (_, default) in SCHEMA.items()}


def parse_value(key, text):
    if key not in SCHEMA:
        raise ConfigError(f"unknown configuration key: {key!r}")
    parser, _ = SCHEMA[key]
    try:
        return parser(text)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc


def parse_file(path):
    """Parse a config file into a {key: value} dict of explicit settings."""
    settings = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, text = (part.strip() for part in line.split("=", 1))
            if key in settings:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            settings[key] = parse_value(key, text)
    return settings


def parse_overrides(items):
    """Parse 'key=value' strings (CLI --set) into explicit settings."""
    settings = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, text = (part.strip() for part in item.split("=", 1))
        settings[key] = parse_value(key, text)
    return settings


def resolve(file_settings=None, overrides=None):
    """Effective configuration with documented precedence."""
    cfg = defaults()
    explicit = dict(file_settings or {})
    explicit.update(overrides or {})
    desk = explicit.get("train.desk", cfg["train.desk"])
    if desk:
        for key, value in DESK_PRESET.items():
            if key not in explicit:
                cfg[key] = value
    cfg.update(explicit)
    return cfg
