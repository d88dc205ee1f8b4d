"""Flat ``key = value`` run configuration with command-line overrides.

Example file::

    # desk synthetic run
    data.root = runs/synth
    model.input_size = 160,80
    train.max_iters = 500
    hnm.enabled = true

Blank lines and ``#`` comments are ignored. Tuples are comma separated.
Unknown keys raise :class:`ConfigError`.
"""
import os
from dataclasses import fields

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

RESOLVED_NAME = "resolved_config.txt"

# key -> (owner, field name); owner None means a run-level setting
_MODEL_KEYS = {f"model.{f.name}": ("model", f.name) for f in fields(ModelConfig) if f.name != "seed"}
_TRAIN_KEYS = {
    f"train.{name}": ("train", name)
    for name in ("batch_size", "max_iters", "base_lr", "lr_power", "momentum", "weight_decay",
                  "negative_ratio", "augment", "log_every", "checkpoint_every")
}
_HNM_KEYS = {
    "hnm.enabled": ("train", "hnm_enabled"),
    "hnm.retain_fraction": ("train", "hnm_retain_fraction"),
    "hnm.iters": ("train", "hnm_iters"),
    "hnm.base_lr": ("train", "hnm_base_lr"),
}

RUN_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out_dir": "runs/default",
    "data.root": "",
    "data.n_train": 10,
    "data.n_test": 10,
    "data.split_seed": 0,
    "eval.trials": 10,
    "eval.seed": 0,
    "eval.checkpoint": "",
    "eval.scorer": "model",
    "eval.split": "test",
    "synth.ids": 20,
    "synth.per_camera": 4,
    "synth.size": (160, 80),
}


def _defaults():
    model, train = ModelConfig(), TrainConfig()
    out = dict(RUN_DEFAULTS)
    for key, (owner, name) in {**_MODEL_KEYS, **_TRAIN_KEYS, **_HNM_KEYS}.items():
        out[key] = getattr(model if owner == "model" else train, name)
    return out


DEFAULTS = _defaults()


def _parse_value(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
            return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _canonical(key):
    key = key.strip().lstrip("-").replace("-", "_")
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


class RunConfig:
    """Resolved settings: defaults, then the config file, then overrides."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            key = _canonical(key)
            self.values[key] = _parse_value(key, value, DEFAULTS[key]) if isinstance(value, str) else value
        self.model_config()
        self.train_config()

    @classmethod
    def from_text(cls, text, source="<config>"):
        return cls(read_pairs(text, source))

    @classmethod
    def load(cls, path=None, overrides=None, base=None):
        """Defaults, then ``base``, then the file at ``path``, then ``overrides``."""
        merged = {_canonical(k): v for k, v in (base or {}).items()}
        if path:
            try:
                with open(path) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            merged.update(read_pairs(text, path))
        for key, value in (overrides or {}).items():
            merged[_canonical(key)] = value
        return cls(merged)

    def __contains__(self, key):
        return key in self.values

    def __getitem__(self, key):
        return self.values[_canonical(key)]

    def model_config(self):
        kwargs = {name: self.values[key] for key, (_, name) in _MODEL_KEYS.items()}
        return ModelConfig(seed=self.values["seed"], **kwargs)

    def train_config(self):
        kwargs = {name: self.values[key] for key, (_, name) in {**_TRAIN_KEYS, **_HNM_KEYS}.items()}
        return TrainConfig(seed=self.values["seed"], threads=self.values["threads"], **kwargs)

    def to_text(self):
        return "".join(f"{key} = {_format_value(self.values[key])}\n" for key in sorted(self.values))

    def write(self, directory, name=RESOLVED_NAME):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, name)
        with open(path, "w") as fh:
            fh.write(self.to_text())
        return path


def read_pairs(text, source="<config>"):
    """Parse ``key = value`` lines into {canonical key: raw text}."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        try:
            values[_canonical(key)] = value.strip()
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def parse_overrides(args):
    """``['--train.max_iters', '10', ...]`` -> {key: text}; every flag needs a value."""
    out = {}
    i = 0
    while i < len(args):
        flag = args[i]
        if not flag.startswith("--"):
            raise ConfigError(f"unexpected argument {flag!r}")
        if "=" in flag:
            key, value = flag[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for {flag}")
            key, value = flag[2:], args[i + 1]
            i += 2
        out[_canonical(key)] = value
    return out
