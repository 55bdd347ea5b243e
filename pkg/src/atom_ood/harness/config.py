"""Flat ``key = value`` experiment configs.

One schema covers every subcommand; a file may set any subset of keys and
the rest take their defaults. Unknown keys, malformed values and duplicate
keys are errors. ``#`` starts a comment. Lists are comma separated.

The config digest is a sha256 over the fully resolved key/value pairs,
excluding keys that cannot change results (``out``, ``threads``).
"""

import hashlib
import math

from ..metrics import FAMILIES


class ConfigError(ValueError):
    """Bad config file, bad value or missing required key (exit code 2)."""


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _list(conv):
    def parse(text):
        text = text.strip()
        return tuple(conv(p) for p in text.split(",")) if text else ()
    return parse


def _str(text):
    return text.strip()


def _auto_float(text):
    text = text.strip()
    return "auto" if text == "auto" else _float(text)


_int = int
_floats = _list(_float)
_ints = _list(int)
_strs = _list(_str)

# name -> (parser, default); defaults are given as config text so they go
# through the same parser as file values
SCHEMA = {
    # shared
    "seed": (_int, "0"),
    "out": (_str, "out"),
    "threads": (_int, "1"),
    # Gaussian data model
    "dim": (_int, "256"),
    "mu_norm": (_float, "5.0"),
    "sigma": (_float, "1.0"),
    "gamma_margin": (_float, "2.0"),
    "sigma_o": (_float, "1.5"),
    "eta": (_float, "1.0"),
    "nu": (_float, "0.1"),
    "sigma_q": (_float, "10.0"),
    "eps": (_float, "0.001"),
    "eps_tau": (_float, "0.0"),
    # theory simulations
    "props": (_strs, "exist,without,with,om,ideal"),
    "trials": (_int, "20"),
    "n_in": (_int, "20000"),
    "n_aux": (_int, "20000"),
    "n_without": (_int, "100000"),
    "fnr_samples": (_int, "100000"),
    "trial_fnr_samples": (_int, "2000"),
    "shell_factor": (_float, "1.01"),
    "shell_count": (_int, "2000"),
    "gammas": (_floats, "1,2,3"),
    "margin_t": (_auto_float, "auto"),
    "search_radius": (_auto_float, "auto"),
    "restarts": (_int, "4"),
    "local_steps": (_int, "150"),
    "step_scale": (_float, "0.01"),
    "hyp_constant": (_float, "1.0"),
    "ideal_alpha": (_float, "0.05"),
    "ideal_c": (_float, "1.0"),
    # toy data
    "toy_seeds": (_ints, "0,1,2,3,4"),
    "variants": (_strs, "ATOM,AT_RANDOM,NTOM,PLAIN"),
    "toy_means": (_floats, "-2,0,2,0"),
    "toy_sigma": (_float, "0.3"),
    "count_per_class": (_int, "5000"),
    "pool_size": (_int, "100000"),
    "pool_near_frac": (_float, "0.002"),
    "near_annulus": (_floats, "2.9,3.6"),
    "far_annulus": (_floats, "5,8"),
    "test_in_per_class": (_int, "1000"),
    "test_ood_count": (_int, "3000"),
    "test_annulus": (_floats, "2.9,3.6"),
    "box_pad": (_float, "3.0"),
    "lattice_n": (_int, "61"),
    "lattice_extent": (_float, "6.0"),
    "q_sweep": (_bool, "0"),
    "q_grid": (_floats, "0,0.125,0.25,0.5,0.75"),
    "q_holdout": (_int, "2000"),
    # training
    "variant": (_str, "ATOM"),
    "epochs": (_int, "30"),
    "pool_draw": (_int, "80000"),
    "selected": (_int, "5000"),
    "quantile": (_float, "0.0"),
    "lam": (_float, "1.0"),
    "lr": (_float, "0.001"),
    "momentum": (_float, "0.9"),
    "weight_decay": (_float, "0.0001"),
    "batch_in": (_int, "256"),
    "batch_out": (_int, "512"),
    "hidden": (_ints, "64,64"),
    "activation": (_str, "relu"),
    "train_eps": (_float, "0.4"),
    "train_steps": (_int, "5"),
    "train_step_size": (_float, "0.1"),
    "train_random_start": (_bool, "1"),
    # evaluation
    "attack_eps": (_float, "0.4"),
    "attack_steps": (_int, "20"),
    "attack_step_size": (_float, "0.05"),
    "attack_restarts": (_int, "1"),
    "attack_random_start": (_bool, "1"),
    "strong_attack": (_bool, "0"),
    "fnr_target": (_float, "0.05"),
    "corruption_scale": (_float, "1.0"),
    # file-based subcommands
    "in_data": (_str, ""),
    "aux_pool": (_str, ""),
    "checkpoint": (_str, ""),
    "in_test": (_str, ""),
    "ood_test": (_str, ""),
    "attack_family": (_str, "linf"),
    "reports": (_strs, ""),
    "methods": (_strs, ""),
    "sampler": (_str, "in_dist"),
    "count": (_int, "1000"),
    "shell_radius": (_auto_float, "auto"),
    "format": (_str, "csv"),
}

NON_RESULT_KEYS = ("out", "threads")

# keys that fix how a model is evaluated; reports are comparable only when
# these agree
PROTOCOL_KEYS = (
    "toy_means", "toy_sigma", "test_in_per_class", "test_ood_count", "test_annulus",
    "attack_eps", "attack_steps", "attack_step_size", "attack_restarts",
    "attack_random_start", "strong_attack", "fnr_target", "corruption_scale", "box_pad",
    "in_test", "ood_test",
)

REQUIRED = {
    "train": ("in_data",),
    "eval": ("checkpoint", "in_test", "ood_test"),
    "attack": ("checkpoint", "in_test", "ood_test"),
    "report": ("reports",),
}

CHOICES = {
    "variant": ("ATOM", "NTOM", "AT_RANDOM", "PLAIN"),
    "activation": ("relu", "tanh"),
    "sampler": ("in_dist", "aux_sphere", "aux_mixture", "ood_shell", "toy2d", "annulus"),
    "format": ("csv", "bin"),
    "attack_family": FAMILIES,
}

LIST_CHOICES = {
    "props": ("exist", "without", "with", "om", "ideal"),
    "variants": CHOICES["variant"],
}


def _format(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


class ExperimentConfig:
    """Resolved config: attribute and item access to every schema key."""

    def __init__(self, values=None):
        resolved = {k: parser(default) for k, (parser, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            resolved[key] = value
        self._values = resolved
        self._validate()

    def _validate(self):
        for key, allowed in CHOICES.items():
            if self._values[key] not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {self._values[key]!r}")
        for key, allowed in LIST_CHOICES.items():
            bad = [v for v in self._values[key] if v not in allowed]
            if bad:
                raise ConfigError(f"{key}: unknown entries {bad}; allowed {allowed}")
        for key in ("trials", "n_in", "n_aux", "fnr_samples", "epochs", "count", "threads"):
            if self._values[key] < (0 if key == "epochs" else 1):
                raise ConfigError(f"{key} must be positive")
        if len(self._values["toy_means"]) % 2:
            raise ConfigError("toy_means must list x,y pairs")
        for key in ("near_annulus", "far_annulus", "test_annulus"):
            if len(self._values[key]) != 2:
                raise ConfigError(f"{key} must be 'r_lo,r_hi'")

    def __getattr__(self, name):
        values = self.__dict__.get("_values")
        if values is not None and name in values:
            return values[name]
        raise AttributeError(name)

    def __getitem__(self, key):
        return self._values[key]

    def as_dict(self):
        return dict(self._values)

    def replace(self, **kw):
        vals = dict(self._values)
        vals.update(kw)
        return ExperimentConfig(vals)

    def require(self, command):
        missing = [k for k in REQUIRED.get(command, ()) if not self._values[k]]
        if missing:
            raise ConfigError(f"'{command}' needs config keys: {', '.join(missing)}")

    def canonical(self, keys=None):
        keys = sorted(k for k in (keys or self._values) if k not in NON_RESULT_KEYS)
        return "".join(f"{k}={_format(self._values[k])}\n" for k in keys)

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def protocol_digest(self):
        return hashlib.sha256(self.canonical(PROTOCOL_KEYS).encode()).hexdigest()

    def to_text(self):
        return self.canonical(list(self._values) + list(NON_RESULT_KEYS))


def parse_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return ExperimentConfig(values)


def load_config(path=None, overrides=None):
    """Parse a config file (or start from defaults) and apply CLI overrides."""
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = parse_text(text)
    if overrides:
        cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    return cfg
