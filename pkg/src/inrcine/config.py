"""INI run configuration: schema, defaults, validation and env overrides.

Every key lives in one section. Unknown sections or keys are rejected with
the offending line number. Any key can be overridden from the environment
as ``INRCINE_<SECTION>__<KEY>`` (upper case), e.g. ``INRCINE_TRAIN__PATIENCE=50``.

A handful of defaults depend on ``model.kind``; they are written ``auto``
and resolved when the config is loaded (see ``KIND_DEFAULTS``).
"""
from __future__ import annotations

import configparser
import io
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

ENV_PREFIX = "INRCINE_"
AUTO = "auto"


class ConfigError(ValueError):
    """Invalid configuration; the message carries file and line when known."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("none", "") else float(text)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


# (parser, default); positive/range checks are in _CHECKS
SCHEMA: dict[str, dict[str, tuple]] = {
    "phantom": {
        "H": (int, 64),
        "W": (int, 64),
        "fov_x": (float, 0.3),
        "fov_y": (float, 0.3),
        "cardiac_freq": (float, 1.0),
        "cardiac_amp": (float, 0.15),
        "contraction_fraction": (float, 0.35),
        "resp_freq": (float, 0.25),
        "resp_amp": (float, 0.006),
        "phase_x": (float, 1.0),
        "phase_y": (float, 0.6),
        "edge_width_px": (float, 1.5),
        "noise_snr_db": (_opt_float, None),
        "seed": (int, 0),
    },
    "schedule": {
        "coverage": (float, 0.625),
        "n_total_lines": (int, 1350),
        "lines_per_sweep": (int, 6),
        "dt_line": (float, 4.0 / 1350),
        "seed": (int, 0),
    },
    "dataset": {
        "n_coils": (int, 4),
        "sens_seed": (int, 0),
        "val_fraction": (float, 0.05),
        "val_seed": (int, 0),
        "n_lines": (int, 6),
    },
    "model": {
        "kind": (str, "fmlp"),
        "seed": (int, 0),
        "origin_x": (float, 0.0),
        "origin_y": (float, 0.0),
    },
    "fourier": {
        "s_x": (float, AUTO),
        "s_y": (float, AUTO),
        "s_t": (float, AUTO),
        "n_spatial": (int, 256),
        "n_temporal": (int, 64),
        "n_joint": (int, 320),
        "mode": (str, "separate"),
        "seed": (int, 0),
    },
    "mlp": {
        "n_hidden": (int, 7),
        "width": (int, 512),
        "sigma_linear": (float, 0.01),
        "s_out": (float, AUTO),
    },
    "loss": {
        "kind": (str, AUTO),
        "epsilon": (float, 1e4),
        "lambda_denoiser": (float, AUTO),
        "sigma_denoiser": (float, 10.0),
        "denoiser_exponent": (str, "linear"),
        "lambda_tv": (float, 0.0),
    },
    "adam": {
        "lr": (float, AUTO),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
    },
    "train": {
        "patience": (int, 200),
        "max_epochs": (int, 100_000),
        "seed": (int, 0),
    },
    "run": {
        "out": (str, "runs/default"),
        "deterministic": (_bool, True),
        "threads": (int, 1),
        "render_times": (_floats, []),
        "render_png": (_bool, False),
    },
}

KIND_DEFAULTS = {
    "fmlp": {
        ("fourier", "s_x"): 33.0 / 1.43,
        ("fourier", "s_y"): 33.0,
        ("fourier", "s_t"): 5.3,
        ("mlp", "s_out"): 1.0,
        ("loss", "kind"): "l2",
        ("loss", "lambda_denoiser"): 0.0,
        ("adam", "lr"): 1e-4,
    },
    "kfmlp": {
        ("fourier", "s_x"): 10.0,
        ("fourier", "s_y"): 10.0,
        ("fourier", "s_t"): 1.0,
        ("mlp", "s_out"): 1000.0,
        ("loss", "kind"): "hdr",
        ("loss", "lambda_denoiser"): 0.1,
        ("adam", "lr"): 3e-4,
    },
}

_CHOICES = {
    ("model", "kind"): ("fmlp", "kfmlp"),
    ("fourier", "mode"): ("separate", "joint"),
    ("loss", "kind"): ("l2", "hdr"),
    ("loss", "denoiser_exponent"): ("linear", "squared"),
}


def _in_range(lo, hi, lo_open=False, hi_open=False):
    def check(v):
        ok_lo = v > lo if lo_open else v >= lo
        ok_hi = v < hi if hi_open else v <= hi
        return ok_lo and ok_hi
    return check


_POS = _in_range(0, math.inf, lo_open=True)
_NONNEG = _in_range(0, math.inf)
_CHECKS = {
    ("phantom", "H"): (_POS, "must be positive"),
    ("phantom", "W"): (_POS, "must be positive"),
    ("phantom", "fov_x"): (_POS, "must be positive"),
    ("phantom", "fov_y"): (_POS, "must be positive"),
    ("phantom", "cardiac_amp"): (_in_range(0, 1, hi_open=True), "must lie in [0, 1)"),
    ("schedule", "coverage"): (_in_range(0, 1, lo_open=True), "must lie in (0, 1]"),
    ("schedule", "n_total_lines"): (_POS, "must be positive"),
    ("schedule", "lines_per_sweep"): (_POS, "must be positive"),
    ("schedule", "dt_line"): (_POS, "must be positive"),
    ("dataset", "n_coils"): (_POS, "must be positive"),
    ("dataset", "val_fraction"): (_in_range(0, 1, True, True), "must lie in (0, 1)"),
    ("dataset", "n_lines"): (_POS, "must be positive"),
    ("fourier", "n_spatial"): (_POS, "must be positive"),
    ("fourier", "n_temporal"): (_POS, "must be positive"),
    ("fourier", "n_joint"): (_POS, "must be positive"),
    ("mlp", "n_hidden"): (_POS, "must be positive"),
    ("mlp", "width"): (_in_range(2, math.inf), "must be >= 2"),
    ("mlp", "sigma_linear"): (_NONNEG, "must be nonnegative"),
    ("mlp", "s_out"): (_POS, "must be positive"),
    ("loss", "epsilon"): (_POS, "must be positive"),
    ("loss", "lambda_denoiser"): (_NONNEG, "must be nonnegative"),
    ("loss", "sigma_denoiser"): (_POS, "must be positive"),
    ("loss", "lambda_tv"): (_NONNEG, "must be nonnegative"),
    ("adam", "lr"): (_POS, "must be positive"),
    ("adam", "beta1"): (_in_range(0, 1, True, True), "must lie in (0, 1)"),
    ("adam", "beta2"): (_in_range(0, 1, True, True), "must lie in (0, 1)"),
    ("adam", "eps"): (_POS, "must be positive"),
    ("train", "patience"): (_NONNEG, "must be nonnegative"),
    ("train", "max_epochs"): (_POS, "must be positive"),
    ("run", "threads"): (_POS, "must be positive"),
}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_numbers(text: str) -> dict:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    where = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", s)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip()), no)
    return where


@dataclass
class RunConfig:
    """Fully resolved configuration: ``values[section][key]``."""

    values: dict
    source: str = "<defaults>"

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, keys in self.values.items():
            cp[section] = {k: _format(v) for k, v in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """New config with ``{"section.key": value}`` applied and re-validated."""
        text = self.to_ini()
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {dotted!r}")
            cp[section][key] = _format(value)
        buf = io.StringIO()
        cp.write(buf)
        return parse_config(buf.getvalue(), source=self.source, env={})

    # -- builders for the other modules ---------------------------------

    def phantom_config(self):
        from .phantom import PhantomConfig

        return PhantomConfig(**self["phantom"])

    def fourier_config(self):
        from .model import FourierFeatureConfig

        return FourierFeatureConfig(**self["fourier"])

    def mlp_config(self):
        from .model import MLPConfig

        return MLPConfig(**self["mlp"])

    def train_config(self):
        from .tensorcore import AdamConfig
        from .train import LossConfig, TrainConfig

        return TrainConfig(
            loss=LossConfig(**self["loss"]),
            adam=AdamConfig(**self["adam"]),
            **self["train"],
        )


def parse_config(text: str, source: str = "<string>", env=None) -> RunConfig:
    env = os.environ if env is None else env
    where = _line_numbers(text)

    def loc(section, key=None) -> str:
        no = where.get((section, key)) or where.get((section, None))
        return f"{source}:{no}" if no else source

    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    raw: dict[str, dict] = {s: {} for s in SCHEMA}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{loc(section)}: unknown section [{section}]")
        for key, value in cp[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{loc(section, key)}: unknown key {key!r} in [{section}]")
            raw[section][key] = (value, loc(section, key))

    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        section, sep, key = name[len(ENV_PREFIX):].partition("__")
        section, key = section.lower(), key.lower()
        matches = [k for k in SCHEMA.get(section, {}) if k.lower() == key]
        if not sep or not matches:
            raise ConfigError(f"environment variable {name}: unknown config key")
        raw[section][matches[0]] = (value, f"environment {name}")

    values: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (parse, default) in keys.items():
            if key in raw[section] and raw[section][key][0].strip().lower() != AUTO:
                text_value, origin = raw[section][key]
                try:
                    values[section][key] = parse(text_value)
                except ValueError as exc:
                    raise ConfigError(f"{origin}: bad value for {section}.{key}: {exc}") from None
            else:
                values[section][key] = default

    kind = values["model"]["kind"]
    if kind not in KIND_DEFAULTS:
        raise ConfigError(f"{loc('model', 'kind')}: model.kind must be one of fmlp, kfmlp")
    for (section, key), default in KIND_DEFAULTS[kind].items():
        if values[section][key] == AUTO:
            values[section][key] = default

    for (section, key), choices in _CHOICES.items():
        if values[section][key] not in choices:
            origin = raw[section].get(key, (None, loc(section, key)))[1]
            raise ConfigError(f"{origin}: {section}.{key} must be one of {', '.join(choices)}")
    for (section, key), (check, msg) in _CHECKS.items():
        if not check(values[section][key]):
            origin = raw[section].get(key, (None, loc(section, key)))[1]
            raise ConfigError(f"{origin}: {section}.{key} {msg}")
    if kind == "kfmlp" and values["loss"]["lambda_tv"] > 0:
        raise ConfigError(f"{loc('loss', 'lambda_tv')}: temporal TV needs model.kind = fmlp")
    return RunConfig(values, source)


def load_config(path=None, env=None) -> RunConfig:
    if path is None:
        return parse_config("", env=env)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path), env=env)
