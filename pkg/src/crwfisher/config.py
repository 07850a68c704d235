"""Flat ``key = value`` run configuration.

Grammar, one entry per line::

    # comment
    delta_thz = 0.1          # trailing comments are allowed
    gamma_cm1 = 0.1
    lambda_over_gamma = 1.5
    phi = pi/4               # arithmetic with the constant pi is accepted
    values = 0, 0.25, 0.5    # lists are comma separated (sweep grids, scan depths)

Keys are case sensitive and may appear once. Unknown keys are errors so that
typos do not silently fall back to defaults. Every error names the file and
line it came from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .fisher import DerivativeConfig, FisherConfig
from .model import ModelSpec, parse_number


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path, self.line, self.message = path, line, message
        where = f"{path or '<config>'}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)


def _number(text):
    return parse_number(text)


def _integer(text):
    value = parse_number(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _depth(text):
    return "auto" if text.strip() == "auto" else _integer(text)


def _word(text):
    return text.strip()


def _flag(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _numbers(text):
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    if not items:
        raise ValueError("empty list")
    return [parse_number(s) for s in items]


def _integers(text):
    return [_integer(s) for s in text.split(",") if s.strip()]


KEYS = {
    # model
    "delta_thz": _number, "chi": _number, "bath": _word, "gamma_cm1": _number,
    "lambda_cm1": _number, "lambda_over_gamma": _number, "phi": _number,
    "cm1_to_internal": _number, "thz_to_internal": _number,
    # solver and Fisher pipeline
    "solver": _word, "t_max": _number, "samples": _integer, "depth": _depth, "dt": _number,
    "rel_step": _number, "kernel": _word, "omega_variant": _word, "refine": _flag,
    "refine_tol": _number, "decay_times": _number, "min_samples": _integer,
    # sweeps
    "axis": _word, "values": _numbers,
    # validation
    "oracle_modes": _integer, "oracle_e_max": _integer, "scan_depths": _integers,
}
MODEL_KEYS = ("delta_thz", "chi", "bath", "gamma_cm1", "lambda_cm1", "lambda_over_gamma", "phi",
              "cm1_to_internal", "thz_to_internal")
# ModelSpec field named in an error message -> config key to blame
_FIELD_KEYS = {"chi": "chi", "gamma": "gamma_cm1", "lambda": ("lambda_cm1", "lambda_over_gamma"),
               "delta": "delta_thz", "bath": "bath", "factor": ("cm1_to_internal", "thz_to_internal")}


@dataclass
class RunConfig:
    values: dict
    lines: dict = field(default_factory=dict)
    path: str | None = None

    def error(self, key: str | None, message: str) -> ConfigError:
        return ConfigError(message, self.path, self.lines.get(key))

    def get(self, key, default=None):
        return self.values.get(key, default)

    def with_values(self, **changes) -> "RunConfig":
        values = dict(self.values)
        values.update(changes)
        return replace(self, values=values)

    def spec(self) -> ModelSpec:
        model = {k: self.values[k] for k in MODEL_KEYS if k in self.values}
        try:
            return ModelSpec.from_config(model)
        except ValueError as exc:
            msg = str(exc)
            for name, keys in _FIELD_KEYS.items():
                for key in (keys if isinstance(keys, tuple) else (keys,)):
                    if name in msg and key in self.lines:
                        raise self.error(key, msg) from None
            raise ConfigError(msg, self.path) from None

    def fisher_config(self, solver: str | None = None) -> FisherConfig:
        v = self.values
        kwargs = {k: v[k] for k in ("t_max", "samples", "depth", "dt", "kernel", "omega_variant", "refine",
                                     "refine_tol", "decay_times", "min_samples") if k in v}
        try:
            if "rel_step" in v:
                kwargs["derivative"] = DerivativeConfig(v["rel_step"])
            return FisherConfig(solver=solver or v.get("solver", "heom"), **kwargs)
        except ValueError as exc:
            key = "rel_step" if "relative step" in str(exc) else ("depth" if "depth" in str(exc) else "solver")
            raise self.error(key, str(exc)) from None

    def text(self) -> str:
        """Canonical re-serialisation, one key per line in sorted order."""
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.values.items()))


def _format(value) -> str:
    if isinstance(value, list):
        return ", ".join(_format(x) for x in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, path: str | None = None) -> RunConfig:
    values, lines = {}, {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, number)
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", path, number)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", path, number)
        if not value:
            raise ConfigError(f"missing value for {key!r}", path, number)
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path, number) from None
        lines[key] = number
    return RunConfig(values, lines, path)


def load_config(path) -> RunConfig:
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_config(text, path)


# ---------------------------------------------------------------------------
# sweeps

AXES = ("chi", "gamma")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[float, ...]
    base: RunConfig

    def __post_init__(self):
        if self.axis not in AXES:
            raise self.base.error("axis", f"sweep axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise self.base.error("values", "sweep grid is empty")
        steps = [b - a for a, b in zip(self.values, self.values[1:])]
        if not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
            raise self.base.error("values", "sweep grid must be strictly monotone")
        if any(not math.isfinite(v) for v in self.values):
            raise self.base.error("values", "sweep grid values must be finite")

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "SweepSpec":
        for key in ("axis", "values"):
            if key not in cfg.values:
                raise ConfigError(f"sweep configs need the key {key!r}", cfg.path)
        return cls(cfg.values["axis"], tuple(cfg.values["values"]), cfg)

    @property
    def key(self) -> str:
        return "chi" if self.axis == "chi" else "gamma_cm1"

    def point(self, value: float) -> RunConfig:
        values = {k: v for k, v in self.base.values.items() if k not in ("axis", "values")}
        values[self.key] = value
        return replace(self.base, values=values)
