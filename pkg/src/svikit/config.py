"""Experiment configuration: flat ``key = value`` text with dotted sections.

Example::

    study = convergence
    model.name = oscillator
    model.sigma = 0.5
    integrators = svi, eem
    horizon = 0, 1
    paths = 1000
    seed = 7
    convergence.levels = 4..8

``[section]`` headers are accepted as a shorthand for prefixing the keys
that follow.  Lines starting with ``#`` are comments.  Keys under
``result.`` and ``meta.`` are ignored, so a run summary parses back into
the configuration that produced it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .catalog import get_model
from .errors import ConfigParse, UnknownIntegrator

__all__ = ["ExperimentConfig", "parse_text", "load", "format_value", "STUDIES", "INTEGRATORS"]

STUDIES = ("simulate", "convergence", "temperature", "invariants")
INTEGRATORS = ("svi", "svi-lie", "svi-constrained", "svi-rigid", "eem", "iem", "reference")
_IGNORED = ("result.", "meta.")


def parse_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    prefix = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            prefix = f"{name}." if name else ""
            continue
        if "=" not in line:
            raise ConfigParse(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigParse(f"line {lineno}: empty key")
        key = prefix + key
        if key.startswith(_IGNORED):
            continue
        out[key] = value
    return out


def _num(key: str, v: str, kind=float):
    try:
        x = kind(v) if kind is not int else int(v, 10)
    except (TypeError, ValueError):
        raise ConfigParse(f"{key}: expected {kind.__name__}, got {v!r}") from None
    if kind is float and not np.isfinite(x):
        raise ConfigParse(f"{key}: must be finite, got {v!r}")
    return x


def _scalar(v: str):
    """Best-effort typing for model parameters."""
    s = v.strip()
    if "," in s:
        return tuple(_scalar(x) for x in s.split(",") if x.strip())
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(s, 10)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def _floats(key: str, v: str) -> tuple:
    return tuple(_num(key, x.strip()) for x in v.split(",") if x.strip())


def _levels(key: str, v: str) -> tuple:
    s = v.replace(" ", "")
    if ".." in s:
        lo, hi = s.split("..", 1)
        lo, hi = _num(key, lo, int), _num(key, hi, int)
        if hi < lo:
            raise ConfigParse(f"{key}: empty range {v!r}")
        return tuple(range(lo, hi + 1))
    return tuple(_num(key, x, int) for x in s.split(",") if x)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


@dataclass
class ExperimentConfig:
    model: str = "oscillator"
    model_params: dict = field(default_factory=dict)
    integrators: tuple = ("svi",)
    h: float = 0.01
    horizon: tuple = (0.0, 1.0)
    paths: int = 1
    seed: int = 0
    outputs: str = "out"
    study: str = "simulate"
    retraction: str = "cayley"
    threads: int = 1
    record_every: int = 1
    initial_q: Optional[tuple] = None
    initial_p: Optional[tuple] = None
    # convergence
    levels: tuple = (4, 5, 6, 7, 8)
    levels_ref: Optional[int] = None
    # invariants
    fd_step: float = 1e-5
    samples: int = 100
    symmetry: tuple = ()

    _SIMPLE = {
        "h": float, "paths": int, "seed": int, "outputs": str, "study": str, "retraction": str,
        "threads": int, "record_every": int,
    }

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ExperimentConfig":
        cfg = cls()
        params: dict = {}
        for key, v in kv.items():
            if key.startswith("model."):
                sub = key[len("model."):]
                if sub == "name":
                    cfg.model = v
                else:
                    params[sub] = _scalar(v)
            elif key in cls._SIMPLE:
                kind = cls._SIMPLE[key]
                setattr(cfg, key, v if kind is str else _num(key, v, kind))
            elif key == "integrators":
                cfg.integrators = tuple(x.strip() for x in v.split(",") if x.strip())
            elif key == "horizon":
                hz = _floats(key, v)
                if len(hz) != 2:
                    raise ConfigParse(f"horizon: expected 'a, b', got {v!r}")
                cfg.horizon = hz
            elif key == "initial.q":
                cfg.initial_q = _floats(key, v)
            elif key == "initial.p":
                cfg.initial_p = _floats(key, v)
            elif key == "convergence.levels":
                cfg.levels = _levels(key, v)
            elif key == "convergence.levels_ref":
                cfg.levels_ref = None if v.lower() == "none" else _num(key, v, int)
            elif key == "invariants.fd_step":
                cfg.fd_step = _num(key, v)
            elif key == "invariants.samples":
                cfg.samples = _num(key, v, int)
            elif key == "invariants.symmetry":
                cfg.symmetry = tuple(x.strip() for x in v.split(",") if x.strip() and x.strip() != "none")
            else:
                raise ConfigParse(f"{key}: unknown configuration key")
        cfg.model_params = params
        if "integrators" not in kv:
            cfg.integrators = get_model(cfg.model).integrators[:1]
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.study not in STUDIES:
            raise ConfigParse(f"study: expected one of {', '.join(STUDIES)}, got {self.study!r}")
        entry = get_model(self.model)
        unknown = sorted(set(self.model_params) - set(entry.defaults()))
        if unknown:
            raise ConfigParse(f"model.{unknown[0]}: {self.model} has no such parameter")
        if not self.integrators:
            raise ConfigParse("integrators: at least one integrator is required")
        for name in self.integrators:
            if name not in INTEGRATORS:
                raise UnknownIntegrator(f"integrators: unknown integrator {name!r}")
            if name not in entry.integrators:
                raise UnknownIntegrator(
                    f"integrators: {name!r} does not apply to {self.model} (use {', '.join(entry.integrators)})"
                )
        if self.retraction.lower() not in ("cayley", "exponential"):
            raise ConfigParse(f"retraction: expected cayley or exponential, got {self.retraction!r}")
        a, b = self.horizon
        if not b > a:
            raise ConfigParse(f"horizon: end must exceed start, got {a!r}, {b!r}")
        if not self.h > 0:
            raise ConfigParse(f"h: must be positive, got {self.h!r}")
        n = (b - a) / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ConfigParse(f"h: {self.h!r} does not divide the horizon [{a!r}, {b!r}] into whole steps")
        for name in ("paths", "threads", "record_every", "samples"):
            if getattr(self, name) < 1:
                raise ConfigParse(f"{name}: must be >= 1")
        if self.study == "convergence":
            if not self.levels or min(self.levels) < 0:
                raise ConfigParse("convergence.levels: need nonnegative dyadic levels")
            if len(set(self.levels)) < 2:
                raise ConfigParse("convergence.levels: need at least two step sizes")
            if self.levels_ref is not None and self.levels_ref < max(self.levels) + 4:
                raise ConfigParse("convergence.levels_ref: must be at least the finest level plus 4")
        if not self.fd_step > 0:
            raise ConfigParse("invariants.fd_step: must be positive")

    # -- derived values -------------------------------------------------

    @property
    def n_steps(self) -> int:
        a, b = self.horizon
        return int(round((b - a) / self.h))

    @property
    def step_sizes(self) -> tuple:
        a, b = self.horizon
        return tuple((b - a) / (1 << lev) for lev in sorted(set(self.levels)))

    def resolved_params(self) -> dict:
        p = dict(get_model(self.model).defaults())
        p.update(self.model_params)
        return p

    def to_lines(self) -> list[str]:
        """Every field, defaults included, in parseable form."""
        lines = [
            f"study = {self.study}",
            f"model.name = {self.model}",
        ]
        for k, v in sorted(self.resolved_params().items()):
            lines.append(f"model.{k} = {format_value(v)}")
        lines += [
            f"integrators = {', '.join(self.integrators)}",
            f"h = {format_value(float(self.h))}",
            f"horizon = {format_value(tuple(float(x) for x in self.horizon))}",
            f"paths = {self.paths}",
            f"seed = {self.seed}",
            f"outputs = {self.outputs}",
            f"retraction = {self.retraction}",
            f"threads = {self.threads}",
            f"record_every = {self.record_every}",
        ]
        if self.initial_q is not None:
            lines.append(f"initial.q = {format_value(self.initial_q)}")
        if self.initial_p is not None:
            lines.append(f"initial.p = {format_value(self.initial_p)}")
        lines += [
            f"convergence.levels = {', '.join(str(l) for l in self.levels)}",
            f"convergence.levels_ref = {format_value(self.levels_ref)}",
            f"invariants.fd_step = {format_value(float(self.fd_step))}",
            f"invariants.samples = {self.samples}",
            f"invariants.symmetry = {', '.join(self.symmetry) if self.symmetry else 'none'}",
        ]
        return lines

    def digest(self) -> str:
        """Hash of the resolved configuration, excluding where outputs go
        and how many threads ran (neither changes any number)."""
        keep = [l for l in self.to_lines() if not l.startswith(("outputs =", "threads ="))]
        return hashlib.sha256("\n".join(keep).encode()).hexdigest()[:16]


def load(path, overrides: Optional[dict[str, str]] = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParse(f"cannot read config {path}: {exc.strerror}") from None
    kv = parse_text(text)
    kv.update(overrides or {})
    return ExperimentConfig.from_mapping(kv)
