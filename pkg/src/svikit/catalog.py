"""Name -> model registry used by the command-line driver."""
from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import systems as S
from .errors import UnknownModel
from .geometry import axis_angle

__all__ = ["ModelEntry", "CATALOG", "get_model", "list_models", "build"]


@dataclass(frozen=True)
class ModelEntry:
    name: str
    builder: Callable
    kind: str  # "rn", "lie" or "rigid"
    anchor: str
    integrators: tuple
    default_state: Callable  # system -> initial state
    in_acceptance: bool = True

    def defaults(self) -> dict:
        sig = inspect.signature(self.builder)
        return {k: p.default for k, p in sig.parameters.items()}

    def describe(self, **params) -> dict:
        sys = self.builder(**params)
        if self.kind == "rn":
            syms = [s.name for s in sys.symmetries]
            constrained = sys.constraint is not None
        elif self.kind == "rigid":
            syms = list(sys.symmetries)
            constrained = False
        else:
            syms, constrained = [], False
        return {
            "name": self.name,
            "kind": self.kind,
            "parameters": self.defaults(),
            "symmetries": syms,
            "constrained": constrained,
            "integrators": list(self.integrators),
            "anchor": self.anchor,
        }


def _rn_state(q, p):
    return lambda sys: S.PhaseState.from_qp(sys, np.array(q, dtype=float), np.array(p, dtype=float))


def _pendulum_state(sys):
    L = sys.params["length"]
    th = 0.3
    q = L * np.array([np.sin(th), -np.cos(th)])
    return S.PhaseState.from_qp(sys, q, np.zeros(2))


def _lie_state(sys):
    g = axis_angle([1.0, 1.0, 0.0], 0.4)
    xi = np.array([0.3, 1.0, -0.5])
    return g, xi, sys.inertia * xi


def _rigid_state(sys):
    K = sys.n_bodies
    x = np.zeros((K, 3))
    x[:, 0] = np.arange(K) * 1.5
    v = np.zeros((K, 3))
    v[0] = [0.1, -0.2, 0.3]
    R = np.stack([axis_angle([0.0, 0.0, 1.0], 0.3 * i) for i in range(K)])
    w = np.tile([0.3, 1.0, -0.5], (K, 1)) * (1.0 + 0.2 * np.arange(K))[:, None]
    return S.LieBodyState.from_velocities(sys, x, v, R, w)


_RN = ("svi", "eem", "iem", "reference")

CATALOG: dict[str, ModelEntry] = {
    e.name: e
    for e in [
        ModelEntry("oscillator", S.make_oscillator, "rn",
                   "harmonic oscillator driven by additive white-noise force", _RN, _rn_state([1.0], [0.0])),
        ModelEntry("coupled", S.make_coupled, "rn",
                   "two anharmonic oscillators with configuration-dependent noise", _RN,
                   _rn_state([0.5, -0.3], [0.2, 0.1])),
        ModelEntry("two_body", S.make_two_body, "rn",
                   "translation-invariant particle pair in R^3 (momentum-map conservation)", _RN,
                   _rn_state([0.0, 0.0, 0.0, 1.0, 0.2, -0.1], [0.3, -0.1, 0.2, -0.2, 0.4, 0.1])),
        ModelEntry("constrained_pendulum", S.make_constrained_pendulum, "rn",
                   "holonomically constrained stochastic mechanics (particle on a circle)",
                   ("svi-constrained", "reference"), _pendulum_state),
        ModelEntry("ballistic_analog", S.make_ballistic_analog, "rn",
                   "degenerate-noise Langevin system at uniform temperature", _RN, _rn_state([0.0, 0.0], [0.0, 0.0])),
        ModelEntry("lattice", S.make_lattice, "rn",
                   "thermostatted nonlinear spring-mass chain", _RN, lambda sys: S.PhaseState.from_qp(
                       sys, np.zeros(sys.dim), np.zeros(sys.dim)), in_acceptance=False),
        ModelEntry("free_body", S.make_free_body, "lie",
                   "free rigid body on SO(3), left-trivialized", ("svi-lie",), _lie_state),
        ModelEntry("heavy_top", S.make_heavy_top, "lie",
                   "heavy top with orientation-dependent torque noise, left-trivialized", ("svi-lie",), _lie_state),
        ModelEntry("rigid_pair", S.make_rigid_pair, "rigid",
                   "interacting rigid bodies in SE(3), Langevin-type", ("svi-rigid", "reference"), _rigid_state),
        ModelEntry("rigid_top", S.make_rigid_top, "rigid",
                   "single rigid body under constant gravity torque with torque noise",
                   ("svi-rigid", "reference"), _rigid_state),
    ]
}


def get_model(name: str) -> ModelEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; known: {', '.join(sorted(CATALOG))}") from None


def build(name: str, params: dict):
    entry = get_model(name)
    allowed = entry.defaults()
    bad = sorted(set(params) - set(allowed))
    if bad:
        raise UnknownModel(f"model {name!r} has no parameter(s) {', '.join(bad)}")
    return entry, entry.builder(**params)


def list_models() -> list[dict]:
    return [CATALOG[k].describe() for k in sorted(CATALOG)]
