"""Structural checks and statistical estimators for the steppers."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import Blowup, NumericalFailure, SymmetryNotDeclared
from .integrators import STEPPERS, StepperConfig, heun_step, simulate_rigid
from .noise import NoiseAudit, coarsen, sample_path, uniform_increments
from .systems import LieBodyState, MechSystem, PhaseState, RigidBodySystem, Symmetry

__all__ = [
    "SymplecticityReport",
    "ConvergenceReport",
    "TemperatureSeries",
    "check_symplectic",
    "symplectic_defect",
    "check_momentum",
    "estimate_strong_order",
    "temperature_study",
    "gibbs_initial_states",
    "energy_series",
    "trend_slope",
]


def _resolve(stepper) -> Callable:
    if callable(stepper):
        return stepper
    return STEPPERS[stepper]


def _chunks(n: int, threads: int):
    threads = max(1, min(int(threads), n))
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [slice(edges[i], edges[i + 1]) for i in range(threads)]


def _map_chunks(fn, n: int, threads: int):
    parts = _chunks(n, threads)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(len(parts)) as ex:
        return list(ex.map(fn, parts))


# ---------------------------------------------------------------------------
# symplecticity


@dataclass
class SymplecticityReport:
    samples: int
    max_defect: float
    fd_step: float
    defects: np.ndarray = field(repr=False, default=None)


def _canonical_J(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def symplectic_defect(DF) -> np.ndarray:
    """||DF^T J DF - J||_F for Jacobians shaped (..., 2n, 2n)."""
    n = DF.shape[-1] // 2
    J = _canonical_J(n)
    W = np.swapaxes(DF, -1, -2) @ J @ DF - J
    return np.sqrt(np.sum(W**2, axis=(-2, -1)))


def phase_jacobian(sys: MechSystem, step, q, p, dB, cfg: StepperConfig, fd_step: float) -> np.ndarray:
    """Central-difference Jacobian of (q, p) -> (q', p') with frozen ``dB``.

    ``q, p`` are (S, n) and ``dB`` (S, m); returns (S, 2n, 2n).
    """
    S, n = q.shape
    z = np.concatenate([q, p], axis=-1)
    E = fd_step * np.eye(2 * n)
    zz = np.concatenate([z[:, None, :] + E[None], z[:, None, :] - E[None]], axis=1)  # (S, 4n, 2n)
    qq, pp = zz[..., :n], zz[..., n:]
    st = PhaseState(qq, sys.velocity(pp), pp)
    out = step(sys, st, np.repeat(dB[:, None, :], 4 * n, axis=1), cfg)
    if isinstance(out, tuple):
        out = out[0]
    w = np.concatenate([out.q, out.p], axis=-1)
    D = (w[:, : 2 * n] - w[:, 2 * n :]) / (2 * fd_step)  # rows indexed by perturbed direction
    return np.swapaxes(D, -1, -2)


def check_symplectic(sys: MechSystem, stepper="svi", n_samples: int = 100, fd_step: float = 1e-5,
                     seed: int = 0, cfg: Optional[StepperConfig] = None, scale: float = 1.0) -> SymplecticityReport:
    """Pathwise symplecticity of the one-step map at random (state, increment) pairs."""
    if sys.constraint is not None:
        raise ValueError("symplecticity check applies to unconstrained systems")
    cfg = cfg or StepperConfig(0.1)
    step = _resolve(stepper)
    rng = np.random.default_rng(seed)
    n, m = sys.dim, max(sys.n_noise, 1)
    q = scale * rng.standard_normal((n_samples, n))
    p = scale * rng.standard_normal((n_samples, n))
    dB = np.sqrt(cfg.h) * rng.standard_normal((n_samples, m))[:, : sys.n_noise]
    DF = phase_jacobian(sys, step, q, p, dB, cfg, fd_step)
    d = symplectic_defect(DF)
    return SymplecticityReport(n_samples, float(d.max()), fd_step, d)


# ---------------------------------------------------------------------------
# momentum maps


def _rigid_linear_momentum(states, axis: int) -> np.ndarray:
    return np.array([s.p[:, axis].sum() for s in states])


def check_momentum(sys, generator: Union[str, Symmetry], trajectory) -> float:
    """max_k |J(state_k) - J(state_0)| for the momentum map of ``generator``.

    ``generator`` is either the name of a symmetry the system declares, or an
    explicit ``Symmetry`` (a hypothesis, which the system need not satisfy).
    """
    if isinstance(sys, RigidBodySystem):
        name = generator if isinstance(generator, str) else generator.name
        if name not in sys.symmetries:
            raise SymmetryNotDeclared(f"{sys.name} does not declare {name!r}")
        J = _rigid_linear_momentum(trajectory, "xyz".index(name[-1]))
        return float(np.max(np.abs(J - J[0])))
    if isinstance(generator, str):
        try:
            sym = sys.symmetry(generator)
        except KeyError:
            raise SymmetryNotDeclared(f"{sys.name} does not declare {generator!r}") from None
    else:
        sym = generator
    J = sym.momentum(trajectory.q, trajectory.p)
    return float(np.max(np.abs(J - J[0])))


# ---------------------------------------------------------------------------
# strong convergence


@dataclass
class ConvergenceReport:
    step_sizes: list
    ms_errors: list
    fitted_slope: float
    intercept: float
    paths: int
    method: str = "svi"
    exact: bool = False
    reference_level: int = 0
    reference_check: Optional[float] = None  # endpoint change when halving the reference step

    def __post_init__(self):
        h = np.asarray(self.step_sizes)
        if np.any(np.diff(h) >= 0):
            raise ValueError("step sizes must be strictly decreasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "ms_error"])
        for h, e in zip(self.step_sizes, self.ms_errors):
            w.writerow([repr(float(h)), repr(float(e))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "method": self.method,
            "paths": self.paths,
            "fitted_slope": self.fitted_slope,
            "intercept": self.intercept,
            "exact": self.exact,
            "reference_level": self.reference_level,
            "reference_check": self.reference_check,
        }


def _fit(h, err):
    A = np.vstack([np.log2(h), np.ones(len(h))]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, np.log2(err), rcond=None)
    return float(slope), float(icpt)


def estimate_strong_order(sys: MechSystem, stepper, state0: PhaseState, horizon=(0.0, 1.0),
                          levels: Sequence[int] = range(4, 9), paths: int = 1000, seed: int = 0,
                          levels_ref: Optional[int] = None, cfg: Optional[StepperConfig] = None,
                          threads: int = 1, check_reference: bool = False) -> ConvergenceReport:
    """Mean-square endpoint error against a coupled fine-step reference.

    All step sizes of one ensemble member see the same Brownian path: the
    reference resolution is sampled once and summed down to each coarse grid.
    """
    levels = sorted(set(int(l) for l in levels))
    finest = levels[-1]
    if levels_ref is None:
        levels_ref = finest + 4
    if levels_ref < finest + 4:
        raise ValueError("reference level must exceed the finest tested level by at least 4")
    if isinstance(sys, RigidBodySystem):
        return _strong_order_rigid(sys, state0, horizon, levels, paths, seed, levels_ref, cfg, threads)
    a, b = map(float, horizon)
    step = _resolve(stepper)
    name = stepper if isinstance(stepper, str) else getattr(stepper, "__name__", "custom")
    base = cfg or StepperConfig(1.0)
    m = max(sys.n_noise, 1)
    h_ref = (b - a) / (1 << levels_ref)

    def run_chunk(sl):
        cnt = sl.stop - sl.start
        inc = np.empty((1 << levels_ref, cnt, m))
        for j in range(cnt):
            inc[:, j, :] = sample_path(seed, (a, b), levels_ref, m, member=sl.start + j).steps()
        inc = inc[..., : sys.n_noise]
        s0 = PhaseState(*(np.broadcast_to(x, (cnt,) + np.shape(x)[-1:]).copy() for x in (state0.q, state0.v, state0.p)))
        ref = _integrate(lambda s, dB: heun_step(sys, s, dB, h_ref), s0, inc, seed, sl.start)
        ref_half = None
        if check_reference:
            coarse = coarsen(inc, 2, axis=0)
            ref_half = _integrate(lambda s, dB: heun_step(sys, s, dB, 2 * h_ref), s0, coarse, seed, sl.start)
        sq = []
        for lev in levels:
            c = cfg_for(lev)
            coarse = coarsen(inc, 1 << (levels_ref - lev), axis=0)
            end = _integrate(lambda s, dB: _only_state(step(sys, s, dB, c)), s0, coarse, seed, sl.start)
            sq.append(_sqdist(end, ref))
        extra = _sqdist(ref_half, ref) if ref_half is not None else None
        return np.array(sq), extra

    def cfg_for(lev):
        return base.with_h((b - a) / (1 << lev))

    results = _map_chunks(run_chunk, paths, threads)
    sq = np.concatenate([r[0] for r in results], axis=1)  # (levels, paths)
    err = np.sqrt(np.mean(sq, axis=1))
    ref_chk = None
    if check_reference:
        ref_chk = float(np.sqrt(np.mean(np.concatenate([r[1] for r in results]))))
    hs = [(b - a) / (1 << lev) for lev in levels]
    scale = 1.0 + float(np.max(np.abs(np.concatenate([state0.q.ravel(), state0.p.ravel()]))))
    if np.all(err <= 1e-12 * scale):
        return ConvergenceReport(hs, err.tolist(), float("nan"), float("nan"), paths, name, True, levels_ref, ref_chk)
    slope, icpt = _fit(hs, err)
    return ConvergenceReport(hs, err.tolist(), slope, icpt, paths, name, False, levels_ref, ref_chk)


def _rigid_sqdist(x: LieBodyState, y: LieBodyState) -> float:
    return float(sum(np.sum((getattr(x, f) - getattr(y, f)) ** 2) for f in ("x", "p", "R", "pi")))


def _strong_order_rigid(sys, state0, horizon, levels, paths, seed, levels_ref, cfg, threads):
    # rigid steppers are not batched over members, so each member runs alone
    a, b = map(float, horizon)
    base = cfg or StepperConfig(1.0)
    m = sys.n_noise

    def run_chunk(sl):
        sq = np.empty((len(levels), sl.stop - sl.start))
        for j, member in enumerate(range(sl.start, sl.stop)):
            inc = sample_path(seed, (a, b), levels_ref, m, member=member).steps()
            ref_cfg = StepperConfig((b - a) / (1 << levels_ref))
            try:
                ref, _ = simulate_rigid(sys, state0, inc, ref_cfg, method="reference", record_every=inc.shape[0])
                for i, lev in enumerate(levels):
                    coarse = coarsen(inc, 1 << (levels_ref - lev), axis=0)
                    c = base.with_h((b - a) / (1 << lev))
                    end, _ = simulate_rigid(sys, state0, coarse, c, record_every=coarse.shape[0])
                    sq[i, j] = _rigid_sqdist(end[-1], ref[-1])
            except NumericalFailure as exc:
                exc.seed = seed
                raise
        return sq

    sq = np.concatenate(_map_chunks(run_chunk, paths, threads), axis=1)
    err = np.sqrt(np.mean(sq, axis=1))
    hs = [(b - a) / (1 << lev) for lev in levels]
    slope, icpt = _fit(hs, err)
    return ConvergenceReport(hs, err.tolist(), slope, icpt, paths, "svi-rigid", False, levels_ref, None)


def _only_state(out):
    return out[0] if isinstance(out, tuple) else out


def _sqdist(x: PhaseState, y: PhaseState):
    return np.sum((x.q - y.q) ** 2, axis=-1) + np.sum((x.p - y.p) ** 2, axis=-1)


def _integrate(step, state, inc, seed, member0):
    for k in range(inc.shape[0]):
        state = step(state, inc[k])
        z = np.abs(state.p)
        if not np.all(np.isfinite(z)) or z.max() > 1e8:
            bad = int(np.argmax(~np.isfinite(z).all(axis=-1) | (z.max(axis=-1) > 1e8)))
            raise Blowup(f"ensemble member {member0 + bad} blew up", seed=seed, step=k)
    return state


# ---------------------------------------------------------------------------
# temperature


@dataclass
class TemperatureSeries:
    times: np.ndarray
    mean_kinetic: np.ndarray
    target: float
    method: str
    dof: int
    audit: Optional[str] = None

    def __post_init__(self):
        if len(self.times) != len(self.mean_kinetic):
            raise ValueError("times and mean_kinetic lengths differ")

    @property
    def mean_temperature(self) -> np.ndarray:
        """Ensemble mean of the instantaneous temperature 2 KE / dof."""
        return 2.0 * self.mean_kinetic / self.dof

    @property
    def time_averaged(self) -> np.ndarray:
        """Running time average of mean_kinetic."""
        return np.cumsum(self.mean_kinetic) / np.arange(1, len(self.mean_kinetic) + 1)

    def window(self, start: float):
        sel = self.times >= start
        return self.times[sel], self.mean_kinetic[sel]

    def tail_mean(self, start: float) -> float:
        return float(np.mean(self.window(start)[1]))

    def tail_trend(self, start: float) -> float:
        return trend_slope(*self.window(start))


def trend_slope(t, y) -> float:
    return float(np.polyfit(np.asarray(t, float), np.asarray(y, float), 1)[0])


def gibbs_initial_states(sys: MechSystem, paths: int, seed: int) -> PhaseState:
    """Initial ensemble: Maxwell momenta and, when the model supplies one, an
    exact Gibbs sample of the configuration (else q = 0)."""
    kT = sys.temperature
    if kT is None:
        raise ValueError(f"{sys.name} carries no temperature")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=int(seed), spawn_key=(0x7E4D,))))
    L = np.linalg.cholesky(sys.mass * kT)
    p = rng.standard_normal((paths, sys.dim)) @ L.T
    if sys.gibbs_sampler is not None:
        q = sys.gibbs_sampler(rng, paths)
    else:
        q = np.zeros((paths, sys.dim))
    return PhaseState.from_qp(sys, q, p)


def temperature_study(sys: MechSystem, methods=("svi", "eem", "iem"), horizon=(0.0, 100.0), h: float = 0.1,
                      paths: int = 500, seed: int = 0, cfg: Optional[StepperConfig] = None,
                      threads: int = 1, record_every: int = 1) -> dict:
    """Ensemble mean kinetic energy versus time for each method, every method
    consuming the identical Brownian increments and initial ensemble."""
    if sys.temperature is None:
        raise ValueError("temperature study needs a fluctuation-dissipation model")
    a, b = map(float, horizon)
    N = int(round((b - a) / h))
    if not np.isclose(N * h, b - a, rtol=1e-12, atol=1e-12):
        raise ValueError("h must divide the horizon")
    cfg = (cfg or StepperConfig(h)).with_h(h)
    state0 = gibbs_initial_states(sys, paths, seed)
    m = sys.n_noise

    def increments(sl):
        out = np.empty((N, sl.stop - sl.start, m))
        for j in range(sl.stop - sl.start):
            out[:, j, :] = uniform_increments(seed, sl.start + j, N, m, h)
        return out

    inc = np.concatenate(_map_chunks(increments, paths, threads), axis=1)
    audit = NoiseAudit()
    for k in range(N):
        audit.record(inc[k])
    digest = audit.hexdigest()
    target = 0.5 * sys.dim * sys.temperature
    out = {}
    for meth in methods:
        step = _resolve(meth)

        def run(sl, step=step):
            s = PhaseState(state0.q[sl], state0.v[sl], state0.p[sl])
            ke = np.empty((N, sl.stop - sl.start))
            for k in range(N):
                s = _only_state(step(sys, s, inc[k, sl], cfg))
                ke[k] = sys.kinetic(s.p)
            return ke

        # per-member energies are reduced after the join so the result does
        # not depend on how members were split across threads
        ke = np.concatenate(_map_chunks(run, paths, threads), axis=1)
        mean_ke = ke.sum(axis=1) / paths
        ke0 = float(np.mean(sys.kinetic(state0.p)))
        times = a + h * np.arange(N + 1)
        series = np.concatenate([[ke0], mean_ke])
        sel = slice(None, None, record_every)
        out[meth] = TemperatureSeries(times[sel], series[sel], target, meth, sys.dim, digest)
    return out


# ---------------------------------------------------------------------------
# energy


def energy_series(sys, trajectory) -> np.ndarray:
    """H = p.M^{-1}p/2 + U(q) along a trajectory (rigid bodies: total energy)."""
    if isinstance(sys, RigidBodySystem):
        return np.array([sys.energy(s) for s in trajectory])
    return np.asarray(sys.energy(trajectory.q, trajectory.p))
