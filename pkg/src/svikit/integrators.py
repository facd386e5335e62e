"""Time steppers.

Vector-space steppers take ``PhaseState`` objects whose arrays may carry a
leading ensemble axis, ``q.shape == (..., n)``, together with increments
``dB`` shaped ``(..., m)``.  Lie-group and rigid-body steppers act on one
realization at a time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import Blowup, NewtonDivergence, NumericalFailure, RankDeficientConstraint
from .geometry import _SERIES_CUTOFF, Retraction, dtau_inv_dual, tau
from .newton import UNDAMPED_ITERS, newton_solve
from .noise import BrownianPath, NoiseAudit, coarsen, refine
from .systems import (
    BLOWUP_NORM,
    LieBodyState,
    LieSystem,
    MechSystem,
    PhaseState,
    RigidBodySystem,
)

__all__ = [
    "StepperConfig",
    "svi_step_rn",
    "variational_euler_step",
    "svi_step_lie",
    "variational_euler_lie_step",
    "svi_step_constrained",
    "svi_step_rigid_bodies",
    "em_explicit_step",
    "em_implicit_step",
    "heun_step",
    "rigid_heun_step",
    "reference_solve",
    "reference_solve_increments",
    "Trajectory",
    "simulate",
    "simulate_rigid",
    "simulate_lie",
    "spatial_momentum_residual",
    "spatial_momentum_jacobian",
    "spatial_momentum_solve",
    "STEPPERS",
]


@dataclass(frozen=True)
class StepperConfig:
    h: float
    retraction: Retraction = Retraction.CAYLEY
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    constraint_tol: float = 1e-10

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if not (self.newton_tol > 0 and self.constraint_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        object.__setattr__(self, "retraction", Retraction.parse(self.retraction))

    def with_h(self, h: float) -> "StepperConfig":
        return StepperConfig(h, self.retraction, self.newton_tol, self.newton_max_iter, self.constraint_tol)


# ---------------------------------------------------------------------------
# vector spaces


def svi_step_rn(sys: MechSystem, state: PhaseState, dB, cfg: StepperConfig) -> PhaseState:
    """Stochastic variational Euler on R^n.

    p_{k+1} = p_k + h dL/dq(q_k, v_k) + h F(q_k, v_k) + sum_i grad gamma_i(q_k) B_i^k
    v_{k+1} = M^{-1} p_{k+1}
    q_{k+1} = q_k + h v_{k+1}
    """
    h = cfg.h
    q, v, p = state.q, state.v, state.p
    p1 = p + h * sys.drift_force(q, v) + sys.noise_force(q, dB)
    v1 = sys.velocity(p1)
    return PhaseState(q + h * v1, v1, p1)


def variational_euler_step(sys: MechSystem, state: PhaseState, cfg: StepperConfig) -> PhaseState:
    """Deterministic variational (symplectic) Euler, written independently."""
    h = cfg.h
    f = -sys.grad_potential(state.q)
    if sys.force is not None:
        f = f + sys.force(state.q, state.v)
    p1 = state.p + h * f
    v1 = p1 @ sys.minv.T
    return PhaseState(state.q + h * v1, v1, p1)


def svi_step_constrained(sys: MechSystem, state: PhaseState, dB, cfg: StepperConfig):
    """Constrained stochastic variational Euler (SHAKE-type multiplier placement).

    The unconstrained momentum update is augmented by ``h * G(q_k)^T lam``
    with ``G = dg/dq``, and ``lam`` is chosen so that ``g(q_{k+1}) = 0``.
    Returns ``(state, lam)``.
    """
    con = sys.constraint
    if con is None:
        raise ValueError(f"system {sys.name!r} has no constraint")
    h = cfg.h
    q, v, p = state.q, state.v, state.p
    p_free = p + h * sys.drift_force(q, v) + sys.noise_force(q, dB)
    G0 = con.jacobian(q)  # (..., k, n)
    MiGt = np.einsum("ij,...kj->...ik", sys.minv, G0)  # M^{-1} G^T, (..., n, k)
    q_free = q + h * sys.velocity(p_free)

    def q_of(lam):
        return q_free + h * h * np.einsum("...ik,...k->...i", MiGt, lam)

    def residual(lam):
        return con.value(q_of(lam))

    def jac(lam):
        J = h * h * np.einsum("...kn,...nj->...kj", con.jacobian(q_of(lam)), MiGt)
        c = np.linalg.cond(J)
        if np.any(~np.isfinite(c)) or np.any(c > 1e12):
            raise RankDeficientConstraint("constraint multiplier system is singular")
        return J

    lam0 = np.zeros(np.shape(q)[:-1] + (con.k,))
    jac(lam0)  # rank check even when lam = 0 already solves the system
    # g is O(|q|^2); scale the tolerance by the size of the configuration
    scale = np.zeros(np.shape(q)[:-1])
    lam, _ = newton_solve(residual, lam0, jac, cfg.constraint_tol, cfg.newton_max_iter, scale=scale)
    p1 = p_free + h * np.einsum("...kn,...k->...n", G0, lam)
    v1 = sys.velocity(p1)
    return PhaseState(q + h * v1, v1, p1), lam


def em_explicit_step(sys: MechSystem, state: PhaseState, dB, cfg: StepperConfig) -> PhaseState:
    """Explicit Euler-Maruyama: every right-hand side at step k."""
    h = cfg.h
    q, v, p = state.q, state.v, state.p
    q1 = q + h * v
    p1 = p + h * sys.drift_force(q, v) + sys.noise_force(q, dB)
    return PhaseState(q1, sys.velocity(p1), p1)


def em_implicit_step(sys: MechSystem, state: PhaseState, dB, cfg: StepperConfig) -> PhaseState:
    """Implicit Euler-Maruyama: drift at k+1, noise coefficient at k."""
    h = cfg.h
    q, p = state.q, state.p
    kick = p + sys.noise_force(q, dB)

    def residual(p1):
        v1 = sys.velocity(p1)
        return p1 - kick - h * sys.drift_force(q + h * v1, v1)

    p_guess = p + h * sys.drift_force(q, state.v) + (kick - p)
    p1, _ = newton_solve(residual, p_guess, None, cfg.newton_tol, cfg.newton_max_iter,
                         scale=np.max(np.abs(kick), axis=-1))
    v1 = sys.velocity(p1)
    return PhaseState(q + h * v1, v1, p1)


def heun_step(sys: MechSystem, state: PhaseState, dB, h: float) -> PhaseState:
    """Stochastic Heun (trapezoidal drift and diffusion) on the Ito form.

    The diffusion fields (0, grad gamma_i(q)) commute, so this is strong
    order one; its deterministic part is second order.
    """
    q, p = state.q, state.p
    v = sys.velocity(p)
    f0 = sys.drift_force(q, v)
    n0 = sys.noise_force(q, dB)
    qs = q + h * v
    ps = p + h * f0 + n0
    vs = sys.velocity(ps)
    q1 = q + 0.5 * h * (v + vs)
    p1 = p + 0.5 * h * (f0 + sys.drift_force(qs, vs)) + 0.5 * (n0 + sys.noise_force(qs, dB))
    if sys.constraint is not None:
        q1, p1 = _project(sys, q1, p1)
    return PhaseState(q1, sys.velocity(p1), p1)


def _project(sys: MechSystem, q, p):
    """Project onto g(q) = 0 along M^{-1} G^T, then p onto the tangent space."""
    con = sys.constraint
    for _ in range(20):
        g = con.value(q)
        if np.max(np.abs(g)) < 1e-14:
            break
        G = con.jacobian(q)
        MiGt = np.einsum("ij,...kj->...ik", sys.minv, G)
        A = np.einsum("...kn,...nj->...kj", G, MiGt)
        mu = np.linalg.solve(A, g[..., None])[..., 0]
        q = q - np.einsum("...ik,...k->...i", MiGt, mu)
    G = con.jacobian(q)
    MiGt = np.einsum("ij,...kj->...ik", sys.minv, G)
    A = np.einsum("...kn,...nj->...kj", G, MiGt)
    Gv = np.einsum("...kn,...n->...k", G, sys.velocity(p))
    mu = np.linalg.solve(A, Gv[..., None])[..., 0]
    p = p - np.einsum("...kn,...k->...n", G, mu)
    return q, p


# ---------------------------------------------------------------------------
# single body on SO(3), left trivialized


def _lie_solve(I, rhs, xi0, h, cfg: StepperConfig):
    kind = cfg.retraction

    def residual(xi):
        return dtau_inv_dual(kind, h * xi, I * xi) - rhs

    jac = None
    if kind is Retraction.CAYLEY:

        def jac(xi):
            m = I * xi
            A = np.diag(I)
            X = np.array([[0.0, -xi[2], xi[1]], [xi[2], 0.0, -xi[0]], [-xi[1], xi[0], 0.0]])
            Mh = np.array([[0.0, -m[2], m[1]], [m[2], 0.0, -m[0]], [-m[1], m[0], 0.0]])
            return A + 0.5 * h * (X @ A - Mh) + 0.25 * h * h * ((xi @ m) * np.eye(3) + 2.0 * np.outer(xi, m))

    xi, _ = newton_solve(residual, xi0, jac, cfg.newton_tol, cfg.newton_max_iter, scale=np.max(np.abs(rhs)))
    return xi


def svi_step_lie(sys: LieSystem, g, xi, mu, dB, cfg: StepperConfig):
    """Stochastic left-trivialized variational Euler for one body.

    (dtau^{-1}_{h xi_{k+1}})^* mu_{k+1} = (dtau^{-1}_{-h xi_k})^* mu_k + h l_g(g_k)
                                          + sum_i (gamma_i)_g(g_k) B_i^k
    g_{k+1} = g_k tau(h xi_{k+1}),  mu_{k+1} = I xi_{k+1}
    """
    h = cfg.h
    kind = cfg.retraction
    rhs = dtau_inv_dual(kind, -h * xi, mu) + h * sys.torque(g)
    for gam, b in zip(sys.noise_potentials, np.atleast_1d(dB)):
        rhs = rhs + gam.grad(g) * b
    xi1 = _lie_solve(sys.inertia, rhs, xi, h, cfg)
    return g @ tau(kind, h * xi1), xi1, sys.inertia * xi1


def variational_euler_lie_step(sys: LieSystem, g, xi, mu, cfg: StepperConfig):
    h = cfg.h
    kind = cfg.retraction
    rhs = dtau_inv_dual(kind, -h * xi, mu) + h * sys.torque(g)
    xi1 = _lie_solve(sys.inertia, rhs, xi, h, cfg)
    return g @ tau(kind, h * xi1), xi1, sys.inertia * xi1


# ---------------------------------------------------------------------------
# K rigid bodies, spatial angular quantities


_I3 = np.eye(3)


def _hat(a):
    a = np.asarray(a, dtype=float)
    X = np.zeros(a.shape + (3,))
    X[..., 0, 1], X[..., 0, 2], X[..., 1, 2] = -a[..., 2], a[..., 1], -a[..., 0]
    X[..., 1, 0], X[..., 2, 0], X[..., 2, 1] = a[..., 2], -a[..., 1], a[..., 0]
    return X


def _dot(a, b):
    return (a * b).sum(axis=-1)


def _mv(A, v):
    return (A @ v[..., None])[..., 0]


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(a.shape if a.shape == b.shape else np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _exp_coeffs(t2):
    # sin(th)/th, (1 - cos th)/th^2 and the dexp^{-1} coefficient, row-wise
    small = t2 < _SERIES_CUTOFF**2
    ts = np.where(small, 1.0, t2)
    th = np.sqrt(ts)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(th) / th)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(th)) / ts)
    c = np.where(small, 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0, (1.0 - 0.5 * th / np.tan(0.5 * th)) / ts)
    return a, b, c


def _retract_apply(kind, x, m):
    """tau(x) m for a batch of algebra elements x and vectors m."""
    xm = _cross(x, m)
    xxm = _cross(x, xm)
    t2 = _dot(x, x)
    if kind is Retraction.CAYLEY:
        f = (4.0 / (4.0 + t2))[..., None]
        return m + f * (xm + 0.5 * xxm)
    a, b, _ = _exp_coeffs(t2)
    return m + a[..., None] * xm + b[..., None] * xxm


def _dual_apply(kind, x, mu):
    """(dtau^{-1}_x)^* mu for a batch; agrees with geometry.dtau_inv_dual row by row."""
    xm = _cross(x, mu)
    if kind is Retraction.CAYLEY:
        return mu + 0.5 * xm + 0.25 * _dot(x, mu)[..., None] * x
    _, _, c = _exp_coeffs(_dot(x, x))
    return mu + 0.5 * xm + c[..., None] * _cross(x, xm)


def spatial_momentum_residual(kind, Is, rhs, w, h):
    """(dtau^{-1}_{h w})^* (tau(h w) Is w) - rhs, where tau(h w) Is w is the
    spatial momentum after the step (tau(h w) fixes w).  Rows of a batch
    ``w`` of shape (K, 3) are independent."""
    kind = Retraction.parse(kind)
    w = np.asarray(w, dtype=float)
    x = h * w
    return _dual_apply(kind, x, _retract_apply(kind, x, _mv(Is, w))) - rhs


def spatial_momentum_jacobian(Is, w, h):
    """Exact Jacobian of ``spatial_momentum_residual`` for the Cayley map."""
    w = np.asarray(w, dtype=float)
    x = h * w
    X = _hat(x)
    XX = X @ X
    t = (1.0 + 0.25 * _dot(x, x))[..., None, None]
    C = _I3 + (X + 0.5 * XX) / t  # cay(x)
    u = _mv(C, _mv(Is, w))
    xx = x[..., :, None] * x[..., None, :]
    D = _I3 + 0.5 * X + 0.25 * xx
    xu = x[..., :, None] * u[..., None, :]
    dD = -0.5 * _hat(u) + 0.25 * (xu + _dot(x, u)[..., None, None] * _I3)
    dcay = (_I3 + 0.5 * X) / t
    return h * dD + D @ (C @ Is - h * _hat(u) @ dcay)


def _mm(A, B):
    return [[A[i][0] * B[0][j] + A[i][1] * B[1][j] + A[i][2] * B[2][j] for j in range(3)] for i in range(3)]


def _solve3(J, r):
    # Cramer's rule; None when singular
    a, b, c = J
    c0 = (b[1] * c[2] - b[2] * c[1], b[2] * c[0] - b[0] * c[2], b[0] * c[1] - b[1] * c[0])
    det = a[0] * c0[0] + a[1] * c0[1] + a[2] * c0[2]
    if det == 0.0 or det != det:
        return None
    c1 = (c[1] * a[2] - c[2] * a[1], c[2] * a[0] - c[0] * a[2], c[0] * a[1] - c[1] * a[0])
    c2 = (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])
    return [(c0[i] * r[0] + c1[i] * r[1] + c2[i] * r[2]) / det for i in range(3)]


def _cayley_body_newton(Is, rhs, w, h, bound, iters):
    """Plain Newton for one body with the Cayley map, in scalar arithmetic
    (numpy call overhead dominates on 3-vectors).  Returns None when it has
    not converged within ``iters`` iterations."""
    for _ in range(iters + 1):
        x0, x1, x2 = h * w[0], h * w[1], h * w[2]
        m = [Is[i][0] * w[0] + Is[i][1] * w[1] + Is[i][2] * w[2] for i in range(3)]
        X = [[0.0, -x2, x1], [x2, 0.0, -x0], [-x1, x0, 0.0]]
        X2 = _mm(X, X)
        t = 1.0 + 0.25 * (x0 * x0 + x1 * x1 + x2 * x2)
        C = [[(i == j) + (X[i][j] + 0.5 * X2[i][j]) / t for j in range(3)] for i in range(3)]
        u = [C[i][0] * m[0] + C[i][1] * m[1] + C[i][2] * m[2] for i in range(3)]
        x = (x0, x1, x2)
        xu = x0 * u[0] + x1 * u[1] + x2 * u[2]
        D = [[(i == j) + 0.5 * X[i][j] + 0.25 * x[i] * x[j] for j in range(3)] for i in range(3)]
        r = [D[i][0] * u[0] + D[i][1] * u[1] + D[i][2] * u[2] - rhs[i] for i in range(3)]
        if max(abs(r[0]), abs(r[1]), abs(r[2])) <= bound:
            return w
        U = [[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]]
        dcay = [[((i == j) + 0.5 * X[i][j]) / t for j in range(3)] for i in range(3)]
        CI = _mm(C, Is)
        Ud = _mm(U, dcay)
        A = [[CI[i][j] - h * Ud[i][j] for j in range(3)] for i in range(3)]
        DA = _mm(D, A)
        J = [[h * (-0.5 * U[i][j] + 0.25 * (x[i] * u[j] + xu * (i == j))) + DA[i][j] for j in range(3)]
             for i in range(3)]
        dw = _solve3(J, r)
        if dw is None:
            return None
        w = [w[0] - dw[0], w[1] - dw[1], w[2] - dw[2]]
    return None


def spatial_momentum_solve(kind, Is, rhs, w0, h, cfg: StepperConfig):
    """Solve for the new spatial angular velocity; batches of bodies are
    solved together, each row to its own tolerance.  The exponential map
    reuses the Cayley Jacobian, which differs from its own by O(h^2 |w|^2)."""
    kind = Retraction.parse(kind)
    scale = np.max(np.abs(rhs), axis=-1)
    if kind is Retraction.CAYLEY and np.ndim(w0) == 2:
        rows = []
        for Ii, ri, wi, si in zip(Is.tolist(), rhs.tolist(), np.asarray(w0).tolist(), scale.tolist()):
            rows.append(_cayley_body_newton(Ii, ri, wi, h, cfg.newton_tol * (1.0 + si), UNDAMPED_ITERS))
            if rows[-1] is None:
                break
        else:
            return np.array(rows)
    w, _ = newton_solve(
        lambda w: spatial_momentum_residual(kind, Is, rhs, w, h),
        w0, lambda w: spatial_momentum_jacobian(Is, w, h), cfg.newton_tol, cfg.newton_max_iter, scale=scale,
    )
    return w


def svi_step_rigid_bodies(sys: RigidBodySystem, state: LieBodyState, dB, cfg: StepperConfig) -> LieBodyState:
    """Stochastic variational Euler for interacting rigid bodies.

    x' = x + h v',  p' = p - h U_x + sum_q (gamma_q)_x B_q,  p' = m v'
    R' = tau(h w') R
    (dtau^{-1}_{h w'})^* pi' = (dtau^{-1}_{h w})^* pi - h U_R + sum_q (gamma_q)_R B_q
    pi' = R' I R'^T w'
    Optional linear drag enters as -h c v and -h c w on the right-hand sides.
    Only the rotational momentum update is implicit (one 3x3 solve per body).
    """
    h = cfg.h
    kind = cfg.retraction
    x, R = state.x, state.R
    dB = np.atleast_1d(np.asarray(dB, dtype=float))
    fx = -h * sys.grad_x(x, R)
    fR = -h * sys.grad_R(x, R)
    for gam, b in zip(sys.noise_potentials, dB):
        fx = fx + gam.grad_x(x, R) * b
        fR = fR + gam.grad_R(x, R) * b
    if sys.drag_linear:
        fx = fx - h * sys.drag_linear * state.v
    if sys.drag_angular:
        fR = fR - h * sys.drag_angular * state.w

    p1 = state.p + fx
    v1 = p1 / sys.masses[:, None]
    x1 = x + h * v1

    kind = Retraction.parse(kind)
    Is = _spatial_inertias(sys, R)
    rhs = _dual_apply(kind, h * state.w, state.pi) + fR
    w1 = spatial_momentum_solve(kind, Is, rhs, state.w, h, cfg)
    R1 = np.stack([tau(kind, h * w1[i]) @ R[i] for i in range(sys.n_bodies)])
    pi1 = _mv(_spatial_inertias(sys, R1), w1)
    return LieBodyState(x1, v1, p1, R1, w1, pi1)


def _spatial_inertias(sys: RigidBodySystem, R):
    return (R * sys.inertias[:, None, :]) @ np.swapaxes(R, -1, -2)


def rigid_heun_step(sys: RigidBodySystem, state: LieBodyState, dB, h: float) -> LieBodyState:
    """Fine-step reference for rigid bodies: Heun on (x, p, pi) with the
    orientation advanced by exp of the averaged spatial angular velocity."""
    dB = np.atleast_1d(np.asarray(dB, dtype=float))

    def rates(x, p, R, pi):
        v = p / sys.masses[:, None]
        w = np.stack([np.linalg.solve(sys.spatial_inertia(i, R[i]), pi[i]) for i in range(sys.n_bodies)])
        fx = -sys.grad_x(x, R) - sys.drag_linear * v
        fR = -sys.grad_R(x, R) - sys.drag_angular * w
        nx = np.zeros_like(x)
        nR = np.zeros_like(x)
        for gam, b in zip(sys.noise_potentials, dB):
            nx = nx + gam.grad_x(x, R) * b
            nR = nR + gam.grad_R(x, R) * b
        return v, w, fx, fR, nx, nR

    x, p, R, pi = state.x, state.p, state.R, state.pi
    v0, w0, fx0, fR0, nx0, nR0 = rates(x, p, R, pi)
    xs = x + h * v0
    ps = p + h * fx0 + nx0
    Rs = np.stack([tau(Retraction.EXPONENTIAL, h * w0[i]) @ R[i] for i in range(sys.n_bodies)])
    pis = pi + h * fR0 + nR0
    v1s, w1s, fx1, fR1, nx1, nR1 = rates(xs, ps, Rs, pis)
    x1 = x + 0.5 * h * (v0 + v1s)
    p1 = p + 0.5 * h * (fx0 + fx1) + 0.5 * (nx0 + nx1)
    R1 = np.stack([tau(Retraction.EXPONENTIAL, 0.5 * h * (w0[i] + w1s[i])) @ R[i] for i in range(sys.n_bodies)])
    pi1 = pi + 0.5 * h * (fR0 + fR1) + 0.5 * (nR0 + nR1)
    v1 = p1 / sys.masses[:, None]
    w1 = np.stack([np.linalg.solve(sys.spatial_inertia(i, R1[i]), pi1[i]) for i in range(sys.n_bodies)])
    return LieBodyState(x1, v1, p1, R1, w1, pi1)


# ---------------------------------------------------------------------------
# drivers


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray  # (T, ..., n)
    v: np.ndarray
    p: np.ndarray
    audit: Optional[str] = None
    multipliers: Optional[np.ndarray] = None

    def state(self, k: int) -> PhaseState:
        return PhaseState(self.q[k], self.v[k], self.p[k])

    @property
    def final(self) -> PhaseState:
        return self.state(-1)


def _check_blowup(z, k):
    if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > BLOWUP_NORM:
        raise Blowup(f"state norm exceeded {BLOWUP_NORM:g}", step=k)


def _svi_constrained_stepper(sys, state, dB, cfg):
    return svi_step_constrained(sys, state, dB, cfg)


STEPPERS: dict[str, Callable] = {
    "svi": svi_step_rn,
    "svi-constrained": _svi_constrained_stepper,
    "eem": em_explicit_step,
    "iem": em_implicit_step,
    "reference": lambda sys, state, dB, cfg: heun_step(sys, state, dB, cfg.h),
}


def simulate(sys: MechSystem, method: str, state0: PhaseState, increments, cfg: StepperConfig,
             t0: float = 0.0, record_every: int = 1) -> Trajectory:
    """Run a vector-space stepper over ``increments`` shaped (N, ..., m).

    Records every ``record_every``-th state (plus the final one) and a digest
    of the increment sequence actually consumed.
    """
    try:
        step = STEPPERS[method]
    except KeyError:
        raise KeyError(f"no vector-space stepper named {method!r}") from None
    increments = np.asarray(increments, dtype=float)
    N = increments.shape[0]
    audit = NoiseAudit()
    state = state0.copy()
    ts, qs, vs, ps, lams = [t0], [state.q], [state.v], [state.p], []
    for k in range(N):
        dB = increments[k]
        audit.record(dB)
        try:
            out = step(sys, state, dB, cfg)
        except NumericalFailure as exc:
            exc.step = k
            raise
        if isinstance(out, tuple):
            state, lam = out
            lams.append(lam)
        else:
            state = out
        _check_blowup(state.q, k)
        _check_blowup(state.p, k)
        if (k + 1) % record_every == 0 or k == N - 1:
            ts.append(t0 + (k + 1) * cfg.h)
            qs.append(state.q)
            vs.append(state.v)
            ps.append(state.p)
    return Trajectory(
        np.array(ts), np.array(qs), np.array(vs), np.array(ps), audit.hexdigest(),
        np.array(lams) if lams else None,
    )


def simulate_rigid(sys: RigidBodySystem, state0: LieBodyState, increments, cfg: StepperConfig,
                   method: str = "svi-rigid", record_every: int = 1, observe=None):
    """Run a rigid-body stepper.  ``observe(k, state)`` is called after every
    step when given; recorded states are returned as a list."""
    increments = np.asarray(increments, dtype=float)
    if method == "svi-rigid":
        step = lambda s, dB: svi_step_rigid_bodies(sys, s, dB, cfg)  # noqa: E731
    elif method == "reference":
        step = lambda s, dB: rigid_heun_step(sys, s, dB, cfg.h)  # noqa: E731
    else:
        raise KeyError(f"no rigid-body stepper named {method!r}")
    audit = NoiseAudit()
    state = state0.copy()
    out = [state]
    for k in range(increments.shape[0]):
        audit.record(increments[k])
        try:
            state = step(state, increments[k])
        except NumericalFailure as exc:
            exc.step = k
            raise
        _check_blowup(state.flat(), k)
        if observe is not None:
            observe(k, state)
        if (k + 1) % record_every == 0 or k == increments.shape[0] - 1:
            out.append(state)
    return out, audit.hexdigest()


def simulate_lie(sys: LieSystem, g0, xi0, mu0, increments, cfg: StepperConfig, record_every: int = 1):
    """Run ``svi_step_lie``; returns recorded (g, xi, mu) triples and the noise digest."""
    increments = np.asarray(increments, dtype=float)
    audit = NoiseAudit()
    g, xi, mu = np.array(g0, dtype=float), np.array(xi0, dtype=float), np.array(mu0, dtype=float)
    out = [(g, xi, mu)]
    N = increments.shape[0]
    for k in range(N):
        audit.record(increments[k])
        try:
            g, xi, mu = svi_step_lie(sys, g, xi, mu, increments[k], cfg)
        except NumericalFailure as exc:
            exc.step = k
            raise
        _check_blowup(mu, k)
        if (k + 1) % record_every == 0 or k == N - 1:
            out.append((g, xi, mu))
    return out, audit.hexdigest()


def _increments_at(path: BrownianPath, levels: int) -> np.ndarray:
    while path.levels < levels:
        path = refine(path)
    inc = path.steps()
    if path.levels > levels:
        inc = coarsen(inc, 1 << (path.levels - levels), axis=0)
    return inc


def reference_solve(sys, state0, path: BrownianPath, levels_ref: int, record_every: int = 1):
    """Fine-step oracle on the dyadic grid of level ``levels_ref``, driven by
    the (refined) path.  Vector-space systems use stochastic Heun (with
    projection when constrained); rigid-body systems use ``rigid_heun_step``."""
    a, b = path.horizon
    inc = _increments_at(path, levels_ref)
    h = (b - a) / inc.shape[0]
    cfg = StepperConfig(h)
    if isinstance(sys, RigidBodySystem):
        states, _ = simulate_rigid(sys, state0, inc, cfg, method="reference", record_every=record_every)
        return states
    return simulate(sys, "reference", state0, inc, cfg, t0=a, record_every=record_every)


def reference_solve_increments(sys: MechSystem, state0: PhaseState, increments, h: float) -> PhaseState:
    """Ensemble form: increments (N, M, m) at the reference resolution; returns
    only the endpoint."""
    state = state0.copy()
    for k in range(increments.shape[0]):
        state = heun_step(sys, state, increments[k], h)
        _check_blowup(state.p, k)
    return state


