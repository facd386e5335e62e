"""Model catalog: mechanical systems on R^n, a single rigid body on SO(3),
and collections of rigid bodies in SE(3).

Vector-space systems evaluate on arrays shaped ``(..., n)`` so a whole
ensemble can be stepped at once.  Rigid-body systems work per realization.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidSystem, InvalidTemperature
from .geometry import tau, vee

__all__ = [
    "NoisePotential",
    "Constraint",
    "Symmetry",
    "MechSystem",
    "PhaseState",
    "LieSystem",
    "RigidNoise",
    "RigidBodySystem",
    "LieBodyState",
    "make_oscillator",
    "make_coupled",
    "make_two_body",
    "make_constrained_pendulum",
    "make_ballistic_analog",
    "make_lattice",
    "make_free_body",
    "make_heavy_top",
    "make_rigid_pair",
    "make_rigid_top",
    "gradient_error",
    "BLOWUP_NORM",
    "rotation_derivative_error",
]

BLOWUP_NORM = 1e8


@dataclass(frozen=True)
class NoisePotential:
    """Stochastic potential gamma(q) and its gradient."""

    value: Callable
    grad: Callable


@dataclass(frozen=True)
class Constraint:
    value: Callable  # (..., n) -> (..., k)
    jacobian: Callable  # (..., n) -> (..., k, n)
    k: int


@dataclass(frozen=True)
class Symmetry:
    """Infinitesimal generator q -> xi_Q(q); the momentum map is <p, xi_Q(q)>."""

    name: str
    generator: Callable

    def momentum(self, q, p):
        return np.sum(np.asarray(p) * self.generator(np.asarray(q)), axis=-1)


@dataclass(frozen=True)
class MechSystem:
    name: str
    mass: np.ndarray
    potential: Callable
    grad_potential: Callable
    noise_potentials: tuple = ()
    force: Optional[Callable] = None
    constraint: Optional[Constraint] = None
    symmetries: tuple = ()
    params: dict = field(default_factory=dict)
    temperature: Optional[float] = None  # k_B T for fluctuation-dissipation models
    gibbs_sampler: Optional[Callable] = None  # (rng, count) -> q samples (count, n)

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.mass, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise InvalidSystem("mass matrix must be square")
        if not np.allclose(M, M.T, rtol=0, atol=1e-14 * (1 + np.abs(M).max())):
            raise InvalidSystem("mass matrix must be symmetric")
        if np.linalg.eigvalsh(M).min() <= 0:
            raise InvalidSystem("mass matrix must be positive definite")
        object.__setattr__(self, "mass", M)
        object.__setattr__(self, "_minv", np.linalg.inv(M))
        object.__setattr__(self, "noise_potentials", tuple(self.noise_potentials))
        object.__setattr__(self, "symmetries", tuple(self.symmetries))

    @property
    def dim(self) -> int:
        return self.mass.shape[0]

    @property
    def n_noise(self) -> int:
        return len(self.noise_potentials)

    @property
    def minv(self) -> np.ndarray:
        return self._minv

    def velocity(self, p):
        return p @ self._minv.T

    def momentum(self, v):
        return v @ self.mass.T

    def kinetic(self, p):
        return 0.5 * np.sum(p * self.velocity(p), axis=-1)

    def energy(self, q, p):
        return self.kinetic(p) + self.potential(q)

    def noise_matrix(self, q) -> np.ndarray:
        """Columns are grad gamma_i(q); shape (..., n, m)."""
        q = np.asarray(q, dtype=float)
        if not self.noise_potentials:
            return np.zeros(q.shape + (0,))
        cols = [np.broadcast_to(g.grad(q), q.shape) for g in self.noise_potentials]
        return np.stack(cols, axis=-1)

    def noise_force(self, q, dB):
        """sum_i grad gamma_i(q) dB_i with dB shaped (..., m)."""
        if not self.noise_potentials:
            return np.zeros(np.shape(q))
        return np.einsum("...nm,...m->...n", self.noise_matrix(q), dB)

    def drift_force(self, q, v):
        f = -self.grad_potential(q)
        if self.force is not None:
            f = f + self.force(q, v)
        return f

    def without_noise(self) -> "MechSystem":
        zero = NoisePotential(lambda q: np.zeros(np.shape(q)[:-1]), lambda q: np.zeros(np.shape(q)))
        return dataclasses.replace(self, noise_potentials=tuple(zero for _ in self.noise_potentials))

    def symmetry(self, name: str) -> Symmetry:
        for s in self.symmetries:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass
class PhaseState:
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray

    @classmethod
    def from_qp(cls, sys: MechSystem, q, p) -> "PhaseState":
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return cls(q, sys.velocity(p), p)

    @classmethod
    def from_qv(cls, sys: MechSystem, q, v) -> "PhaseState":
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        return cls(q, v, sys.momentum(v))

    def copy(self) -> "PhaseState":
        return PhaseState(self.q.copy(), self.v.copy(), self.p.copy())

    def legendre_defect(self, sys: MechSystem) -> float:
        return float(np.max(np.abs(self.p - sys.momentum(self.v))))

    def norm(self) -> float:
        return float(max(np.max(np.abs(self.q)), np.max(np.abs(self.p))))


def gradient_error(f, grad, points, eps: float = 1e-5) -> float:
    """Max relative mismatch between ``grad`` and central differences of ``f``."""
    worst = 0.0
    for x in np.atleast_2d(points):
        g = np.asarray(grad(x), dtype=float).reshape(-1)
        fd = np.empty_like(g)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = eps
            fd[i] = (f(x + e) - f(x - e)) / (2 * eps)
        worst = max(worst, float(np.max(np.abs(g - fd)) / (1.0 + np.max(np.abs(g)))))
    return worst


# ---------------------------------------------------------------------------
# vector-space catalog


def _linear_noise(sigma, index, n):
    e = np.zeros(n)
    e[index] = sigma
    return NoisePotential(lambda q: sigma * q[..., index], lambda q: np.broadcast_to(e, np.shape(q)))


def make_oscillator(mass: float = 1.0, stiffness: float = 1.0, sigma: float = 0.0) -> MechSystem:
    """Harmonic oscillator with additive momentum noise, gamma = sigma*q."""
    if mass <= 0:
        raise InvalidSystem("mass must be positive")
    if stiffness < 0:
        raise InvalidSystem("stiffness must be non-negative")
    k = float(stiffness)
    return MechSystem(
        name="oscillator",
        mass=np.array([[float(mass)]]),
        potential=lambda q: 0.5 * k * q[..., 0] ** 2,
        grad_potential=lambda q: k * q,
        noise_potentials=(_linear_noise(float(sigma), 0, 1),),
        params=dict(mass=mass, stiffness=stiffness, sigma=sigma),
    )


def make_coupled(mass1=1.0, mass2=2.0, stiffness1=1.0, stiffness2=0.5, quartic=0.3, sigma=0.5) -> MechSystem:
    """Two anharmonically coupled oscillators with configuration-dependent noise.

    U = k1 q1^2/2 + k2 q2^2/2 + beta (q1 - q2)^4 / 4,
    gamma_1 = sigma sin(q1), gamma_2 = sigma q1 q2.
    """
    k1, k2, b, s = map(float, (stiffness1, stiffness2, quartic, sigma))

    def U(q):
        d = q[..., 0] - q[..., 1]
        return 0.5 * k1 * q[..., 0] ** 2 + 0.5 * k2 * q[..., 1] ** 2 + 0.25 * b * d**4

    def dU(q):
        d3 = b * (q[..., 0] - q[..., 1]) ** 3
        return np.stack([k1 * q[..., 0] + d3, k2 * q[..., 1] - d3], axis=-1)

    g1 = NoisePotential(
        lambda q: s * np.sin(q[..., 0]),
        lambda q: np.stack([s * np.cos(q[..., 0]), np.zeros_like(q[..., 0])], axis=-1),
    )
    g2 = NoisePotential(
        lambda q: s * q[..., 0] * q[..., 1],
        lambda q: np.stack([s * q[..., 1], s * q[..., 0]], axis=-1),
    )
    return MechSystem(
        name="coupled",
        mass=np.diag([float(mass1), float(mass2)]),
        potential=U,
        grad_potential=dU,
        noise_potentials=(g1, g2),
        params=dict(mass1=mass1, mass2=mass2, stiffness1=stiffness1, stiffness2=stiffness2, quartic=quartic, sigma=sigma),
    )


def make_two_body(mass1=1.0, mass2=3.0, stiffness=2.0, quartic=0.1, sigma=0.4, anchored_noise=0.0) -> MechSystem:
    """Two particles in R^3 joined by a nonlinear spring, q = (x1, x2).

    Noise acts through gamma_j = sigma (x1 - x2)_j and gamma_3 = sigma |x1 - x2|^2 / 2,
    all translation invariant.  ``anchored_noise`` adds gamma = a * x1_0, which
    breaks the symmetry (the translation symmetries are then not declared).
    """
    m1, m2, k, b, s, a = map(float, (mass1, mass2, stiffness, quartic, sigma, anchored_noise))

    def rel(q):
        return q[..., :3] - q[..., 3:]

    def U(q):
        r2 = np.sum(rel(q) ** 2, axis=-1)
        return 0.5 * k * r2 + 0.25 * b * r2**2

    def dU(q):
        d = rel(q)
        f = (k + b * np.sum(d**2, axis=-1))[..., None] * d
        return np.concatenate([f, -f], axis=-1)

    noises = []
    for j in range(3):
        e = np.zeros(6)
        e[j], e[3 + j] = s, -s
        noises.append(NoisePotential(lambda q, j=j: s * rel(q)[..., j], lambda q, e=e: np.broadcast_to(e, np.shape(q))))
    noises.append(
        NoisePotential(
            lambda q: 0.5 * s * np.sum(rel(q) ** 2, axis=-1),
            lambda q: np.concatenate([s * rel(q), -s * rel(q)], axis=-1),
        )
    )
    syms = ()
    if a != 0.0:
        noises.append(_linear_noise(a, 0, 6))
    else:
        syms = tuple(
            Symmetry(f"translation_{'xyz'[j]}", lambda q, j=j: np.broadcast_to(np.eye(6)[j] + np.eye(6)[3 + j], np.shape(q)))
            for j in range(3)
        )
    return MechSystem(
        name="two_body",
        mass=np.diag([m1] * 3 + [m2] * 3),
        potential=U,
        grad_potential=dU,
        noise_potentials=tuple(noises),
        symmetries=syms,
        params=dict(mass1=mass1, mass2=mass2, stiffness=stiffness, quartic=quartic, sigma=sigma, anchored_noise=anchored_noise),
    )


def make_constrained_pendulum(length=1.0, mass=1.0, gravity=9.81, sigma=0.0) -> MechSystem:
    """Particle in the plane on the circle |q| = length, under gravity along -y.

    Noise gamma = sigma q_x pushes horizontally.
    """
    if length <= 0 or mass <= 0:
        raise InvalidSystem("length and mass must be positive")
    L, m, g, s = map(float, (length, mass, gravity, sigma))
    grav = np.array([0.0, m * g])
    con = Constraint(
        value=lambda q: (np.sum(q**2, axis=-1) - L * L)[..., None],
        jacobian=lambda q: 2.0 * np.asarray(q)[..., None, :],
        k=1,
    )
    return MechSystem(
        name="constrained_pendulum",
        mass=m * np.eye(2),
        potential=lambda q: m * g * q[..., 1],
        grad_potential=lambda q: np.broadcast_to(grav, np.shape(q)),
        noise_potentials=(_linear_noise(s, 0, 2),),
        constraint=con,
        params=dict(length=length, mass=mass, gravity=gravity, sigma=sigma),
    )


def make_ballistic_analog(
    temperature=1.0,
    drag=0.5,
    pendulum_mass=40.0,
    pendulum_stiffness=5.0,
    projectile_mass=1.0,
    coupling=0.05,
) -> MechSystem:
    """Heavy pendulum weakly coupled to a light thermostatted projectile.

    q = (angle, projectile position);
    U = a (1 - cos q1) + kc (q2 - q1)^2 / 2.
    Drag -c v2 and noise gamma = sigma q2 act on the projectile momentum only,
    so diffusion and drift in momentum are degenerate.  sigma^2 = 2 c kT.
    """
    kT = float(temperature)
    if not kT > 0:
        raise InvalidTemperature(f"temperature must be positive, got {temperature}")
    c = float(drag)
    if c < 0:
        raise InvalidSystem("drag must be non-negative")
    a, kc = float(pendulum_stiffness), float(coupling)
    sigma = np.sqrt(2.0 * c * kT)

    def U(q):
        return a * (1.0 - np.cos(q[..., 0])) + 0.5 * kc * (q[..., 1] - q[..., 0]) ** 2

    def dU(q):
        d = kc * (q[..., 1] - q[..., 0])
        return np.stack([a * np.sin(q[..., 0]) - d, d], axis=-1)

    def F(q, v):
        return np.stack([np.zeros_like(v[..., 0]), -c * v[..., 1]], axis=-1)

    def gibbs(rng, count):
        # angle by rejection from exp(-a(1 - cos)/kT) on (-pi, pi]; spring stretch is Gaussian
        out = np.empty(0)
        while out.size < count:
            x = rng.uniform(-np.pi, np.pi, 2 * count)
            u = rng.uniform(size=2 * count)
            out = np.concatenate([out, x[u < np.exp(-a * (1.0 - np.cos(x)) / kT)]])
        q1 = out[:count]
        q2 = q1 + rng.standard_normal(count) * np.sqrt(kT / kc) if kc > 0 else q1
        return np.stack([q1, q2], axis=-1)

    return MechSystem(
        name="ballistic_analog",
        mass=np.diag([float(pendulum_mass), float(projectile_mass)]),
        potential=U,
        grad_potential=dU,
        noise_potentials=(_linear_noise(sigma, 1, 2),),
        force=F,
        params=dict(
            temperature=temperature,
            drag=drag,
            pendulum_mass=pendulum_mass,
            pendulum_stiffness=pendulum_stiffness,
            projectile_mass=projectile_mass,
            coupling=coupling,
            sigma=float(sigma),
        ),
        temperature=kT,
        gibbs_sampler=gibbs,
    )


def make_lattice(n=8, mass=1.0, stiffness=1.0, cubic=0.0, quartic=0.25, temperature=1.0, drag=0.5) -> MechSystem:
    """FPU-type chain with fixed ends; the two end masses are thermostatted."""
    kT = float(temperature)
    if not kT > 0:
        raise InvalidTemperature(f"temperature must be positive, got {temperature}")
    n = int(n)
    k, al, be, c = map(float, (stiffness, cubic, quartic, drag))
    sigma = np.sqrt(2.0 * c * kT)

    def bonds(q):
        z = np.zeros(q.shape[:-1] + (1,))
        return np.diff(np.concatenate([z, q, z], axis=-1), axis=-1)

    def U(q):
        r = bonds(q)
        return np.sum(0.5 * k * r**2 + al * r**3 / 3 + 0.25 * be * r**4, axis=-1)

    def dU(q):
        r = bonds(q)
        t = k * r + al * r**2 + be * r**3
        return t[..., :-1] - t[..., 1:]

    ends = np.zeros(n)
    ends[0] = ends[-1] = 1.0

    def F(q, v):
        return -c * ends * v

    return MechSystem(
        name="lattice",
        mass=float(mass) * np.eye(n),
        potential=U,
        grad_potential=dU,
        noise_potentials=(_linear_noise(sigma, 0, n), _linear_noise(sigma, n - 1, n)),
        force=F,
        params=dict(n=n, mass=mass, stiffness=stiffness, cubic=cubic, quartic=quartic, temperature=temperature, drag=drag),
        temperature=kT,
    )


# ---------------------------------------------------------------------------
# single rigid body, left trivialized (body frame)


@dataclass(frozen=True)
class LieSystem:
    """Rigid body on SO(3) with l(g, xi) = xi.I xi / 2 - U(g).

    ``torque(g)`` returns the left-trivialized differential l_g = -dU, i.e.
    ``torque(g).y = -d/dt U(g tau(t y))``; noise gradients follow the same
    convention.
    """

    name: str
    inertia: np.ndarray
    potential: Callable
    torque: Callable
    noise_potentials: tuple = ()  # of NoisePotential on rotations
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        I = np.asarray(self.inertia, dtype=float)
        if I.shape != (3,) or np.any(I <= 0):
            raise InvalidSystem("inertia must be three positive principal moments")
        object.__setattr__(self, "inertia", I)
        object.__setattr__(self, "noise_potentials", tuple(self.noise_potentials))

    @property
    def n_noise(self) -> int:
        return len(self.noise_potentials)

    def energy(self, g, xi):
        return 0.5 * xi @ (self.inertia * xi) + self.potential(g)


def make_free_body(inertia=(1.0, 2.0, 3.0)) -> LieSystem:
    return LieSystem(
        name="free_body",
        inertia=np.asarray(inertia, dtype=float),
        potential=lambda R: 0.0,
        torque=lambda R: np.zeros(3),
        params=dict(inertia=list(inertia)),
    )


def make_heavy_top(inertia=(1.0, 2.0, 3.0), mass=1.0, gravity=1.0, com=(0.0, 0.0, 0.5), sigma=0.0) -> LieSystem:
    """Heavy top, U(R) = m g e3.(R chi), with body-frame torque noise
    gamma(R) = sigma e1.(R chi)."""
    mg = float(mass) * float(gravity)
    chi = np.asarray(com, dtype=float)
    s = float(sigma)
    e1, e3 = np.eye(3)[0], np.eye(3)[2]
    noise = NoisePotential(lambda R: s * e1 @ (R @ chi), lambda R: s * np.cross(chi, R.T @ e1))
    return LieSystem(
        name="heavy_top",
        inertia=np.asarray(inertia, dtype=float),
        potential=lambda R: mg * e3 @ (R @ chi),
        torque=lambda R: -mg * np.cross(chi, R.T @ e3),
        noise_potentials=(noise,),
        params=dict(inertia=list(inertia), mass=mass, gravity=gravity, com=list(com), sigma=sigma),
    )


# ---------------------------------------------------------------------------
# K rigid bodies, spatial (right-trivialized) angular quantities


@dataclass(frozen=True)
class RigidNoise:
    """gamma(x, R) with d/dx (K,3) and right-trivialized d/dR (K,3)."""

    value: Callable
    grad_x: Callable
    grad_R: Callable


@dataclass(frozen=True)
class RigidBodySystem:
    name: str
    masses: np.ndarray
    inertias: np.ndarray  # (K, 3) principal moments
    potential: Callable  # (x (K,3), R (K,3,3)) -> float
    grad_x: Callable  # -> (K, 3)
    grad_R: Callable  # -> (K, 3), U_R . y = d/dt U(tau(t y) R)
    noise_potentials: tuple = ()
    drag_linear: float = 0.0
    drag_angular: float = 0.0
    symmetries: tuple = ()  # names of translation symmetries
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.masses, dtype=float))
        I = np.atleast_2d(np.asarray(self.inertias, dtype=float))
        if m.ndim != 1 or m.size < 1 or np.any(m <= 0):
            raise InvalidSystem("masses must be positive")
        if I.shape != (m.size, 3) or np.any(I <= 0):
            raise InvalidSystem("inertias must be (K, 3) positive principal moments")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "inertias", I)
        object.__setattr__(self, "noise_potentials", tuple(self.noise_potentials))
        object.__setattr__(self, "symmetries", tuple(self.symmetries))

    @property
    def n_bodies(self) -> int:
        return self.masses.size

    @property
    def n_noise(self) -> int:
        return len(self.noise_potentials)

    def spatial_inertia(self, i: int, R) -> np.ndarray:
        return (R * self.inertias[i]) @ R.T

    def energy(self, state: "LieBodyState") -> float:
        kin = 0.5 * np.sum(state.p * state.v) + 0.5 * np.sum(state.w * state.pi)
        return float(kin + self.potential(state.x, state.R))


@dataclass
class LieBodyState:
    x: np.ndarray  # (K, 3)
    v: np.ndarray
    p: np.ndarray
    R: np.ndarray  # (K, 3, 3)
    w: np.ndarray  # spatial angular velocity
    pi: np.ndarray  # spatial angular momentum

    @classmethod
    def from_velocities(cls, sys: RigidBodySystem, x, v, R, w) -> "LieBodyState":
        x = np.array(x, dtype=float).reshape(-1, 3)
        v = np.array(v, dtype=float).reshape(-1, 3)
        R = np.array(R, dtype=float).reshape(-1, 3, 3)
        w = np.array(w, dtype=float).reshape(-1, 3)
        p = sys.masses[:, None] * v
        pi = np.stack([sys.spatial_inertia(i, R[i]) @ w[i] for i in range(sys.n_bodies)])
        return cls(x, v, p, R, w, pi)

    def copy(self) -> "LieBodyState":
        return LieBodyState(self.x.copy(), self.v.copy(), self.p.copy(), self.R.copy(), self.w.copy(), self.pi.copy())

    def legendre_defect(self, sys: RigidBodySystem) -> tuple[float, float]:
        lin = np.max(np.abs(self.p - sys.masses[:, None] * self.v))
        ang = max(np.max(np.abs(self.pi[i] - sys.spatial_inertia(i, self.R[i]) @ self.w[i])) for i in range(sys.n_bodies))
        return float(lin), float(ang)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.v.ravel(), self.p.ravel(), self.R.ravel(), self.w.ravel(), self.pi.ravel()])


_TRANSLATIONS = ("translation_x", "translation_y", "translation_z")


def make_rigid_pair(
    masses=(1.0, 2.0),
    inertias=((1.0, 2.0, 3.0), (2.0, 2.5, 1.5)),
    stiffness=1.0,
    orientation_coupling=0.5,
    sigma=0.2,
    sigma_rot=0.1,
    drag_linear=0.0,
    drag_angular=0.0,
) -> RigidBodySystem:
    """Bodies coupled by U = k |x1 - x2|^2 / 2 - kr tr(R1^T R2).

    Noise: gamma_j = sigma (x1 - x2)_j for j = 0..2, and
    gamma_3 = sigma_rot tr(R1^T R2).  Everything is invariant under common
    translations, so total linear momentum is a declared symmetry.  With
    ``len(masses) == 1`` the second body is dropped together with every
    coupling term, giving a free body.
    """
    m = np.atleast_1d(np.asarray(masses, dtype=float))
    K = m.size
    I = np.asarray(inertias, dtype=float).reshape(-1, 3)[:K]
    k, kr, s, sr = map(float, (stiffness, orientation_coupling, sigma, sigma_rot))
    params = dict(
        masses=list(m), inertias=I.tolist(), stiffness=stiffness, orientation_coupling=orientation_coupling,
        sigma=sigma, sigma_rot=sigma_rot, drag_linear=drag_linear, drag_angular=drag_angular,
    )
    if K == 1:
        z = lambda x, R: np.zeros((1, 3))  # noqa: E731
        return RigidBodySystem(
            "rigid_pair", m, I, lambda x, R: 0.0, z, z, (), float(drag_linear), float(drag_angular),
            _TRANSLATIONS, params,
        )
    if K != 2:
        raise InvalidSystem("rigid_pair takes one or two bodies")

    def U(x, R):
        d = x[0] - x[1]
        return 0.5 * k * d @ d - kr * np.trace(R[0].T @ R[1])

    def Ux(x, R):
        d = k * (x[0] - x[1])
        return np.stack([d, -d])

    def UR(x, R):
        A = R[1] @ R[0].T
        t = -kr * vee(A - A.T)
        return np.stack([t, -t])

    noises = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = s
        noises.append(
            RigidNoise(
                lambda x, R, j=j: s * (x[0, j] - x[1, j]),
                lambda x, R, e=e: np.stack([e, -e]),
                lambda x, R: np.zeros((2, 3)),
            )
        )

    def gR(x, R):
        A = R[1] @ R[0].T
        t = sr * vee(A - A.T)
        return np.stack([t, -t])

    noises.append(RigidNoise(lambda x, R: sr * np.trace(R[0].T @ R[1]), lambda x, R: np.zeros((2, 3)), gR))
    return RigidBodySystem(
        "rigid_pair", m, I, U, Ux, UR, tuple(noises), float(drag_linear), float(drag_angular),
        _TRANSLATIONS, params,
    )


def make_rigid_top(mass=1.0, inertia=(1.0, 2.0, 3.0), gravity=1.0, com=(0.0, 0.0, 0.5), sigma=0.3) -> RigidBodySystem:
    """Single body under a constant gravity torque, U = m g e3.(x + R chi),
    with orientation-dependent torque noise gamma = sigma e1.(R chi)."""
    mg = float(mass) * float(gravity)
    chi = np.asarray(com, dtype=float)
    s = float(sigma)
    e1, e3 = np.eye(3)[0], np.eye(3)[2]
    return RigidBodySystem(
        name="rigid_top",
        masses=np.array([float(mass)]),
        inertias=np.asarray(inertia, dtype=float).reshape(1, 3),
        potential=lambda x, R: mg * e3 @ (x[0] + R[0] @ chi),
        grad_x=lambda x, R: (mg * e3)[None, :],
        grad_R=lambda x, R: (mg * np.cross(R[0] @ chi, e3))[None, :],
        noise_potentials=(
            RigidNoise(
                lambda x, R: s * e1 @ (R[0] @ chi),
                lambda x, R: np.zeros((1, 3)),
                lambda x, R: (s * np.cross(R[0] @ chi, e1))[None, :],
            ),
        ),
        params=dict(mass=mass, inertia=list(inertia), gravity=gravity, com=list(com), sigma=sigma),
    )


def rotation_derivative_error(f, grad_R, R, body: int, kind="exponential", eps=1e-6) -> float:
    """Mismatch between a right-trivialized gradient and differences of ``f``
    along ``t -> tau(t y) R_body``."""
    g = np.asarray(grad_R(R))[body]
    fd = np.empty(3)
    for j in range(3):
        y = np.zeros(3)
        y[j] = eps
        Rp, Rm = R.copy(), R.copy()
        Rp[body] = tau(kind, y) @ R[body]
        Rm[body] = tau(kind, -y) @ R[body]
        fd[j] = (f(Rp) - f(Rm)) / (2 * eps)
    return float(np.max(np.abs(g - fd)) / (1.0 + np.max(np.abs(g))))

