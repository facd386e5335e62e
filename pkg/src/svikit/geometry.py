"""SO(3) machinery: hat/vee, the retractions tau (exponential and Cayley),
their inverses, and the duals of the trivialized tangent maps dtau^{-1}.

Conventions
-----------
``hat(v) @ w == cross(v, w)``.  The tangent ``dtau_xi`` is right
trivialized: ``d/dt tau(xi + t*d) @ tau(xi)^T = hat(dtau_xi @ d)`` at t=0,
so that ``dtau_inv(xi) @ y = d/dt tau^{-1}(tau(t*y) @ tau(xi))`` at t=0.
For the exponential map this gives the familiar series
``I - ad/2 + ad^2/12 - ...`` with ``ad_xi = hat(xi)``.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import NonSkewInput, OutOfDomain

__all__ = [
    "Retraction",
    "hat",
    "vee",
    "tau",
    "tau_inv",
    "dtau_inv",
    "dtau_inv_dual",
    "is_rotation",
    "orthonormalize",
    "axis_angle",
]

SKEW_TOL = 1e-10
# distance from angle pi at which the principal log is refused
EXP_CUT_TOL = 1e-8
CAYLEY_CUT_TOL = 1e-12
_SERIES_CUTOFF = 1e-4


class Retraction(str, Enum):
    EXPONENTIAL = "exponential"
    CAYLEY = "cayley"

    @classmethod
    def parse(cls, value) -> "Retraction":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown retraction {value!r}") from None


_I3 = np.eye(3)
_I3.setflags(write=False)


def _cross(a, b):
    if a.ndim == 1 and b.ndim == 1:
        return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])
    return np.cross(a, b)


def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(M, tol: float = SKEW_TOL) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if np.linalg.norm(M + M.T) > tol:
        raise NonSkewInput(f"matrix is not skew-symmetric: |M + M^T| = {np.linalg.norm(M + M.T):.3e}")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def _skew_part_vec(M) -> np.ndarray:
    return 0.5 * np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def axis_angle(axis, angle) -> np.ndarray:
    """Rotation matrix for a rotation by ``angle`` about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    return tau(Retraction.EXPONENTIAL, angle * axis / np.linalg.norm(axis))


def tau(kind, xi) -> np.ndarray:
    """Map an algebra element (as a 3-vector) to a rotation matrix."""
    if kind.__class__ is not Retraction:
        kind = Retraction.parse(kind)
    xi = np.asarray(xi, dtype=float)
    X = hat(xi)
    X2 = X @ X
    t2 = float(xi @ xi)
    if kind is Retraction.CAYLEY:
        # (I - X/2)^{-1} (I + X/2) in closed form
        return _I3 + (4.0 / (4.0 + t2)) * (X + 0.5 * X2)
    th = np.sqrt(t2)
    if th < _SERIES_CUTOFF:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / t2
    return _I3 + a * X + b * X2


def tau_inv(kind, R) -> np.ndarray:
    """Inverse retraction; raises OutOfDomain near the cut locus."""
    kind = Retraction.parse(kind)
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    w = _skew_part_vec(R)  # sin(theta) * axis
    if kind is Retraction.CAYLEY:
        if 1.0 + tr < CAYLEY_CUT_TOL:
            raise OutOfDomain("Cayley inverse undefined for trace(R) = -1")
        return 4.0 * w / (1.0 + tr)
    c = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    s = np.linalg.norm(w)
    th = np.arctan2(s, c)
    if np.pi - th < EXP_CUT_TOL:
        raise OutOfDomain(f"rotation angle {th!r} within {EXP_CUT_TOL} of pi")
    if th < _SERIES_CUTOFF:
        return w * (1.0 + th * th / 6.0)
    if th < 0.5 * np.pi:
        return w * (th / s)
    # near pi the skew part is small; recover the axis from the symmetric part
    S = 0.5 * (R + R.T) - c * np.eye(3)
    i = int(np.argmax(np.diag(S)))
    axis = S[:, i] / np.sqrt(S[i, i] * (1.0 - c))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0:
        axis = -axis
    return th * axis


def _dexp_inv_coeff(t2: float) -> float:
    if t2 < _SERIES_CUTOFF**2:
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    th = np.sqrt(t2)
    return (1.0 - 0.5 * th / np.tan(0.5 * th)) / t2


def dtau_inv(kind, xi) -> np.ndarray:
    """Matrix of the right-trivialized tangent of tau^{-1} at ``xi``."""
    kind = Retraction.parse(kind)
    xi = np.asarray(xi, dtype=float)
    X = hat(xi)
    if kind is Retraction.CAYLEY:
        return np.eye(3) - 0.5 * X + 0.25 * np.outer(xi, xi)
    return np.eye(3) - 0.5 * X + _dexp_inv_coeff(float(xi @ xi)) * (X @ X)


def dtau_inv_dual(kind, xi, mu) -> np.ndarray:
    """``(dtau^{-1}_xi)^* mu``, written out without forming the matrix."""
    if kind.__class__ is not Retraction:
        kind = Retraction.parse(kind)
    xi = np.asarray(xi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    xm = _cross(xi, mu)
    if kind is Retraction.CAYLEY:
        return mu + 0.5 * xm + 0.25 * (xi @ mu) * xi
    return mu + 0.5 * xm + _dexp_inv_coeff(float(xi @ xi)) * _cross(xi, xm)


def is_rotation(R, tol: float = 1e-10) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.linalg.norm(R.T @ R - np.eye(3)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def orthogonality_defect(R) -> float:
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


def orthonormalize(R) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q
