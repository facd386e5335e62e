"""Newton iteration for the small dense systems arising in implicit steps.

Works on a single unknown vector ``(d,)`` or a batch ``(B, d)``; in the batch
case every row is an independent system and convergence is required of all.
"""
from __future__ import annotations

import numpy as np

from .errors import NewtonDivergence

UNDAMPED_ITERS = 10
FD_STEP = 6e-6  # ~ cube root of machine epsilon, for central differences


def fd_jacobian(residual, x, f0=None):
    """Central-difference Jacobian, shape (..., d, d)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    J = np.empty(x.shape + (d,))
    for j in range(d):
        e = FD_STEP * (1.0 + np.abs(x[..., j]))
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += e
        xm[..., j] -= e
        J[..., :, j] = (residual(xp) - residual(xm)) / (2.0 * e)[..., None]
    return J


def newton_solve(residual, x0, jacobian=None, tol=1e-12, max_iter=25, scale=None):
    """Solve ``residual(x) = 0``.

    Convergence: ``|r|_inf <= tol * (1 + scale)`` row-wise, ``scale``
    defaulting to ``|x0|_inf``.  After ``UNDAMPED_ITERS`` plain iterations
    the update is halved until the residual decreases (up to 8 halvings).
    Raises NewtonDivergence when ``max_iter`` is exhausted.
    """
    x = np.array(x0, dtype=float)
    if scale is None:
        scale = np.max(np.abs(x), axis=-1)
    bound = tol * (1.0 + np.asarray(scale))
    r = residual(x)
    for it in range(max_iter + 1):
        err = np.max(np.abs(r), axis=-1)
        if np.all(err <= bound):
            return x, it
        if it == max_iter:
            break
        J = jacobian(x) if jacobian is not None else fd_jacobian(residual, x)
        try:
            dx = np.linalg.solve(J, -r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise NewtonDivergence(f"non-finite Newton update at iteration {it}")
        if it < UNDAMPED_ITERS:
            x = x + dx
            r = residual(x)
            continue
        lam = 1.0
        for _ in range(8):
            xt = x + lam * dx
            rt = residual(xt)
            if np.all(np.max(np.abs(rt), axis=-1) < np.maximum(err, bound)):
                break
            lam *= 0.5
        x, r = xt, rt
    raise NewtonDivergence(
        f"Newton residual {float(np.max(np.abs(r))):.3e} above tolerance after {max_iter} iterations"
    )
