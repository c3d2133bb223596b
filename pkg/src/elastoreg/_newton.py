"""Damped Newton iteration on the free degrees of freedom."""
from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import spsolve

from .constitutive import DomainError


class NewtonFailure(RuntimeError):
    pass


def newton(residual, jacobian, x0, free, tol=1e-10, max_iter=50, max_halvings=30, solve=None):
    """Solve ``residual(x)[free] = 0`` starting from ``x0``.

    Constrained entries of ``x`` are never touched. A full step is halved
    (up to ``max_halvings`` times) until the residual norm decreases.
    ``solve(r)``, when given, replaces the Jacobian solve (for a frozen,
    pre-factorised Jacobian). Returns ``(x, iterations, residual_norm)``.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)[free]
    norm = float(np.linalg.norm(r))
    for it in range(max_iter + 1):
        if norm <= tol:
            return x, it, norm
        if it == max_iter:
            break
        if solve is not None:
            dx = solve(-r)
        else:
            J = jacobian(x)[free][:, free]
            dx = spsolve(J.tocsc(), -r)
        if not np.all(np.isfinite(dx)):
            raise NewtonFailure("singular Jacobian")
        step = 1.0
        for _ in range(max_halvings + 1):
            trial = x.copy()
            trial[free] += step * dx
            try:
                r_try = residual(trial)[free]
                n_try = float(np.linalg.norm(r_try))
            except DomainError:
                n_try = np.inf
            if n_try < norm:
                break
            step *= 0.5
        else:
            raise NewtonFailure(f"line search stalled at residual {norm:.3e}")
        x, r, norm = trial, r_try, n_try
    raise NewtonFailure(f"no convergence in {max_iter} iterations (residual {norm:.3e})")
