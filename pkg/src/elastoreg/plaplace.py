"""Implicit Euler solver for the evolutionary vector p-Laplace system.

Weak form solved at every step, for all admissible test fields phi::

    rho <(w - w_old)/dt, phi> + kappa int flux(grad w) : grad phi
        + int A : grad phi = int f . phi + int_{Gamma_N} g . phi

with the smoothed flux ``(delta^2 + |G|^2)^((p-2)/2) G``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.sparse.linalg import splu

from ._newton import NewtonFailure, newton
from .fem import (BoundaryField, NodalField, QuadTensorField, boundary_l2_norm,
                  l2_norm, lp_norm, space, vp_norm)
from .mesh import Mesh2D

_I2 = np.eye(2)


def plaplace_flux(G, p: float, delta: float = 0.0):
    G = np.asarray(G, dtype=float)
    s = delta ** 2 + np.einsum("...ij,...ij->...", G, G)
    if p == 2:
        return G.copy()
    with np.errstate(divide="ignore"):
        c = np.where(s > 0, s ** ((p - 2.0) / 2.0), 0.0)
    return c[..., None, None] * G


def plaplace_flux_tangent(G, p: float, delta: float = 0.0):
    """d flux / dG as a fourth-order tensor ``(..., i, j, k, l)``."""
    G = np.asarray(G, dtype=float)
    s = delta ** 2 + np.einsum("...ij,...ij->...", G, G)
    II = np.einsum("ik,jl->ijkl", _I2, _I2)
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    c1 = np.where(pos, safe ** ((p - 2.0) / 2.0), 1.0 if p == 2 else 0.0)
    c2 = np.where(pos, (p - 2.0) * safe ** ((p - 4.0) / 2.0), 0.0)
    return (c1[..., None, None, None, None] * II
            + c2[..., None, None, None, None] * np.einsum("...ij,...kl->...ijkl", G, G))


Data = Union[None, NodalField, BoundaryField, QuadTensorField, Callable[[float], object]]


def at_time(data, t):
    return data(t) if callable(data) else data


@dataclass
class PLaplaceProblem:
    mesh: Mesh2D
    kappa: float
    p: float
    rho: float = 1.0
    delta: float = 1e-8
    f: Data = None
    g: Data = None
    A: Data = None
    u1: NodalField | None = None
    newton_tol: float = 1e-10
    newton_max: int = 50
    max_halvings: int = 6
    _factors: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.p >= 2:
            raise ValueError("p must be >= 2")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


def external_load(mesh: Mesh2D, f: NodalField | None, g: BoundaryField | None) -> np.ndarray:
    s = space(mesh)
    b = np.zeros(s.ndof)
    if f is not None:
        b += s.mass @ f.values.ravel()
    if g is not None:
        b += s.boundary_load(g.values)
    return b


def _solve_step(prob: PLaplaceProblem, w_old: np.ndarray, dt: float, t_new: float):
    s = space(prob.mesh)
    A = at_time(prob.A, t_new)
    A_load = s.tensor_load(A.tensors) if A is not None else 0.0
    rhs = external_load(prob.mesh, at_time(prob.f, t_new), at_time(prob.g, t_new))
    Mw_old = s.mass @ w_old
    c = prob.rho / dt

    def residual(x):
        G = s.grad_flat(x)
        return (c * (s.mass @ x - Mw_old) + prob.kappa * s.tensor_load(plaplace_flux(G, prob.p, prob.delta))
                + A_load - rhs)

    def jacobian(x):
        G = s.grad_flat(x)
        return c * s.mass + prob.kappa * s.tangent_matrix(plaplace_flux_tangent(G, prob.p, prob.delta))

    solve = None
    if prob.p == 2:
        # linear flux: the Jacobian depends on dt only
        key = (dt, prob.kappa, prob.rho)
        lu = prob._factors.get(key)
        if lu is None:
            lu = prob._factors[key] = splu(jacobian(w_old)[s.free][:, s.free].tocsc())
        solve = lu.solve

    x0 = w_old.copy()
    x0[s.fixed] = 0.0
    return newton(residual, jacobian, x0, s.free, prob.newton_tol, prob.newton_max, solve=solve)


def pl_step_info(prob: PLaplaceProblem, w_old: NodalField, dt: float,
                 t_new: float = 0.0) -> tuple[NodalField, int]:
    """pl_step that also returns the Newton iteration count."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, iters, _ = _solve_step(prob, w_old.values.ravel(), dt, t_new)
    return NodalField(prob.mesh, x.reshape(-1, 2)), iters


def pl_step(prob: PLaplaceProblem, w_old: NodalField, dt: float, t_new: float = 0.0) -> NodalField:
    """One implicit Euler step; raises NewtonFailure if Newton does not converge."""
    return pl_step_info(prob, w_old, dt, t_new)[0]


def pl_advance(prob: PLaplaceProblem, w_old: NodalField, dt: float, t_new: float,
               level: int = 0) -> NodalField:
    """pl_step with local step halving on Newton failure."""
    try:
        return pl_step(prob, w_old, dt, t_new)
    except NewtonFailure:
        if level >= prob.max_halvings:
            raise
    half = 0.5 * dt
    mid = pl_advance(prob, w_old, half, t_new - half, level + 1)
    return pl_advance(prob, mid, half, t_new, level + 1)


def pl_solve(prob: PLaplaceProblem, dt: float, n_steps: int, t0: float = 0.0) -> list[NodalField]:
    """Trajectory ``[w^0 = u1, w^1, ..., w^n_steps]``."""
    w = prob.u1.copy() if prob.u1 is not None else NodalField.zeros(prob.mesh)
    out = [w]
    for n in range(1, n_steps + 1):
        w = pl_advance(prob, w, dt, t0 + n * dt)
        out.append(w)
    return out


@dataclass
class PLEnergyReport:
    lhs: float
    rhs: float
    lhs_cumulative: np.ndarray
    increments: np.ndarray
    c_mon: float
    violated: bool


def pl_energy_monitor(trajectory: list[NodalField], prob: PLaplaceProblem, dt: float,
                      c_mon: float = 1e3, t0: float = 0.0) -> PLEnergyReport:
    """Compare ||w||^p_{L^p(0,T;V^p)} with the data terms of the a priori bound.

    Dual norms of f and g are replaced by the L^2 norms of their
    representatives; A enters through its L^{p'} norm.
    """
    p = prob.p
    pc = p / (p - 1.0)
    inc = np.array([dt * vp_norm(w, p) ** p for w in trajectory[1:]])
    u1 = trajectory[0]
    rhs = l2_norm(u1) ** 2
    for n in range(1, len(trajectory)):
        t = t0 + n * dt
        f, g, A = at_time(prob.f, t), at_time(prob.g, t), at_time(prob.A, t)
        if f is not None:
            rhs += dt * l2_norm(f) ** pc
        if g is not None:
            rhs += dt * boundary_l2_norm(g) ** pc
        if A is not None:
            rhs += dt * lp_norm(A, pc) ** pc
    cum = np.cumsum(inc)
    lhs = float(cum[-1]) if len(cum) else 0.0
    return PLEnergyReport(lhs, float(rhs), cum, inc, c_mon, lhs > c_mon * rhs)
