"""Implicit time stepping for p-Laplace-regularised nonlinear elastodynamics.

Unknown per step is the velocity w^{n+1}; the displacement follows from
u^{n+1} = u^n + dt w^{n+1}. The step equation, for all admissible phi::

    rho <(w - w^n)/dt, phi> + kappa int flux(grad w) : grad phi
        + int (I + grad u)Sigma(E(u)) : grad phi = <f, phi> + <g, phi>_{Gamma_N}

with u = u^n + dt w (fully implicit). Two solvers are available: Picard
iteration of the frozen-displacement map (each application is one
p-Laplace step) and monolithic Newton.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._newton import NewtonFailure, newton
from .constitutive import (DomainError, MaterialModel, energy_density, first_pk_tangent,
                           first_pk_tensor, green_st_venant)
from .diagnostics import (ABORTED, COMPLETED, LIFESPAN_HIT, RunRecord, RunRow, _dets,
                          korn_ratio)
from .fem import (BoundaryField, NodalField, QuadTensorField, boundary_l2_norm, l2_norm,
                  lp_norm, space, vp_norm)
from .mesh import Mesh2D
from .plaplace import (PLaplaceProblem, at_time, external_load, pl_step_info,
                       plaplace_flux, plaplace_flux_tangent)

log = logging.getLogger(__name__)

PICARD = "picard"
NEWTON = "newton"


class StepFailure(RuntimeError):
    """Both solvers failed even after the allowed number of dt halvings."""


@dataclass(frozen=True)
class SolverConfig:
    material: MaterialModel
    rho: float = 1.0
    kappa: float = 1e-2
    p: float | None = None
    delta: float = 1e-8
    dt: float = 1e-2
    t_end: float = 1.0
    mode: str = PICARD
    picard_tol: float = 1e-9
    picard_max: int = 100
    newton_tol: float = 1e-10
    newton_max: int = 50
    eps: float = 1.0
    eta_fraction: float = 0.5
    max_halvings: int = 6

    def __post_init__(self):
        if self.p is None:
            object.__setattr__(self, "p", self.material.p)
        elif self.p != self.material.p:
            raise ValueError(f"p = {self.p} inconsistent with material p = {self.material.p}")
        if not 0.0 < self.eta_fraction < 1.0:
            raise ValueError("eta_fraction must lie in (0, 1)")
        if self.mode not in (PICARD, NEWTON):
            raise ValueError(f"mode must be {PICARD!r} or {NEWTON!r}")
        for name in ("rho", "kappa", "dt", "t_end", "eps", "picard_tol", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass(frozen=True)
class ElastoState:
    t: float
    u: NodalField
    w: NodalField
    step_index: int = 0


@dataclass(frozen=True)
class StepResult:
    state: ElastoState
    lifespan_hit: bool
    newton_iters: int
    picard_iters: int
    viscous: float
    halvings: int = 0


def _scaled(data, eps):
    if data is None or eps == 1.0:
        return data
    if callable(data):
        return lambda t: data(t) * eps
    return data * eps


def picard_map(cfg: SolverConfig, state: ElastoState, f, g, w_guess: NodalField,
               dt: float | None = None) -> tuple[NodalField, int]:
    """Freeze u = u^n + dt w_guess, then take one p-Laplace step with A = P(u).

    Returns the new velocity and the inner Newton iteration count.
    """
    dt = cfg.dt if dt is None else dt
    mesh = state.u.mesh
    s = space(mesh)
    G = s.grad(state.u.values + dt * w_guess.values)
    A = QuadTensorField(mesh, first_pk_tensor(cfg.material, G))
    prob = PLaplaceProblem(mesh, cfg.kappa, cfg.p, cfg.rho, cfg.delta, f=f, g=g, A=A,
                           newton_tol=cfg.newton_tol, newton_max=cfg.newton_max)
    return pl_step_info(prob, state.w, dt, state.t + dt)


def _picard_solve(cfg, state, f, g, dt):
    w = state.w
    inner = 0
    for k in range(1, cfg.picard_max + 1):
        w_new, it = picard_map(cfg, state, f, g, w, dt)
        inner += it
        change = vp_norm(w_new - w, cfg.p)
        w = w_new
        if change <= cfg.picard_tol:
            return w, inner, k
    raise NewtonFailure(f"Picard did not converge in {cfg.picard_max} iterations")


def _newton_solve(cfg, state, f, g, dt):
    mesh = state.u.mesh
    s = space(mesh)
    t_new = state.t + dt
    rhs = external_load(mesh, at_time(f, t_new), at_time(g, t_new))
    Gu = s.grad(state.u.values)
    w_old = state.w.values.ravel()
    Mw_old = s.mass @ w_old
    c = cfg.rho / dt
    m = cfg.material

    def residual(x):
        Gw = s.grad_flat(x)
        P = first_pk_tensor(m, Gu + dt * Gw)
        return (c * (s.mass @ x - Mw_old)
                + s.tensor_load(cfg.kappa * plaplace_flux(Gw, cfg.p, cfg.delta) + P) - rhs)

    def jacobian(x):
        Gw = s.grad_flat(x)
        D = (cfg.kappa * plaplace_flux_tangent(Gw, cfg.p, cfg.delta)
             + dt * first_pk_tangent(m, Gu + dt * Gw))
        return c * s.mass + s.tangent_matrix(D)

    x, iters, _ = newton(residual, jacobian, w_old, s.free, cfg.newton_tol, cfg.newton_max)
    return NodalField(mesh, x.reshape(-1, 2)), iters, 0


def _single_step(cfg, state, f, g, dt):
    if cfg.mode == PICARD:
        try:
            return _picard_solve(cfg, state, f, g, dt)
        except (NewtonFailure, DomainError) as exc:
            log.info("t=%.6g: Picard failed (%s); falling back to Newton", state.t + dt, exc)
    return _newton_solve(cfg, state, f, g, dt)


def _viscous_increment(cfg, w, dt):
    return dt * cfg.kappa * vp_norm(w, cfg.p) ** cfg.p


def _advance(cfg, state, f, g, dt, level):
    try:
        w, n_it, p_it = _single_step(cfg, state, f, g, dt)
    except (NewtonFailure, DomainError) as exc:
        if level >= cfg.max_halvings:
            raise StepFailure(f"step at t={state.t:.6g} failed after {level} halvings: {exc}") from exc
        half = 0.5 * dt
        mid = _advance(cfg, state, f, g, half, level + 1)
        end = _advance(cfg, mid.state, f, g, half, level + 1)
        return StepResult(end.state, end.lifespan_hit or mid.lifespan_hit,
                          mid.newton_iters + end.newton_iters, mid.picard_iters + end.picard_iters,
                          mid.viscous + end.viscous, max(mid.halvings, end.halvings, level + 1))
    u = state.u + w * dt
    new = ElastoState(state.t + dt, u, w, state.step_index)
    hit = bool(np.min(_dets(space(u.mesh).grad(u.values))) <= 0.0)
    return StepResult(new, hit, n_it, p_it, _viscous_increment(cfg, w, dt), level)


def elasto_step(cfg: SolverConfig, state: ElastoState, f=None, g=None) -> StepResult:
    """Advance one step of size cfg.dt (with local halving on solver failure).

    ``lifespan_hit`` is set when det(I + grad u) <= 0 somewhere in the new
    state. Raises StepFailure when no halving level succeeds.
    """
    if np.min(_dets(space(state.u.mesh).grad(state.u.values))) <= 0.0:
        raise ValueError("incoming state has det(I + grad u) <= 0")
    res = _advance(cfg, state, f, g, cfg.dt, 0)
    st = res.state
    return replace(res, state=ElastoState(st.t, st.u, st.w, state.step_index + 1))


def strain_energy(m: MaterialModel, u: NodalField) -> float:
    """int W(E(u)), exact for P1 fields."""
    G = space(u.mesh).grad(u.values)
    return float(np.sum(u.mesh.areas * energy_density(m, green_st_venant(G))))


def work_rate(m: MaterialModel, u: NodalField, udot: NodalField) -> float:
    """int (I + grad u) Sigma(E(u)) : grad udot, the time derivative of strain_energy."""
    s = space(u.mesh)
    P = first_pk_tensor(m, s.grad(u.values))
    return float(np.sum(u.mesh.areas * np.einsum("tij,tij->t", P, s.grad(udot.values))))


def _data_sq(f, g, t):
    fv, gv = at_time(f, t), at_time(g, t)
    a = l2_norm(fv) ** 2 if fv is not None else 0.0
    b = boundary_l2_norm(gv) ** 2 if gv is not None else 0.0
    return a, b


def _row(cfg, step, t, u, w, viscous, f_cum, g_cum, n_it, p_it):
    kinetic = 0.5 * cfg.rho * l2_norm(w) ** 2
    min_det = float(np.min(_dets(space(u.mesh).grad(u.values))))
    if min_det > 0.0:
        strain = strain_energy(cfg.material, u)
        kr = korn_ratio(u, cfg.p)
    else:
        strain = kr = math.nan
    return RunRow(step, t, kinetic, strain, kinetic + strain, viscous, min_det, kr,
                  vp_norm(u, cfg.p), l2_norm(w), f_cum, g_cum, n_it, p_it)


def simulate(cfg: SolverConfig, mesh: Mesh2D, u0: NodalField | None = None,
             u1: NodalField | None = None, f=None, g=None, *, eta: float | None = None,
             keep_snapshots: bool = True, on_row=None) -> RunRecord:
    """Run from t = 0 to cfg.t_end with all data scaled by cfg.eps.

    Stops early with verdict LIFESPAN_HIT when min det(I + grad u) < eta
    (default eta_fraction * min det(I + grad u0)); the crossing time is
    linearly interpolated. Solver breakdown yields verdict ABORTED with the
    rows computed so far. ``on_row`` is called with each new row.
    """
    u0 = NodalField.zeros(mesh) if u0 is None else u0
    u1 = NodalField.zeros(mesh) if u1 is None else u1
    for name, v in (("u0", u0), ("u1", u1)):
        if np.any(v.values[mesh.dirichlet_mask] != 0.0):
            raise ValueError(f"{name} violates the Dirichlet condition")
    u0, u1 = u0 * cfg.eps, u1 * cfg.eps
    f, g = _scaled(f, cfg.eps), _scaled(g, cfg.eps)

    det0 = float(np.min(_dets(space(mesh).grad(u0.values))))
    if det0 <= 0.0:
        raise ValueError("initial displacement must satisfy det(I + grad u0) > 0")
    eta = cfg.eta_fraction * det0 if eta is None else eta

    rec = RunRecord(cfg.rho, cfg.kappa, cfg.p, cfg.dt, cfg.t_end, eta,
                    strain_energy(cfg.material, u0), l2_norm(u1) ** 2, mesh=mesh)
    state = ElastoState(0.0, u0, u1, 0)
    viscous = f_cum = g_cum = 0.0

    def push(row, st):
        rec.rows.append(row)
        if keep_snapshots:
            rec.u_snapshots.append(st.u.values.copy())
            rec.w_snapshots.append(st.w.values.copy())
        if on_row is not None:
            on_row(row)

    push(_row(cfg, 0, 0.0, u0, u1, 0.0, 0.0, 0.0, 0, 0), state)
    for n in range(1, cfg.n_steps + 1):
        try:
            res = elasto_step(cfg, state, f, g)
        except StepFailure as exc:
            rec.verdict, rec.message = ABORTED, str(exc)
            log.warning("run aborted: %s", exc)
            break
        # the data integrals use the same right-endpoint rule as the scheme
        t = n * cfg.dt
        fa, gb = _data_sq(f, g, t)
        viscous += res.viscous
        f_cum += cfg.dt * fa
        g_cum += cfg.dt * gb
        state = ElastoState(t, res.state.u, res.state.w, n)
        row = _row(cfg, n, t, state.u, state.w, viscous, f_cum, g_cum,
                   res.newton_iters, res.picard_iters)
        if res.lifespan_hit or row.min_det < eta:
            prev = rec.rows[-1]
            frac = (prev.min_det - eta) / (prev.min_det - row.min_det)
            rec.verdict = LIFESPAN_HIT
            rec.t_star = prev.t + min(max(frac, 0.0), 1.0) * cfg.dt
            rec.message = f"min det fell below eta = {eta:.6g}"
            break
        push(row, state)
    return rec


def record_fields(rec: RunRecord, which: str = "u") -> list[NodalField]:
    snaps = rec.u_snapshots if which == "u" else rec.w_snapshots
    if not snaps:
        raise ValueError("record holds no snapshots")
    return [NodalField(rec.mesh, v) for v in snaps]


@dataclass
class BRReport:
    lhs: float
    bound: float
    w_norm: float
    R: float
    T: float
    holds: bool


def bound_B_R(rec: RunRecord, R: float | None = None, tol: float = 1e-8) -> BRReport:
    """Check ||u||_{L^p(0,T;V^p)} <= T^{1/p}(||u0||_{V^p} + R) on a computed run.

    Time integrals use the right-endpoint rule of the scheme. R defaults to
    the trajectory's own ||w||_{L^p(0,T;V^p)}; a given R below that value
    is rejected.
    """
    p, dt = rec.p, rec.dt
    T = rec.rows[-1].t
    if T > 1.0 + 1e-12:
        raise ValueError("the bound is stated for horizons T <= 1")
    us, ws = record_fields(rec, "u"), record_fields(rec, "w")
    lhs = sum(dt * vp_norm(u, p) ** p for u in us[1:]) ** (1.0 / p)
    w_norm = sum(dt * vp_norm(w, p) ** p for w in ws[1:]) ** (1.0 / p)
    if R is None:
        R = w_norm
    elif R < w_norm:
        raise ValueError(f"trajectory leaves the ball: ||w|| = {w_norm:.6g} > R = {R:.6g}")
    bound = T ** (1.0 / p) * (vp_norm(us[0], p) + R)
    return BRReport(lhs, bound, w_norm, R, T, lhs <= bound + tol * max(1.0, bound))


@dataclass
class KappaSweep:
    kappas: list[float]
    records: list[RunRecord]
    u_sup: list[float]
    w_sup: list[float]
    viscous_total: list[float]
    gaps: list[float] = field(default_factory=list)


def l2l2_distance(a: RunRecord, b: RunRecord) -> float:
    """sqrt(sum_n dt ||u_a^n - u_b^n||^2) over the common steps of two runs."""
    if a.dt != b.dt:
        raise ValueError("runs use different time steps")
    n = min(len(a.u_snapshots), len(b.u_snapshots))
    tot = sum(a.dt * l2_norm(NodalField(a.mesh, a.u_snapshots[k] - b.u_snapshots[k])) ** 2
              for k in range(1, n))
    return math.sqrt(tot)


def kappa_continuation(cfg: SolverConfig, kappas, mesh: Mesh2D, u0=None, u1=None, f=None,
                       g=None, workers: int = 1) -> KappaSweep:
    """Full-horizon runs for a strictly decreasing schedule of kappa values."""
    kappas = [float(k) for k in kappas]
    if not kappas or any(k <= 0 for k in kappas):
        raise ValueError("kappa schedule must be nonempty and positive")
    if any(b >= a for a, b in zip(kappas, kappas[1:])):
        raise ValueError("kappa schedule must be strictly decreasing")

    def one(k):
        return simulate(replace(cfg, kappa=k), mesh, u0, u1, f, g, keep_snapshots=True)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(one, kappas))
    else:
        records = [one(k) for k in kappas]
    return KappaSweep(
        kappas, records,
        [float(np.max(r.column("u_vp"))) for r in records],
        [float(np.max(r.column("w_l2"))) for r in records],
        [r.rows[-1].viscous_cum for r in records],
        [l2l2_distance(a, b) for a, b in zip(records, records[1:])],
    )
