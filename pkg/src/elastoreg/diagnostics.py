"""Run records and numerical monitors for the existence theory.

Everything here is post-processing on fields or on finished runs:
orientation (det of the deformation gradient), the nonlinear Korn
quotient, the energy bound with its Gronwall constant, and lifespan
detection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import lambertw

from .constitutive import green_st_venant
from .fem import NodalField, QuadTensorField, lp_norm, space, w1p_norm
from .mesh import Mesh2D

COMPLETED = "COMPLETED"
LIFESPAN_HIT = "LIFESPAN_HIT"
ABORTED = "ABORTED"


class RunRow(NamedTuple):
    step: int
    t: float
    kinetic: float
    strain: float
    total: float
    viscous_cum: float
    min_det: float
    korn_ratio: float
    u_vp: float
    w_l2: float
    f_cum: float
    g_cum: float
    newton_iters: int
    picard_iters: int


@dataclass
class RunRecord:
    """Per-step time series of one run and its verdict."""

    rho: float
    kappa: float
    p: float
    dt: float
    t_end: float
    eta: float
    strain0: float
    u1_sq: float
    rows: list[RunRow] = field(default_factory=list)
    verdict: str = COMPLETED
    t_star: float | None = None
    message: str = ""
    u_snapshots: list[np.ndarray] = field(default_factory=list)
    w_snapshots: list[np.ndarray] = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    mesh: Mesh2D | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    @property
    def t_max(self) -> float:
        """Lifespan: the crossing time if one was detected, else the final time reached."""
        if self.t_star is not None:
            return self.t_star
        return self.rows[-1].t if self.rows else 0.0


# -- orientation -------------------------------------------------------------

def _dets(G):
    F = np.eye(2) + G
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def determinant_field(u: NodalField) -> np.ndarray:
    """det(I + grad u) per triangle."""
    return _dets(space(u.mesh).grad(u.values))


def min_determinant(u: NodalField) -> tuple[float, int]:
    d = determinant_field(u)
    k = int(np.argmin(d))
    return float(d[k]), k


def cofactor(F):
    """Cofactor matrix of 2x2 tensors (d det / dF)."""
    F = np.asarray(F, dtype=float)
    C = np.empty_like(F)
    C[..., 0, 0] = F[..., 1, 1]
    C[..., 0, 1] = -F[..., 1, 0]
    C[..., 1, 0] = -F[..., 0, 1]
    C[..., 1, 1] = F[..., 0, 0]
    return C


def cofactor_rate_check(u_now: NodalField, u_next: NodalField, dt: float) -> float:
    """L^1 defect between the difference quotient of det(I + grad u) and cof(I + grad u) : grad u_dot.

    The velocity is the difference quotient of the two displacements, so
    in 2D the defect equals dt * ||det(grad u_dot)||_{L^1}.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = space(u_now.mesh)
    G0 = s.grad(u_now.values)
    G1 = s.grad(u_next.values)
    rate = (_dets(G1) - _dets(G0)) / dt
    pred = np.einsum("tij,tij->t", cofactor(np.eye(2) + G0), (G1 - G0) / dt)
    return float(np.sum(u_now.mesh.areas * np.abs(rate - pred)))


def det_holder_modulus(times, fields, p: float) -> float:
    """max_{t != t'} ||chi(t) - chi(t')||_{L^1} / |t - t'|^(1 - 1/p), chi = det(I + grad u)."""
    times = np.asarray(times, dtype=float)
    if len(times) < 3 or len(fields) != len(times):
        raise ValueError("need at least 3 snapshots with matching times")
    mesh = fields[0].mesh if isinstance(fields[0], NodalField) else None
    vals = [f.values if isinstance(f, NodalField) else np.asarray(f) for f in fields]
    if mesh is None:
        raise TypeError("fields must be NodalField instances")
    s = space(mesh)
    chi = np.array([_dets(s.grad(v)) for v in vals])
    areas = mesh.areas
    best = 0.0
    expo = 1.0 - 1.0 / p
    for i in range(len(times) - 1):
        diff = np.abs(chi[i + 1:] - chi[i]) @ areas
        gap = np.abs(times[i + 1:] - times[i]) ** expo
        best = max(best, float(np.max(diff / gap)))
    return best


# -- nonlinear Korn quotient ---------------------------------------------------

def korn_ratio(v: NodalField, p: float) -> float:
    """||v||^2_{W^{1,p}} / ||E(v)||_{L^{p/2}}, defined as 0 for the zero field.

    Raises ValueError when det(I + grad v) > 0 fails somewhere.
    """
    G = space(v.mesh).grad(v.values)
    if np.min(_dets(G)) <= 0.0:
        raise ValueError("Korn quotient needs det(I + grad v) > 0 everywhere")
    e_norm = lp_norm(QuadTensorField(v.mesh, green_st_venant(G)), p / 2.0)
    num = w1p_norm(v, p) ** 2
    if e_norm == 0.0:
        if num == 0.0:
            return 0.0
        return math.inf
    return num / e_norm


def random_smooth_field(mesh: Mesh2D, rng: np.random.Generator, modes: int = 3,
                        cutoff: float | None = None) -> NodalField:
    """Random low-frequency field, tapered to zero on the Dirichlet nodes."""
    x = mesh.nodes
    span = np.ptp(x, axis=0)
    span[span == 0] = 1.0
    xi = (x - x.min(axis=0)) / span
    vals = np.zeros((mesh.n_nodes, 2))
    for c in range(2):
        for k in range(modes):
            for l in range(modes):
                a = rng.normal() / (1 + k + l)
                ph = rng.uniform(0, 2 * np.pi, size=2)
                vals[:, c] += a * np.cos(np.pi * k * xi[:, 0] + ph[0]) * np.cos(np.pi * l * xi[:, 1] + ph[1])
    dn = mesh.nodes[mesh.dirichlet_mask]
    dist, _ = cKDTree(dn).query(mesh.nodes)
    ell = cutoff if cutoff is not None else 0.5 * float(span.min())
    taper = np.minimum(1.0, dist / ell)
    vals *= taper[:, None]
    vals[mesh.dirichlet_mask] = 0.0
    return NodalField(mesh, vals)


@dataclass
class KornReport:
    c_k: float
    ratios: np.ndarray
    rejected: int


def korn_sample(mesh: Mesh2D, p: float, samples: int = 500, seed: int = 42,
                max_gradient: float = 0.5) -> KornReport:
    """Empirical Korn constant: max quotient over random admissible fields.

    Each field is scaled so that its largest gradient entry is uniform in
    (0, max_gradient]; samples violating det > 0 are rejected.
    """
    rng = np.random.default_rng(seed)
    s = space(mesh)
    ratios, rejected = [], 0
    for _ in range(samples):
        v = random_smooth_field(mesh, rng)
        gmax = np.abs(s.grad(v.values)).max()
        amp = rng.uniform(0.0, 1.0) * max_gradient
        if gmax == 0.0 or amp == 0.0:
            rejected += 1
            continue
        v = v * (amp / gmax)
        try:
            ratios.append(korn_ratio(v, p))
        except ValueError:
            rejected += 1
    ratios = np.array(ratios)
    return KornReport(float(ratios.max()) if len(ratios) else 0.0, ratios, rejected)


# -- energy estimate -----------------------------------------------------------

@dataclass
class EnergyCheck:
    times: np.ndarray
    lhs: np.ndarray
    data: np.ndarray
    c0_per_row: np.ndarray
    c0_min: float
    c0: float | None
    passed: bool
    margins: np.ndarray | None
    consistent: bool


def _min_gronwall_constant(L, D, t):
    """Smallest C >= 0 with L <= C exp(C t) D."""
    if L <= 0.0:
        return 0.0
    if D <= 0.0:
        return math.inf
    if t <= 0.0:
        return L / D
    return float(lambertw(t * L / D).real) / t


def energy_lhs(record: RunRecord) -> np.ndarray:
    w2 = record.column("w_l2") ** 2
    return w2 + record.column("u_vp") ** record.p + record.column("viscous_cum")


def energy_data(record: RunRecord) -> np.ndarray:
    """Data sum int W(E(u0)) + ||u1||^2 + int_0^t ||f||^2 + int_0^t ||g||^2 per row."""
    return record.strain0 + record.u1_sq + record.column("f_cum") + record.column("g_cum")


def energy_estimate_check(record: RunRecord, c0: float | None = None) -> EnergyCheck:
    """Row-wise comparison of the energy functional with C0 exp(C0 t) (data).

    The minimal constant making every row pass is always reported; when
    ``c0`` is given the check also passes/fails against it.
    """
    t = record.times
    L = energy_lhs(record)
    D = energy_data(record)
    consistent = not np.any((D <= 0.0) & (L > 0.0))
    per_row = np.array([_min_gronwall_constant(l, d, tt) for l, d, tt in zip(L, D, t)])
    c0_min = float(per_row.max()) if len(per_row) else 0.0
    margins = None
    passed = consistent
    if c0 is not None:
        margins = c0 * np.exp(c0 * t) * D - L
        passed = bool(consistent and np.all(margins >= -1e-12 * np.maximum(1.0, np.abs(L))))
    return EnergyCheck(t, L, D, per_row, c0_min, c0, passed, margins, consistent)


# -- lifespan ------------------------------------------------------------------

@dataclass
class LifespanResult:
    eps: float
    t_max: float
    censored: bool
    record: RunRecord


def lifespan_run(cfg, mesh: Mesh2D, u0: NodalField, u1: NodalField, f=None, g=None,
                 eps: float | None = None, keep_snapshots: bool = False) -> LifespanResult:
    """Integrate until min det(I + grad u) drops below eta or t_end is reached.

    ``eps`` overrides the data scale of ``cfg``. The returned T_max is the
    linearly interpolated crossing time; runs without a crossing are
    censored (T_max is then the last time reached).
    """
    from .elastodyn import simulate

    if eps is not None:
        cfg = replace(cfg, eps=eps)
    scaled_u0 = u0 * cfg.eps
    if min_determinant(scaled_u0)[0] <= 0.0:
        raise ValueError("initial displacement must satisfy det(I + grad u0) > 0")
    rec = simulate(cfg, mesh, u0, u1, f, g, keep_snapshots=keep_snapshots)
    censored = rec.verdict != LIFESPAN_HIT
    t_max = rec.t_star if rec.t_star is not None else rec.t_max
    return LifespanResult(cfg.eps, float(t_max), censored, rec)


def fit_det_bound(records, d: int = 2) -> float:
    """Smallest C with min_det >= 1 - C ||u||^d_{V^p} on every row of ``records``."""
    best = 0.0
    for rec in records:
        for r in rec.rows:
            if r.u_vp > 0:
                best = max(best, (1.0 - r.min_det) / r.u_vp ** d)
    return best


def det_bound_violations(records, c_hat: float, d: int = 2) -> list[tuple[float, float, float]]:
    """Rows where min_det < 1 - c_hat ||u||^d; returns (t, min_det, bound)."""
    out = []
    for rec in records:
        for r in rec.rows:
            bound = 1.0 - c_hat * r.u_vp ** d
            if r.min_det < bound - 1e-12:
                out.append((r.t, r.min_det, bound))
    return out
