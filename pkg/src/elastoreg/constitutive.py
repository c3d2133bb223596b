"""Green--St-Venant kinematics and hyperelastic strain energies.

Three families are provided, each written as a function of the
Green--St-Venant strain E:

* St-Venant--Kirchhoff:  mu tr(E^2) + lam/2 tr(E)^2                (p = 4)
* truncated Fung:        W0 + beta sum_{k=1..N} gamma^k tr(E^2)^k / k!  (p = 4N)
* Ogden (scalar form):   tr((2E + I)^gamma - I), gamma > 1           (p = 2 gamma)

All tensor routines are vectorised over leading axes: an array of shape
``(..., 2, 2)`` is a stack of tensors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

SVK = "svk"
FUNG_POLY = "fung"
OGDEN = "ogden"

_I2 = np.eye(2)


class DomainError(ValueError):
    """Tensor argument outside the domain of the energy (lost orientation)."""


@dataclass(frozen=True)
class MaterialModel:
    kind: str
    mu: float = 1.0
    lam: float = 1.0
    w0: float = 0.0
    beta: float = 1.0
    gamma: float = 1.0
    n: int = 2
    ogden_gamma: float = 2.0
    p: float = field(init=False)

    def __post_init__(self):
        if self.kind == SVK:
            if not self.mu > 0 or self.lam < 0:
                raise ValueError("SVK requires mu > 0 and lambda >= 0")
            p = 4.0
        elif self.kind == FUNG_POLY:
            if self.w0 < 0 or not self.beta > 0 or not self.gamma > 0:
                raise ValueError("Fung requires W0 >= 0, beta > 0, gamma > 0")
            if int(self.n) != self.n or self.n < 2:
                raise ValueError("Fung truncation order N must be an integer >= 2")
            object.__setattr__(self, "n", int(self.n))
            p = 4.0 * self.n
        elif self.kind == OGDEN:
            if not self.ogden_gamma > 1:
                raise ValueError("Ogden exponent must be > 1")
            p = 2.0 * self.ogden_gamma
        else:
            raise ValueError(f"unknown material kind {self.kind!r}")
        object.__setattr__(self, "p", p)

    @classmethod
    def svk(cls, mu=1.0, lam=1.0):
        return cls(SVK, mu=mu, lam=lam)

    @classmethod
    def fung(cls, beta=1.0, gamma=1.0, n=2, w0=0.0):
        return cls(FUNG_POLY, beta=beta, gamma=gamma, n=n, w0=w0)

    @classmethod
    def ogden(cls, gamma=2.0):
        return cls(OGDEN, ogden_gamma=gamma)

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def alpha(self) -> float:
        return min(1.0, (self.p - 2.0) / 2.0)

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == SVK:
            out.update(mu=self.mu, lam=self.lam)
        elif self.kind == FUNG_POLY:
            out.update(w0=self.w0, beta=self.beta, gamma=self.gamma, n=self.n)
        else:
            out.update(gamma=self.ogden_gamma)
        out.update(p=self.p)
        return out


def green_st_venant(G):
    """E = (G + G^T + G^T G) / 2 for displacement gradients G."""
    G = np.asarray(G, dtype=float)
    Gt = np.swapaxes(G, -1, -2)
    return 0.5 * (G + Gt + Gt @ G)


def _trace(A):
    return np.trace(A, axis1=-2, axis2=-1)


def _ddot(A, B):
    return np.einsum("...ij,...ij->...", A, B)


def _spd_eig(S):
    lam, Q = np.linalg.eigh(S)
    if np.any(lam <= 0.0):
        raise DomainError("matrix is not positive definite")
    return lam, Q


def symmetric_matrix_power(S, beta: float):
    """S^beta for symmetric positive-definite S via its eigendecomposition.

    Integer exponents use repeated multiplication so the result is exact
    up to rounding of the products.
    """
    S = np.asarray(S, dtype=float)
    lam, Q = _spd_eig(S)
    if float(beta).is_integer() and beta >= 0:
        return np.linalg.matrix_power(S, int(beta))
    return np.einsum("...ia,...a,...ja->...ij", Q, lam ** beta, Q)


def energy_density(m: MaterialModel, E):
    E = np.asarray(E, dtype=float)
    if m.kind == SVK:
        return m.mu * _ddot(E, E) + 0.5 * m.lam * _trace(E) ** 2
    if m.kind == FUNG_POLY:
        t = _ddot(E, E)
        return m.w0 + m.beta * sum(m.gamma ** k * t ** k / factorial(k) for k in range(1, m.n + 1))
    lam, _ = _spd_eig(2.0 * E + _I2)
    return np.sum(lam ** m.ogden_gamma - 1.0, axis=-1)


def _fung_series(m, t, upto):
    return sum(m.gamma ** k * t ** k / factorial(k) for k in range(0, upto + 1))


def stress(m: MaterialModel, E):
    """Second Piola--Kirchhoff stress dW/dE (symmetric for symmetric E)."""
    E = np.asarray(E, dtype=float)
    if m.kind == SVK:
        return 2.0 * m.mu * E + m.lam * _trace(E)[..., None, None] * _I2
    if m.kind == FUNG_POLY:
        s = _fung_series(m, _ddot(E, E), m.n - 1)
        return 2.0 * m.beta * m.gamma * s[..., None, None] * E
    return 2.0 * m.ogden_gamma * symmetric_matrix_power(2.0 * E + _I2, m.ogden_gamma - 1.0)


def stress_tangent(m: MaterialModel, E):
    """Fourth-order dSigma/dE, ``dSigma_ij = T_ijkl dE_kl`` for symmetric dE."""
    E = np.asarray(E, dtype=float)
    shape = E.shape[:-2]
    II = np.einsum("ik,jl->ijkl", _I2, _I2)
    if m.kind == SVK:
        T = 2.0 * m.mu * II + m.lam * np.einsum("ij,kl->ijkl", _I2, _I2)
        return np.broadcast_to(T, shape + (2, 2, 2, 2)).copy()
    if m.kind == FUNG_POLY:
        t = _ddot(E, E)
        s1 = _fung_series(m, t, m.n - 1)
        s2 = _fung_series(m, t, m.n - 2)
        return (2.0 * m.beta * m.gamma * s1[..., None, None, None, None] * II
                + 4.0 * m.beta * m.gamma ** 2 * s2[..., None, None, None, None]
                * np.einsum("...ij,...kl->...ijkl", E, E))
    # Ogden: Daleckii--Krein derivative of C -> 2 gamma C^(gamma-1), C = 2E + I
    g = m.ogden_gamma
    lam, Q = _spd_eig(2.0 * E + _I2)
    f = 2.0 * g * lam ** (g - 1.0)
    df = 2.0 * g * (g - 1.0) * lam ** (g - 2.0)
    la, lb = lam[..., :, None], lam[..., None, :]
    fa, fb = f[..., :, None], f[..., None, :]
    same = np.isclose(la, lb, rtol=1e-10, atol=1e-14)
    with np.errstate(divide="ignore", invalid="ignore"):
        div = np.where(same, 0.5 * (df[..., :, None] + df[..., None, :]), (fa - fb) / np.where(same, 1.0, la - lb))
    T = 2.0 * np.einsum("...ia,...jb,...ab,...ka,...lb->...ijkl", Q, Q, div, Q, Q)
    return 0.5 * (T + np.swapaxes(T, -1, -2))


def deformation_gradient(G):
    return _I2 + np.asarray(G, dtype=float)


def first_pk_tensor(m: MaterialModel, G):
    """(I + G) Sigma(E(G)): the tensor whose divergence drives the motion."""
    F = deformation_gradient(G)
    return F @ stress(m, green_st_venant(G))


def first_pk_tangent(m: MaterialModel, G):
    """d first_pk_tensor / dG as ``(..., i, j, k, l) = dP_ij / dG_kl``."""
    F = deformation_gradient(G)
    E = green_st_venant(G)
    S = stress(m, E)
    T = stress_tangent(m, E)
    T = 0.5 * (T + np.swapaxes(T, -1, -2))
    geo = np.einsum("ik,...lj->...ijkl", _I2, S)
    mat = np.einsum("...iq,...qjml,...km->...ijkl", F, T, F)
    return geo + mat


def stress_gradient_check(m: MaterialModel, samples: int = 200, r: float = 0.3, seed: int = 42,
                          h: float = 1e-5) -> float:
    """Max relative error between central differences of W and the stress."""
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < samples:
        a = rng.uniform(-r, r, 3)
        E = np.array([[a[0], a[2]], [a[2], a[1]]])
        if m.kind == OGDEN and np.any(np.linalg.eigvalsh(2 * E + np.eye(2)) <= 0):
            continue
        S = stress(m, E)
        fd = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                d = np.zeros((2, 2))
                # symmetric perturbation: dW/dE_ij for i != j counts both entries
                d[i, j] += 0.5 * h
                d[j, i] += 0.5 * h
                fd[i, j] = (energy_density(m, E + d) - energy_density(m, E - d)) / (2.0 * h)
        worst = max(worst, float(np.linalg.norm(fd - S) / max(np.linalg.norm(S), 1e-300)))
        done += 1
    return worst


# -- assumption validators ----------------------------------------------------

@dataclass
class A1Report:
    constant: float
    witness: np.ndarray | None
    samples_used: int
    rejected: int
    ratios: np.ndarray


@dataclass
class A3Report:
    constant: float
    radius: float
    samples_used: int
    rejected: int


def _default_mesh():
    from .mesh import build_rectangle_mesh
    return build_rectangle_mesh(4, 4, 1.0, 1.0, ("left",))


def random_strain_field(n_triangles: int, rng: np.random.Generator, r: float = 1.0):
    """Symmetric per-triangle tensors with i.i.d. uniform entries in [-r, r]."""
    a = rng.uniform(-r, r, size=(n_triangles, 3))
    E = np.empty((n_triangles, 2, 2))
    E[:, 0, 0], E[:, 1, 1] = a[:, 0], a[:, 1]
    E[:, 0, 1] = E[:, 1, 0] = a[:, 2]
    return E


def _field_norm(areas, E, q):
    mag = np.sqrt(_ddot(E, E))
    return float(np.sum(areas * mag ** q) ** (1.0 / q))


def _sample_strains(m, areas, samples, radius, rng, psd_only):
    """Yield (E, ||E||_{L^{p/2}}) with the norm uniform in (0, radius]."""
    q = m.p / 2.0
    rejected = 0
    out = []
    for _ in range(samples):
        E = random_strain_field(len(areas), rng)
        if psd_only:
            lam, Q = np.linalg.eigh(E)
            E = np.einsum("tia,ta,tja->tij", Q, np.abs(lam), Q)
        nrm = _field_norm(areas, E, q)
        if nrm == 0.0:
            rejected += 1
            continue
        target = radius * rng.uniform(0.0, 1.0)
        if target == 0.0:
            rejected += 1
            continue
        E = E * (target / nrm)
        if m.kind == OGDEN and np.any(np.linalg.eigvalsh(2.0 * E + _I2) <= 0.0):
            rejected += 1
            continue
        out.append((E, target))
    return out, rejected


def validate_A1(m: MaterialModel, samples: int = 200, radius: float = 1.0, mesh=None,
                seed: int = 42, psd_only: bool = False) -> A1Report:
    """Smallest sampled ratio int W(E) / ||E||^{p/2}_{L^{p/2}}.

    A positive value supports the coercivity assumption; a value near
    zero or negative is returned together with the field that produced it.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    mesh = mesh if mesh is not None else _default_mesh()
    rng = np.random.default_rng(seed)
    areas = mesh.areas
    q = m.p / 2.0
    drawn, rejected = _sample_strains(m, areas, samples, radius, rng, psd_only)
    ratios = []
    best, witness = np.inf, None
    for E, nrm in drawn:
        ratio = float(np.sum(areas * energy_density(m, E))) / nrm ** q
        ratios.append(ratio)
        if ratio < best:
            best, witness = ratio, E
    return A1Report(best, witness, len(drawn), rejected, np.array(ratios))


def validate_A3prime(m: MaterialModel, samples: int = 200, R: float = 1.0, mesh=None,
                     seed: int = 42) -> A3Report:
    """Largest sampled (||S(E)|| - ||S(0)||) / ||E||^alpha in the dual exponent norm."""
    mesh = mesh if mesh is not None else _default_mesh()
    rng = np.random.default_rng(seed)
    areas = mesh.areas
    q_dual = (m.p / 2.0) / (m.p / 2.0 - 1.0)
    s0 = _field_norm(areas, stress(m, np.zeros((len(areas), 2, 2))), q_dual)
    drawn, rejected = _sample_strains(m, areas, samples, R, rng, psd_only=False)
    best = 0.0
    for E, nrm in drawn:
        best = max(best, (_field_norm(areas, stress(m, E), q_dual) - s0) / nrm ** m.alpha)
    return A3Report(best, R, len(drawn), rejected)
