"""Vector-valued P1 finite elements: fields, quadrature, assembly and norms.

Degrees of freedom are numbered node-major, ``dof = 2 * node + component``,
which is the row-major flattening of an ``(n_nodes, 2)`` value array.
Tensor conventions: ``(grad v)[i, j] = d v_i / d x_j``.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh2D

# 3-point rule, exact for quadratics: barycentric coordinates and weights
# (weights sum to one, multiply by the triangle area).
TRI3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
TRI3_WEIGHTS = np.full(3, 1 / 3)

# 7-point rule, exact for degree 5 (Strang-Fix); used for error norms.
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
TRI7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
])
TRI7_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)

# 2-point Gauss rule on [0, 1]
EDGE2_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE2_WEIGHTS = np.array([0.5, 0.5])


@dataclass(eq=False)
class NodalField:
    """Piecewise-linear vector field given by its nodal values.

    With ``constrained=True`` the field belongs to V^p: its values on
    Dirichlet nodes must be exactly zero. Source terms such as the body
    force are unconstrained.
    """

    mesh: Mesh2D
    values: np.ndarray
    constrained: bool = True

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes, 2):
            raise ValueError(f"values must have shape ({self.mesh.n_nodes}, 2), got {vals.shape}")
        if self.constrained and np.any(vals[self.mesh.dirichlet_mask] != 0.0):
            raise ValueError("field does not vanish on the Dirichlet boundary")
        self.values = vals

    @property
    def dirichlet_mask(self) -> np.ndarray:
        if self.constrained:
            return self.mesh.dirichlet_mask
        return np.zeros(self.mesh.n_nodes, dtype=bool)

    @classmethod
    def zeros(cls, mesh: Mesh2D, constrained: bool = True) -> "NodalField":
        return cls(mesh, np.zeros((mesh.n_nodes, 2)), constrained)

    @classmethod
    def interpolate(cls, mesh: Mesh2D, fn, constrained: bool = True,
                    apply_mask: bool = False) -> "NodalField":
        """Nodal interpolant of ``fn(x, y) -> (vx, vy)`` (vectorised over nodes).

        ``apply_mask`` zeroes the Dirichlet nodes instead of rejecting the field.
        """
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        vx, vy = fn(x, y)
        vals = np.column_stack([np.broadcast_to(vx, x.shape), np.broadcast_to(vy, x.shape)]).astype(float)
        if apply_mask:
            vals[mesh.dirichlet_mask] = 0.0
        return cls(mesh, vals, constrained)

    def copy(self) -> "NodalField":
        return NodalField(self.mesh, self.values.copy(), self.constrained)

    def with_values(self, values) -> "NodalField":
        return NodalField(self.mesh, values, self.constrained)

    def __add__(self, other):
        return NodalField(self.mesh, self.values + other.values, self.constrained and other.constrained)

    def __sub__(self, other):
        return NodalField(self.mesh, self.values - other.values, self.constrained and other.constrained)

    def __mul__(self, s):
        return NodalField(self.mesh, float(s) * self.values, self.constrained)

    __rmul__ = __mul__


@dataclass(eq=False)
class QuadTensorField:
    """One 2x2 tensor per triangle (P1 gradients are triangle-wise constant)."""

    mesh: Mesh2D
    tensors: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensors, dtype=float)
        if t.shape == (2, 2):
            t = np.broadcast_to(t, (self.mesh.n_triangles, 2, 2)).copy()
        if t.shape != (self.mesh.n_triangles, 2, 2):
            raise ValueError(f"tensors must have shape ({self.mesh.n_triangles}, 2, 2)")
        if not np.all(np.isfinite(t)):
            raise ValueError("tensor field has non-finite entries")
        self.tensors = t


@dataclass(eq=False)
class BoundaryField:
    """Piecewise-constant traction, one 2-vector per boundary edge.

    Only Neumann edges may carry a nonzero value.
    """

    mesh: Mesh2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        nb = len(self.mesh.boundary_edges)
        if v.shape == (2,):
            v = np.where(self.mesh.neumann[:, None], v[None, :], 0.0)
        if v.shape != (nb, 2):
            raise ValueError(f"values must have shape ({nb}, 2)")
        if np.any(v[~self.mesh.neumann] != 0.0):
            raise ValueError("traction given on a Dirichlet edge")
        self.values = v

    @classmethod
    def zeros(cls, mesh: Mesh2D) -> "BoundaryField":
        return cls(mesh, np.zeros((len(mesh.boundary_edges), 2)))

    @classmethod
    def on_edges(cls, mesh: Mesh2D, edge_mask, value) -> "BoundaryField":
        vals = np.zeros((len(mesh.boundary_edges), 2))
        vals[np.asarray(edge_mask) & mesh.neumann] = value
        return cls(mesh, vals)

    def __mul__(self, s):
        return BoundaryField(self.mesh, float(s) * self.values)

    __rmul__ = __mul__


class P1Space:
    """Cached assembly data for one mesh."""

    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        self.n_nodes = mesh.n_nodes
        self.ndof = 2 * mesh.n_nodes
        self.area = mesh.areas
        self.dN = mesh.shape_gradients
        tri = mesh.triangles
        self.tdofs = np.stack([2 * tri, 2 * tri + 1], axis=2).reshape(-1, 6)
        self._rows = np.repeat(self.tdofs, 6, axis=1).ravel()
        self._cols = np.tile(self.tdofs, (1, 6)).ravel()
        # B[t, 2*i + j, 2*a + k] = delta_ik dN[t, a, j] maps element dofs to grad entries
        B = np.zeros((mesh.n_triangles, 4, 6))
        for i in range(2):
            for j in range(2):
                B[:, 2 * i + j, i::2] = self.dN[:, :, j]
        self.B = B
        self._BtA = np.swapaxes(B, 1, 2) * self.area[:, None, None]
        mask = np.repeat(mesh.dirichlet_mask, 2)
        self.free = np.flatnonzero(~mask)
        self.fixed = np.flatnonzero(mask)
        self.mass = self._assemble_mass()

    def _assemble_mass(self):
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        blocks = np.einsum("t,ab,ij->taibj", self.area, local, np.eye(2)).reshape(-1, 36)
        return sp.csr_matrix((blocks.ravel(), (self._rows, self._cols)), shape=(self.ndof, self.ndof))

    def grad(self, values: np.ndarray) -> np.ndarray:
        """(m, 2, 2) gradients of the P1 interpolant of nodal ``values``."""
        x = values.reshape(-1, 2)[self.mesh.triangles].reshape(-1, 6, 1)
        return (self.B @ x).reshape(-1, 2, 2)

    def grad_flat(self, x: np.ndarray) -> np.ndarray:
        return self.grad(x.reshape(-1, 2))

    def tensor_load(self, A: np.ndarray) -> np.ndarray:
        """Vector with entries int A : grad(phi_dof)."""
        local = (self._BtA @ A.reshape(-1, 4, 1)).reshape(-1)
        return np.bincount(self.tdofs.ravel(), weights=local, minlength=self.ndof)

    def tangent_matrix(self, D: np.ndarray):
        """Sparse matrix of int D[i,j,k,l] dphi_(a,i)/dx_j dphi_(b,k)/dx_l."""
        local = (self._BtA @ D.reshape(-1, 4, 4) @ self.B).reshape(-1, 36)
        return sp.csr_matrix((local.ravel(), (self._rows, self._cols)), shape=(self.ndof, self.ndof))

    def boundary_load(self, g: np.ndarray) -> np.ndarray:
        """Vector with entries int_{Gamma_N} g . phi_dof for piecewise-constant g."""
        out = np.zeros((self.n_nodes, 2))
        half = 0.5 * self.mesh.edge_lengths[:, None] * np.where(self.mesh.neumann[:, None], g, 0.0)
        np.add.at(out, self.mesh.boundary_edges[:, 0], half)
        np.add.at(out, self.mesh.boundary_edges[:, 1], half)
        return out.ravel()

    def at_points(self, values: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """(m, q, 2) values of the interpolant at barycentric points ``bary``."""
        return np.einsum("qa,tai->tqi", bary, values[self.mesh.triangles])

    def quad_points(self, bary: np.ndarray) -> np.ndarray:
        return np.einsum("qa,tai->tqi", bary, self.mesh.nodes[self.mesh.triangles])


_SPACES: "weakref.WeakKeyDictionary[Mesh2D, P1Space]" = weakref.WeakKeyDictionary()


def space(mesh: Mesh2D) -> P1Space:
    sp_ = _SPACES.get(mesh)
    if sp_ is None:
        sp_ = _SPACES[mesh] = P1Space(mesh)
    return sp_


def gradient(v: NodalField) -> QuadTensorField:
    return QuadTensorField(v.mesh, space(v.mesh).grad(v.values))


def lp_norm(field, q: float) -> float:
    """L^q norm over the domain; Euclidean/Frobenius pointwise magnitude."""
    if not q > 1:
        raise ValueError(f"exponent must be > 1, got {q}")
    if isinstance(field, QuadTensorField):
        mag = np.sqrt(np.einsum("tij,tij->t", field.tensors, field.tensors))
        return float(np.sum(field.mesh.areas * mag ** q) ** (1.0 / q))
    if isinstance(field, NodalField):
        pts = space(field.mesh).at_points(field.values, TRI3_BARY)
        mag = np.sqrt(np.einsum("tqi,tqi->tq", pts, pts))
        return float(np.sum(field.mesh.areas * (mag ** q @ TRI3_WEIGHTS)) ** (1.0 / q))
    raise TypeError(f"unsupported field type {type(field).__name__}")


def vp_norm(v: NodalField, p: float) -> float:
    """Norm of V^p: the L^p norm of the gradient."""
    return lp_norm(gradient(v), p)


def w1p_norm(v: NodalField, p: float) -> float:
    """Full W^{1,p} norm ||v||_{L^p} + ||grad v||_{L^p}."""
    return lp_norm(v, p) + vp_norm(v, p)


def l2_error(v: NodalField, exact, t_bary=TRI7_BARY, weights=TRI7_WEIGHTS) -> float:
    """L^2 distance between ``v`` and a callable ``exact(x, y) -> (vx, vy)``."""
    s = space(v.mesh)
    pts = s.quad_points(t_bary)
    ex, ey = exact(pts[..., 0], pts[..., 1])
    diff = s.at_points(v.values, t_bary) - np.stack([ex, ey], axis=-1)
    return float(np.sqrt(np.sum(v.mesh.areas * (np.einsum("tqi,tqi->tq", diff, diff) @ weights))))


def boundary_lp_norm(v: NodalField, q: float, neumann_only: bool = True) -> float:
    """L^q norm of the trace of ``v`` on Gamma_N (2-point Gauss per edge)."""
    mesh = v.mesh
    sel = mesh.neumann if neumann_only else np.ones(len(mesh.boundary_edges), bool)
    a = v.values[mesh.boundary_edges[sel, 0]]
    b = v.values[mesh.boundary_edges[sel, 1]]
    tot = 0.0
    for s, wq in zip(EDGE2_POINTS, EDGE2_WEIGHTS):
        val = (1 - s) * a + s * b
        tot += wq * np.sum(mesh.edge_lengths[sel] * np.hypot(val[:, 0], val[:, 1]) ** q)
    return float(tot ** (1.0 / q))


def boundary_l2_norm(g: BoundaryField) -> float:
    """L^2(Gamma_N) norm of a piecewise-constant traction."""
    vals = g.values[g.mesh.neumann]
    return float(np.sqrt(np.sum(g.mesh.edge_lengths[g.mesh.neumann] * np.einsum("ei,ei->e", vals, vals))))


def load_pairing(f: NodalField | None, g: BoundaryField | None, phi: NodalField) -> float:
    """int_Omega f . phi + int_{Gamma_N} g . phi."""
    s = space(phi.mesh)
    total = 0.0
    if f is not None:
        total += float(f.values.ravel() @ (s.mass @ phi.values.ravel()))
    if g is not None:
        total += float(s.boundary_load(g.values) @ phi.values.ravel())
    return total


def tensor_pairing(A: QuadTensorField, phi: NodalField) -> float:
    """int_Omega A : grad(phi)."""
    G = space(phi.mesh).grad(phi.values)
    return float(np.sum(A.mesh.areas * np.einsum("tij,tij->t", A.tensors, G)))


def assemble_mass_action(v: NodalField, phi: NodalField, rho: float = 1.0) -> float:
    """rho * int_Omega v . phi with the consistent P1 mass matrix."""
    s = space(v.mesh)
    return float(rho * (v.values.ravel() @ (s.mass @ phi.values.ravel())))


def l2_norm(v: NodalField) -> float:
    """Exact L^2 norm of a P1 field (consistent mass)."""
    return float(np.sqrt(max(assemble_mass_action(v, v), 0.0)))


def random_admissible_field(mesh: Mesh2D, rng: np.random.Generator, scale: float = 1.0) -> NodalField:
    vals = rng.uniform(-scale, scale, size=(mesh.n_nodes, 2))
    vals[mesh.dirichlet_mask] = 0.0
    return NodalField(mesh, vals)


def trace_constant_sample(mesh: Mesh2D, p: float, samples: int = 100, seed: int = 42) -> float:
    """Largest observed ||phi||_{L^p(Gamma_N)} / ||phi||_{W^{1,p}} over random admissible fields."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        phi = random_admissible_field(mesh, rng)
        den = w1p_norm(phi, p)
        if den > 0:
            best = max(best, boundary_lp_norm(phi, p) / den)
    return best
