"""Triangulated reference domains with Dirichlet/Neumann boundary tags.

Meshes are immutable once built. Geometric quantities (areas, shape
gradients, edge normals) are computed lazily and cached on the instance.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

DIRICHLET = "D"
NEUMANN = "N"

SIDES = ("left", "right", "bottom", "top")


class MeshError(ValueError):
    """Raised when a mesh violates its structural invariants."""


class MeshFormatError(MeshError):
    """Parse error in an ASCII mesh file; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Simplicial mesh of a polygonal domain.

    Parameters
    ----------
    nodes : (n, 2) float array
    triangles : (m, 3) int array, counter-clockwise
    boundary_edges : (b, 2) int array
    boundary_tags : (b,) array of "D" / "N"
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64)
        tags = np.asarray(self.boundary_tags, dtype="<U1")
        for arr in (nodes, tris, edges, tags):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_edges", edges)
        object.__setattr__(self, "boundary_tags", tags)
        self._validate()

    def _validate(self):
        n = len(self.nodes)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (n, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if self.boundary_edges.ndim != 2 or self.boundary_edges.shape[1] != 2:
            raise MeshError("boundary_edges must have shape (b, 2)")
        if len(self.boundary_tags) != len(self.boundary_edges):
            raise MeshError("one tag per boundary edge required")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinates")
        for name, idx in (("triangle", self.triangles), ("boundary edge", self.boundary_edges)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise MeshError(f"{name} references a node outside [0, {n})")
        bad = np.flatnonzero(self.signed_areas <= 0.0)
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has non-positive signed area")
        unknown = set(np.unique(self.boundary_tags)) - {DIRICHLET, NEUMANN}
        if unknown:
            raise MeshError(f"unknown boundary tags {sorted(unknown)}")
        if not np.any(self.boundary_tags == DIRICHLET):
            raise MeshError("at least one boundary edge must be Dirichlet (|Gamma_D| > 0)")

        # edge -> triangle incidence
        keys, counts = np.unique(self._sorted_tri_edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        topo = keys[counts == 1]
        given = np.sort(self.boundary_edges, axis=1)
        given_u, given_c = np.unique(given, axis=0, return_counts=True)
        if np.any(given_c > 1):
            raise MeshError("duplicate boundary edge")
        if len(given_u) != len(topo) or not np.array_equal(given_u, topo):
            raise MeshError("boundary edges do not match the topological boundary")

    @cached_property
    def _sorted_tri_edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        x = self.nodes[self.triangles]
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(m, 3, 2) gradients of the barycentric basis functions."""
        x = self.nodes[self.triangles]
        jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)  # columns
        inv = np.linalg.inv(jac)  # rows are grad(lambda_1), grad(lambda_2)
        g = np.empty((self.n_triangles, 3, 2))
        g[:, 1:] = inv
        g[:, 0] = -inv.sum(axis=1)
        return g

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary edges."""
        a = self.nodes[self.boundary_edges[:, 0]]
        b = self.nodes[self.boundary_edges[:, 1]]
        d = b - a
        nrm = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_lengths[:, None]
        # orient away from the opposite vertex of the owning triangle
        third = self.nodes[self._edge_opposite_vertex]
        flip = np.einsum("ij,ij->i", nrm, third - a) > 0
        nrm[flip] *= -1.0
        return nrm

    @cached_property
    def _edge_opposite_vertex(self) -> np.ndarray:
        opposite = np.concatenate([self.triangles[:, 2], self.triangles[:, 0], self.triangles[:, 1]])
        lookup = {tuple(e): o for e, o in zip(self._sorted_tri_edges.tolist(), opposite.tolist())}
        return np.array([lookup[tuple(e)] for e in np.sort(self.boundary_edges, axis=1).tolist()],
                        dtype=np.int64)

    @cached_property
    def neumann(self) -> np.ndarray:
        """Boolean mask over boundary edges."""
        return self.boundary_tags == NEUMANN

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        """Per-node mask; nodes touching any Dirichlet edge are constrained."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_edges[self.boundary_tags == DIRICHLET].ravel()] = True
        mask.setflags(write=False)
        return mask

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def h(self) -> float:
        """Largest triangle edge length."""
        x = self.nodes[self.triangles]
        e = np.concatenate([x[:, 1] - x[:, 0], x[:, 2] - x[:, 1], x[:, 0] - x[:, 2]])
        return float(np.hypot(e[:, 0], e[:, 1]).max())

    def equals(self, other: "Mesh2D") -> bool:
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and np.array_equal(self.boundary_tags, other.boundary_tags)
        )


def build_rectangle_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0,
                         dirichlet_sides=("left",)) -> Mesh2D:
    """Structured crossed-triangle mesh of ``[0, lx] x [0, ly]``.

    Every grid cell is split into four triangles through an added centre
    node, so a 1x1 mesh has 5 nodes and 4 triangles.
    """
    if int(nx) < 1 or int(ny) < 1:
        raise ValueError("nx and ny must be >= 1")
    if lx <= 0 or ly <= 0:
        raise ValueError("lx and ly must be positive")
    if isinstance(dirichlet_sides, str):
        dirichlet_sides = [s for s in dirichlet_sides.replace(",", " ").split() if s]
    sides = set(dirichlet_sides)
    if not sides:
        raise ValueError("dirichlet_sides must be nonempty (|Gamma_D| > 0 required)")
    if sides - set(SIDES):
        raise ValueError(f"unknown sides {sorted(sides - set(SIDES))}; expected {SIDES}")
    nx, ny = int(nx), int(ny)

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    nodes = np.vstack([grid, centres])

    def g(i, j):
        return j * (nx + 1) + i

    offset = (nx + 1) * (ny + 1)
    tris = []
    for j in range(ny):
        for i in range(nx):
            c = offset + j * nx + i
            a, b, d, e = g(i, j), g(i + 1, j), g(i + 1, j + 1), g(i, j + 1)
            tris += [(a, b, c), (b, d, c), (d, e, c), (e, a, c)]

    edges, tags = [], []
    side_edges = {
        "bottom": [(g(i, 0), g(i + 1, 0)) for i in range(nx)],
        "right": [(g(nx, j), g(nx, j + 1)) for j in range(ny)],
        "top": [(g(i + 1, ny), g(i, ny)) for i in reversed(range(nx))],
        "left": [(g(0, j + 1), g(0, j)) for j in reversed(range(ny))],
    }
    for side in ("bottom", "right", "top", "left"):
        tag = DIRICHLET if side in sides else NEUMANN
        edges += side_edges[side]
        tags += [tag] * len(side_edges[side])

    return Mesh2D(nodes, np.array(tris), np.array(edges), np.array(tags))


def side_edge_mask(mesh: Mesh2D, side: str, tol: float = 1e-12) -> np.ndarray:
    """Boundary edges lying on one side of the mesh's bounding box."""
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    axis, value = {"left": (0, lo[0]), "right": (0, hi[0]),
                   "bottom": (1, lo[1]), "top": (1, hi[1])}[side]
    ends = mesh.nodes[mesh.boundary_edges][:, :, axis]
    scale = max(1.0, float(np.abs(hi - lo).max()))
    return np.all(np.abs(ends - value) <= tol * scale, axis=1)


def save_mesh(mesh: Mesh2D, path) -> None:
    lines = ["mesh2d v1", f"nodes {mesh.n_nodes}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh2D:
    """Read the ``mesh2d v1`` ASCII format written by :func:`save_mesh`."""
    raw = Path(path).read_text().splitlines()
    lines = [(k + 1, s.strip()) for k, s in enumerate(raw) if s.strip() and not s.lstrip().startswith("#")]
    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise MeshFormatError(last + 1, f"unexpected end of file, expected {what}")
        item = lines[pos]
        pos += 1
        return item

    lineno, head = take("header")
    if head != "mesh2d v1":
        raise MeshFormatError(lineno, f"bad header {head!r}, expected 'mesh2d v1'")

    def count(keyword):
        ln, s = take(f"'{keyword} <count>'")
        parts = s.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise MeshFormatError(ln, f"expected '{keyword} <count>', got {s!r}")
        try:
            c = int(parts[1])
        except ValueError:
            raise MeshFormatError(ln, f"malformed count {parts[1]!r}") from None
        if c < 0:
            raise MeshFormatError(ln, "negative count")
        return c

    n = count("nodes")
    nodes = np.empty((n, 2))
    for r in range(n):
        ln, s = take("node coordinates")
        parts = s.split()
        try:
            if len(parts) != 2:
                raise ValueError
            nodes[r] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError(ln, f"expected 'x y', got {s!r}") from None

    def indices(ln, parts, k):
        try:
            if len(parts) < k:
                raise ValueError
            idx = [int(v) for v in parts[:k]]
        except ValueError:
            raise MeshFormatError(ln, "malformed node indices") from None
        for v in idx:
            if not 0 <= v < n:
                raise MeshFormatError(ln, f"node index {v} out of range [0, {n})")
        return idx

    m = count("triangles")
    tris = np.empty((m, 3), dtype=np.int64)
    for r in range(m):
        ln, s = take("triangle")
        parts = s.split()
        if len(parts) != 3:
            raise MeshFormatError(ln, f"expected 'i j k', got {s!r}")
        tris[r] = indices(ln, parts, 3)
        x = nodes[tris[r]]
        d1, d2 = x[1] - x[0], x[2] - x[0]
        if d1[0] * d2[1] - d1[1] * d2[0] <= 0:
            raise MeshFormatError(ln, "triangle has non-positive signed area")

    b = count("boundary")
    edges = np.empty((b, 2), dtype=np.int64)
    tags = []
    for r in range(b):
        ln, s = take("boundary edge")
        parts = s.split()
        if len(parts) != 3:
            raise MeshFormatError(ln, f"expected 'i j TAG', got {s!r}")
        edges[r] = indices(ln, parts, 2)
        if parts[2] not in (DIRICHLET, NEUMANN):
            raise MeshFormatError(ln, f"boundary tag must be D or N, got {parts[2]!r}")
        tags.append(parts[2])
    if pos != len(lines):
        raise MeshFormatError(lines[pos][0], "trailing content after boundary section")

    try:
        return Mesh2D(nodes, tris, edges, np.array(tags, dtype="<U1"))
    except MeshError as exc:
        raise MeshFormatError(lines[-1][0] if lines else 0, str(exc)) from None
