"""Iso-surface extraction and mesh utilities.

``marching_cubes`` consumes a cubic value grid sampled at cell centers, so an
m-resolution grid spans the lattice [0.5/m, 1 - 0.5/m]^3 and produces
(m - 1)^3 marching cells.  Vertices on shared cell edges are welded by exact
edge identity (the integer lattice pair), which makes the topology usable for
connected-component counting and keeps extraction deterministic at any
resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

Array = np.ndarray


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface with consistent outward orientation."""

    vertices: Array = field(repr=False)   # (V, 3) float64
    triangles: Array = field(repr=False)  # (T, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise DataError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def is_empty(self) -> bool:
        return self.triangles.shape[0] == 0

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> Array:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive for closed outward meshes."""
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def empty_mesh() -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def marching_cubes(values: Array, iso: float = 0.5) -> TriangleMesh:
    """Extract the iso-surface of a cubic cell-center value grid.

    A lattice point is inside when its value exceeds ``iso``; crossings are
    placed by linear interpolation.  A grid entirely on one side of the
    iso-level yields an empty mesh.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or len(set(values.shape)) != 1:
        raise DataError(f"expected a cubic value grid, got shape {values.shape}")
    m = values.shape[0]
    if m < 2:
        raise DataError(f"marching cubes needs resolution >= 2, got {m}")
    if not np.isfinite(values).all():
        raise DataError("value grid contains non-finite entries")

    inside = values > iso
    mc = m - 1
    case = np.zeros((mc, mc, mc), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= inside[dx:dx + mc, dy:dy + mc, dz:dz + mc].astype(np.uint16) << bit
    active = np.argwhere((case != 0) & (case != 255))

    scale = 1.0 / m
    half = 0.5 / m
    vertex_ids: dict[tuple, int] = {}
    verts: list[tuple] = []
    tris: list[tuple] = []

    for i, j, k in active:
        cube_index = int(case[i, j, k])
        edge_mask = EDGE_TABLE[cube_index]
        edge_vertex = [-1] * 12
        for e in range(12):
            if not edge_mask >> e & 1:
                continue
            ca, cb = EDGE_CORNERS[e]
            oa, ob = CORNER_OFFSETS[ca], CORNER_OFFSETS[cb]
            pa = (i + oa[0], j + oa[1], k + oa[2])
            pb = (i + ob[0], j + ob[1], k + ob[2])
            key = (pa, pb) if pa < pb else (pb, pa)
            vid = vertex_ids.get(key)
            if vid is None:
                va = values[pa]
                vb = values[pb]
                t = (iso - va) / (vb - va)
                vid = len(verts)
                verts.append((
                    half + scale * (pa[0] + t * (pb[0] - pa[0])),
                    half + scale * (pa[1] + t * (pb[1] - pa[1])),
                    half + scale * (pa[2] + t * (pb[2] - pa[2])),
                ))
                vertex_ids[key] = vid
            edge_vertex[e] = vid
        tri_edges = TRI_TABLE[cube_index]
        for t0 in range(0, len(tri_edges), 3):
            # table winding encloses the below-iso side; flip for outward normals
            a = edge_vertex[tri_edges[t0]]
            b = edge_vertex[tri_edges[t0 + 2]]
            c = edge_vertex[tri_edges[t0 + 1]]
            if a != b and b != c and a != c:
                tris.append((a, b, c))

    if not tris:
        return empty_mesh()
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64))


# ---- mesh analysis -----------------------------------------------------------


def connected_components(mesh: TriangleMesh) -> tuple[int, list[int]]:
    """Count maximal triangle groups linked through shared vertices.

    Returns (count, per-component triangle counts sorted descending).
    """
    t = mesh.num_triangles
    if t == 0:
        return 0, []
    parent = np.arange(t)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    first_tri: dict[int, int] = {}
    for ti in range(t):
        for v in mesh.triangles[ti]:
            v = int(v)
            if v in first_tri:
                ra, rb = find(first_tri[v]), find(ti)
                if ra != rb:
                    parent[rb] = ra
            else:
                first_tri[v] = ti
    roots = np.array([find(ti) for ti in range(t)])
    _, sizes = np.unique(roots, return_counts=True)
    return len(sizes), sorted((int(s) for s in sizes), reverse=True)


def edge_incidence_counts(mesh: TriangleMesh) -> Array:
    """Number of triangles sharing each undirected edge (watertight == all 2)."""
    if mesh.is_empty:
        return np.zeros(0, dtype=np.int64)
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


def sample_surface(mesh: TriangleMesh, k: int, rng: np.random.Generator) -> Array:
    """k points uniform on the surface: area-weighted triangle choice, then
    uniform barycentric placement.  Returns (k, 3)."""
    if mesh.is_empty:
        raise DataError("cannot sample an empty mesh")
    if k < 1:
        raise ValueError(f"sample count must be >= 1, got {k}")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise DataError("mesh has zero total area")
    chosen = rng.choice(mesh.num_triangles, size=k, p=areas / total)
    u = rng.uniform(0.0, 1.0, k)
    v = rng.uniform(0.0, 1.0, k)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a = mesh.vertices[mesh.triangles[chosen, 0]]
    b = mesh.vertices[mesh.triangles[chosen, 1]]
    c = mesh.vertices[mesh.triangles[chosen, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


# ---- OBJ export ----------------------------------------------------------------


def export_obj(mesh: TriangleMesh, path) -> None:
    """Plain-text OBJ: header comment, ``v`` lines (9 significant digits),
    then 1-based ``f`` lines."""
    lines = [f"# cubefield mesh: {mesh.num_vertices} vertices, {mesh.num_triangles} triangles"]
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.triangles:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w") as fp:
        fp.write("\n".join(lines) + "\n")
