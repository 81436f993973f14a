"""Voxel occupancy grids on the unit cube: construction, sampling and binvox I/O.

A resolution-``n`` grid partitions [0,1]^3 into n^3 axis-aligned cells of side
1/n.  Occupancy is stored as one flat byte per cell in x-major order with y
varying fastest (flat index ``x*n*n + z*n + y``), which is also the order the
binvox file format uses, so file payloads map to storage one-to-one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BinvoxFormatError, DataError
from .intervals import Box3, Interval

Array = np.ndarray

BINVOX_MAGIC = b"#binvox"


@dataclass(frozen=True)
class VoxelGrid:
    """Binary occupancy labels on an n^3 cell lattice over the unit cube."""

    n: int
    occupancy: Array = field(repr=False)  # uint8, length n^3, flat storage order

    def __post_init__(self):
        if self.n < 1:
            raise DataError(f"resolution must be >= 1, got {self.n}")
        occ = np.ascontiguousarray(np.asarray(self.occupancy, dtype=np.uint8).reshape(-1))
        if occ.size != self.n ** 3:
            raise DataError(f"occupancy length {occ.size} != n^3 = {self.n ** 3}")
        object.__setattr__(self, "occupancy", occ)

    @staticmethod
    def from_dense(dense: Array) -> "VoxelGrid":
        """Build from an (n, n, n) array indexed [x, y, z]."""
        dense = np.asarray(dense)
        if dense.ndim != 3 or len(set(dense.shape)) != 1:
            raise DataError(f"expected a cubic (n, n, n) array, got {dense.shape}")
        flat = (dense != 0).astype(np.uint8).transpose(0, 2, 1).reshape(-1)
        return VoxelGrid(dense.shape[0], flat)

    def dense(self) -> Array:
        """(n, n, n) uint8 array indexed [x, y, z]."""
        n = self.n
        return self.occupancy.reshape(n, n, n).transpose(0, 2, 1)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def label(self, flat_index: int) -> int:
        return int(self.occupancy[flat_index])


def cell_index(n: int, x: int, y: int, z: int) -> int:
    return x * n * n + z * n + y


def cell_lower_corners(n: int, flat_indices: Array) -> Array:
    """Lower corners of cells given flat storage indices; shape (k, 3)."""
    flat_indices = np.asarray(flat_indices)
    x = flat_indices // (n * n)
    rem = flat_indices % (n * n)
    z = rem // n
    y = rem % n
    return np.stack([x, y, z], axis=-1) / float(n)


def grid_cells(n: int) -> list[Box3]:
    """All n^3 cells in flat storage order (x-major, y fastest)."""
    if n < 1:
        raise DataError(f"resolution must be >= 1, got {n}")
    step = 1.0 / n
    cells = []
    for x in range(n):
        for z in range(n):
            for y in range(n):
                cells.append(Box3(
                    Interval(x * step, (x + 1) * step),
                    Interval(y * step, (y + 1) * step),
                    Interval(z * step, (z + 1) * step),
                ))
    return cells


@dataclass(frozen=True)
class LabeledCube:
    """One grid cell together with its occupancy label (1 = inside)."""

    cube: Box3
    label: int


def labeled_cells(grid: VoxelGrid) -> list[LabeledCube]:
    cells = grid_cells(grid.n)
    return [LabeledCube(c, int(v)) for c, v in zip(cells, grid.occupancy)]


def sample_point(cube: Box3, rng: np.random.Generator) -> Array:
    """One point uniform in the closed box, each axis independent."""
    lo = cube.lo
    return lo + rng.uniform(0.0, 1.0, 3) * (cube.hi - lo)


# ---- binvox I/O ---------------------------------------------------------


def load_binvox(path) -> VoxelGrid:
    """Read a version-1 binvox file with cubic dimensions."""
    with open(path, "rb") as fp:
        raw = fp.read()
    header_end = raw.find(b"data\n")
    if not raw.startswith(BINVOX_MAGIC):
        raise BinvoxFormatError("bad-magic", f"file {path} does not start with #binvox")
    if header_end < 0:
        raise BinvoxFormatError("bad-header", "missing data section")
    dims = None
    for line in raw[:header_end].split(b"\n"):
        parts = line.split()
        if parts and parts[0] == b"dim":
            try:
                dims = [int(p) for p in parts[1:]]
            except ValueError:
                raise BinvoxFormatError("bad-header", f"unparseable dim line {line!r}") from None
    if not dims:
        raise BinvoxFormatError("bad-header", "missing dim line")
    if len(dims) != 3 or len(set(dims)) != 1 or dims[0] < 1:
        raise BinvoxFormatError("non-cubic", f"dims {dims}")
    n = dims[0]
    payload = np.frombuffer(raw[header_end + 5:], dtype=np.uint8)
    if payload.size % 2 != 0:
        raise BinvoxFormatError("truncated-rle", f"odd payload length {payload.size}")
    values, counts = payload[::2], payload[1::2]
    total = int(counts.sum(dtype=np.int64))
    if total != n ** 3:
        raise BinvoxFormatError("count-mismatch", f"runs decode to {total} cells, expected {n ** 3}")
    occupancy = np.repeat((values != 0).astype(np.uint8), counts)
    return VoxelGrid(n, occupancy)


def save_binvox(grid: VoxelGrid, path) -> None:
    """Write a version-1 binvox file; runs longer than 255 are split."""
    occ = grid.occupancy
    chunks = [
        b"#binvox 1\n",
        f"dim {grid.n} {grid.n} {grid.n}\n".encode(),
        b"translate 0 0 0\n",
        b"scale 1\n",
        b"data\n",
    ]
    boundaries = np.flatnonzero(occ[1:] != occ[:-1]) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [occ.size]])
    out = bytearray()
    for s, e in zip(starts, ends):
        value = int(occ[s])
        run = int(e - s)
        while run > 0:
            c = min(run, 255)
            out.append(value)
            out.append(c)
            run -= c
    chunks.append(bytes(out))
    with open(path, "wb") as fp:
        fp.write(b"".join(chunks))


# ---- procedural shape generation ----------------------------------------


def _require_unit(name: str, value: float, lo: float = 0.0, hi: float = 1.0):
    if not lo <= value <= hi:
        raise DataError(f"{name} = {value} leaves the unit cube")


def _cell_centers(n: int) -> tuple[Array, Array, Array]:
    c = (np.arange(n) + 0.5) / n
    return np.meshgrid(c, c, c, indexing="ij")


def gen_shape(kind: str, n: int, params: dict | None = None) -> VoxelGrid:
    """Procedural occupancy grid: a cell is inside iff its center satisfies
    the analytic predicate of the requested shape.

    Kinds and their parameters (all defaulted to a centered, safely-contained
    instance): ``sphere`` (center, radius), ``box`` (lo, hi), ``torus``
    (center, major_radius, minor_radius; axis fixed to z),
    ``two_spheres`` / ``union-of-two-spheres`` (center1, radius1, center2,
    radius2), ``frame`` (lo, hi, thickness: the 12 edge beams of a box).
    """
    if n < 4:
        raise DataError(f"shape generation needs n >= 4, got {n}")
    p = dict(params or {})
    kind = kind.replace("-", "_")
    if kind == "union_of_two_spheres":
        kind = "two_spheres"
    X, Y, Z = _cell_centers(n)

    if kind == "sphere":
        cx, cy, cz = p.get("center", (0.5, 0.5, 0.5))
        r = p.get("radius", 0.3)
        if r <= 0:
            raise DataError(f"radius must be positive, got {r}")
        for name, c in (("x", cx), ("y", cy), ("z", cz)):
            _require_unit(f"sphere center {name} +- radius", c - r)
            _require_unit(f"sphere center {name} +- radius", c + r)
        inside = (X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2 <= r * r
    elif kind == "box":
        lo = p.get("lo", (0.2, 0.2, 0.2))
        hi = p.get("hi", (0.8, 0.8, 0.8))
        for a, b in zip(lo, hi):
            _require_unit("box corner", a)
            _require_unit("box corner", b)
            if a >= b:
                raise DataError(f"box lo {lo} not strictly below hi {hi}")
        inside = ((X >= lo[0]) & (X <= hi[0]) & (Y >= lo[1]) & (Y <= hi[1])
                  & (Z >= lo[2]) & (Z <= hi[2]))
    elif kind == "torus":
        cx, cy, cz = p.get("center", (0.5, 0.5, 0.5))
        major = p.get("major_radius", 0.28)
        minor = p.get("minor_radius", 0.1)
        if not 0 < minor < major:
            raise DataError(f"need 0 < minor_radius < major_radius, got {minor}, {major}")
        reach = major + minor
        for c, r in ((cx, reach), (cy, reach), (cz, minor)):
            _require_unit("torus extent", c - r)
            _require_unit("torus extent", c + r)
        ring = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2) - major
        inside = ring ** 2 + (Z - cz) ** 2 <= minor * minor
    elif kind == "two_spheres":
        c1 = p.get("center1", (0.3, 0.35, 0.35))
        r1 = p.get("radius1", 0.16)
        c2 = p.get("center2", (0.7, 0.65, 0.65))
        r2 = p.get("radius2", 0.16)
        a = gen_shape("sphere", n, {"center": c1, "radius": r1})
        b = gen_shape("sphere", n, {"center": c2, "radius": r2})
        return VoxelGrid(n, np.maximum(a.occupancy, b.occupancy))
    elif kind == "frame":
        lo = p.get("lo", (0.2, 0.2, 0.2))
        hi = p.get("hi", (0.8, 0.8, 0.8))
        t = p.get("thickness", 0.12)
        for a, b in zip(lo, hi):
            _require_unit("frame corner", a)
            _require_unit("frame corner", b)
            if b - a <= 2 * t:
                raise DataError(f"frame thickness {t} too large for extent [{a}, {b}]")
        in_box = ((X >= lo[0]) & (X <= hi[0]) & (Y >= lo[1]) & (Y <= hi[1])
                  & (Z >= lo[2]) & (Z <= hi[2]))
        # a point belongs to an edge beam iff at most one axis is interior
        interior = ((X > lo[0] + t) & (X < hi[0] - t)).astype(np.uint8)
        interior += ((Y > lo[1] + t) & (Y < hi[1] - t)).astype(np.uint8)
        interior += ((Z > lo[2] + t) & (Z < hi[2] - t)).astype(np.uint8)
        inside = in_box & (interior <= 1)
    else:
        raise DataError(f"unknown shape kind {kind!r}")
    return VoxelGrid.from_dense(inside)


SHAPE_KINDS = ("sphere", "box", "torus", "two_spheres", "frame")

# curated desk-scale dataset: eight shapes covering every generator kind
DESK_SHAPES: tuple[tuple[str, str, dict], ...] = (
    ("sphere_large", "sphere", {"center": (0.5, 0.5, 0.5), "radius": 0.3}),
    ("sphere_small", "sphere", {"center": (0.38, 0.58, 0.5), "radius": 0.18}),
    ("box_flat", "box", {"lo": (0.2, 0.25, 0.2), "hi": (0.8, 0.7, 0.75)}),
    ("box_pillar", "box", {"lo": (0.35, 0.15, 0.35), "hi": (0.65, 0.85, 0.65)}),
    ("torus_thin", "torus", {"center": (0.5, 0.5, 0.5), "major_radius": 0.28,
                             "minor_radius": 0.1}),
    ("torus_thick", "torus", {"center": (0.5, 0.5, 0.48), "major_radius": 0.3,
                              "minor_radius": 0.13}),
    ("two_spheres", "two_spheres", {}),
    ("frame", "frame", {}),
)


def desk_dataset(n: int = 32) -> list[tuple[str, VoxelGrid]]:
    """The named eight-shape dataset used by the end-to-end checks."""
    return [(name, gen_shape(kind, n, params)) for name, kind, params in DESK_SHAPES]


# ---- resolution changes ---------------------------------------------------


def downsample(grid: VoxelGrid, k: int) -> VoxelGrid:
    """Reduce resolution by k; a coarse cell is occupied iff at least half of
    its k^3 children are (ties count as occupied)."""
    if k < 1 or grid.n % k != 0:
        raise DataError(f"factor {k} does not divide resolution {grid.n}")
    if k == 1:
        return grid
    n2 = grid.n // k
    dense = grid.dense().reshape(n2, k, n2, k, n2, k)
    counts = dense.sum(axis=(1, 3, 5), dtype=np.int64)
    return VoxelGrid.from_dense(2 * counts >= k ** 3)


def upsample(grid: VoxelGrid, k: int) -> VoxelGrid:
    """Raise resolution by k; each cell is copied to its k^3 children."""
    if k < 1:
        raise DataError(f"factor must be >= 1, got {k}")
    if k == 1:
        return grid
    dense = grid.dense()
    for axis in range(3):
        dense = np.repeat(dense, k, axis=axis)
    return VoxelGrid.from_dense(dense)


def resample(grid: VoxelGrid, m: int) -> VoxelGrid:
    """Bring a grid to resolution m by integer up- or downsampling."""
    if m == grid.n:
        return grid
    if m > grid.n:
        if m % grid.n != 0:
            raise DataError(f"cannot resample {grid.n} -> {m}: not an integer factor")
        return upsample(grid, m // grid.n)
    if grid.n % m != 0:
        raise DataError(f"cannot resample {grid.n} -> {m}: not an integer factor")
    return downsample(grid, grid.n // m)
