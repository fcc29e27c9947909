"""Occupancy octree of the search region, built from point-cloud observations.

The octree is stored as a dense boolean ground grid plus a reduction pyramid:
level-l entry is True iff any descendant ground cell is occupied, which is
exactly the internal-node-exists condition of a pointer octree (region sizes
in scope are small enough that dense storage wins).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridCell, RegionSpec


class RegionMismatchError(ValueError):
    """Occupancy update attempted with an incompatible region spec."""


@dataclass(frozen=True)
class OccupancyOctree:
    """Boolean-leaf octree over the region grid; immutable snapshot.

    ``observed_lo``/``observed_hi`` record the inclusive cell bounds of the
    point-cloud extent seen so far; they define the default feasible region.
    """

    region: RegionSpec
    grid: np.ndarray  # bool, shape (m, m, m), C-order [x, y, z]
    observed_lo: GridCell | None = None
    observed_hi: GridCell | None = None
    _levels: list = field(default=None, repr=False, compare=False)
    _packed: frozenset = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        m = self.region.size
        if self.grid.shape != (m, m, m):
            raise ValueError(f"grid shape {self.grid.shape} does not match size {m}")
        self.grid.setflags(write=False)

    @property
    def levels(self) -> list[np.ndarray]:
        """Reduction pyramid: levels[l][x,y,z] True iff any descendant occupied."""
        lv = self._levels
        if lv is None:
            lv = [self.grid]
            cur = self.grid
            while cur.shape[0] > 1:
                n = cur.shape[0] // 2
                cur = cur.reshape(n, 2, n, 2, n, 2).any(axis=(1, 3, 5))
                lv.append(cur)
            object.__setattr__(self, "_levels", lv)
        return lv

    @property
    def packed(self) -> frozenset:
        """Occupied ground cells as packed ints (x*m*m + y*m + z); fast ray walks."""
        p = self._packed
        if p is None:
            idx = np.flatnonzero(self.grid.reshape(-1))
            p = frozenset(int(i) for i in idx)
            object.__setattr__(self, "_packed", p)
        return p

    def is_occupied(self, cell, level: int = 0) -> bool:
        """True iff the cell at ``level`` contains any occupied ground cell."""
        n = self.region.size >> level
        x, y, z = cell[:3]
        if not (0 <= x < n and 0 <= y < n and 0 <= z < n):
            return False
        return bool(self.levels[level][x, y, z])

    def occupied_cells(self) -> list[GridCell]:
        return [tuple(int(v) for v in c) for c in np.argwhere(self.grid)]

    @property
    def num_occupied(self) -> int:
        return int(self.grid.sum())


def _cloud_cells(points: np.ndarray, region: RegionSpec):
    """In-region integer ground cells of a point cloud (may be empty)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    cells = np.floor((pts - np.asarray(region.origin)) / region.res).astype(np.int64)
    ok = np.all((cells >= 0) & (cells < region.size), axis=1)
    return cells[ok]


def _histogram(cells: np.ndarray, m: int) -> np.ndarray:
    counts = np.zeros((m, m, m), dtype=np.int32)
    if len(cells):
        np.add.at(counts, (cells[:, 0], cells[:, 1], cells[:, 2]), 1)
    return counts


def build_occupancy(points, region: RegionSpec, min_points_per_cell: int = 1) -> OccupancyOctree:
    """Occupancy from a point cloud: a cell is occupied iff it holds enough points.

    Points outside the region are ignored; an empty cloud yields an all-free
    octree with no observed extent.
    """
    cells = _cloud_cells(points, region)
    m = region.size
    grid = _histogram(cells, m) >= min_points_per_cell
    if len(cells):
        lo = tuple(int(v) for v in cells.min(axis=0))
        hi = tuple(int(v) for v in cells.max(axis=0))
    else:
        lo = hi = None
    return OccupancyOctree(region, grid, lo, hi)


def update_occupancy(occ: OccupancyOctree, points, min_points_per_cell: int = 1,
                     region: RegionSpec | None = None) -> OccupancyOctree:
    """Replace-policy update from a new cloud.

    Inside the new cloud's observed bounding box the occupancy is replaced by
    the new evidence (unsupported cells become free); outside it the prior
    occupancy is kept. The observed extent grows to the union of both clouds.
    """
    if region is not None and region != occ.region:
        raise RegionMismatchError(f"update region {region} != {occ.region}")
    cells = _cloud_cells(points, occ.region)
    if not len(cells):
        return occ
    m = occ.region.size
    new_grid = _histogram(cells, m) >= min_points_per_cell
    lo = cells.min(axis=0)
    hi = cells.max(axis=0)
    grid = occ.grid.copy()
    sl = tuple(slice(int(lo[i]), int(hi[i]) + 1) for i in range(3))
    grid[sl] = new_grid[sl]
    if occ.observed_lo is None:
        olo, ohi = tuple(int(v) for v in lo), tuple(int(v) for v in hi)
    else:
        olo = tuple(min(int(lo[i]), occ.observed_lo[i]) for i in range(3))
        ohi = tuple(max(int(hi[i]), occ.observed_hi[i]) for i in range(3))
    return OccupancyOctree(occ.region, grid, olo, ohi)


def fill_below(occ: OccupancyOctree) -> OccupancyOctree:
    """Mark the whole column below every occupied cell as occupied.

    Models the space underneath observed obstacles as solid, so it cannot be
    searched or seen through.
    """
    filled = np.flip(np.logical_or.accumulate(np.flip(occ.grid, axis=2), axis=2), axis=2)
    return OccupancyOctree(occ.region, filled, occ.observed_lo, occ.observed_hi)


def region_cells(occ: OccupancyOctree, exclude_occupied: bool = False) -> np.ndarray:
    """Feasible search region as a boolean mask over ground cells.

    Default rule: every cell inside the axis-aligned bounding box of the
    observed cloud extent. Occupied cells stay inside the region unless
    ``exclude_occupied`` is set (targets may sit at occupied surfaces).
    """
    m = occ.region.size
    mask = np.zeros((m, m, m), dtype=bool)
    if occ.observed_lo is None:
        return mask
    lo, hi = occ.observed_lo, occ.observed_hi
    mask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] = True
    if exclude_occupied:
        mask &= ~occ.grid
    return mask


def occupancy_prior(occ: OccupancyOctree, level: int = 2, weight: float = 100.0) -> dict:
    """Prior value map placing mass at occupied nodes of the given level.

    Every level-``level`` node containing at least one occupied ground cell
    maps to ``weight * (2**level)**3``; returned keys are ``(x, y, z, level)``.
    """
    if level < 0:
        raise ValueError("prior level must be nonnegative")
    value = weight * float((1 << level) ** 3)
    nodes = np.argwhere(occ.levels[level])
    return {(int(x), int(y), int(z), level): value for x, y, z in nodes}


def load_xyz(path) -> np.ndarray:
    """ASCII point cloud: one 'x y z' triple per line; '#' comments allowed."""
    pts = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) < 3:
                raise ValueError(f"malformed xyz line: {line!r}")
            pts.append([float(vals[0]), float(vals[1]), float(vals[2])])
    return np.asarray(pts, dtype=float).reshape(-1, 3)


def save_xyz(path, points) -> None:
    with open(path, "w") as f:
        for p in np.asarray(points, dtype=float).reshape(-1, 3):
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")


def load_f32(path) -> np.ndarray:
    """Binary point cloud: raw little-endian float32 xyz triples."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 3 != 0:
        raise ValueError(f"binary cloud length {raw.size} not a multiple of 3")
    return raw.astype(float).reshape(-1, 3)


def save_f32(path, points) -> None:
    np.asarray(points, dtype="<f4").reshape(-1, 3).tofile(path)


def load_point_cloud(path) -> np.ndarray:
    """Load a cloud by extension: .xyz/.txt ASCII, .bin/.f32 binary triples."""
    s = str(path)
    if s.endswith((".bin", ".f32")):
        return load_f32(path)
    return load_xyz(path)


def pack_cloud(points) -> bytes:
    """Wire form: uint32 LE count header + packed little-endian float32 triples."""
    pts = np.asarray(points, dtype="<f4").reshape(-1, 3)
    return struct.pack("<I", len(pts)) + pts.tobytes()


def unpack_cloud(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise ValueError("cloud payload shorter than count header")
    (count,) = struct.unpack_from("<I", data, 0)
    body = np.frombuffer(data, dtype="<f4", offset=4)
    if body.size != count * 3:
        raise ValueError(f"cloud payload has {body.size} floats, expected {count * 3}")
    return body.astype(float).reshape(-1, 3)
