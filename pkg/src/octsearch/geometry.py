"""Discretized 3D region geometry: grid cells, camera poses, frustum tests, ray traversal.

Conventions used throughout the package:

- A ground cell is an ``(x, y, z)`` tuple of ints at resolution level 0.
- A leveled cell is ``(x, y, z, l)``; a level-l cell covers ``(2**l)**3`` ground
  cells, and its children at level l-1 have coordinates ``parent*2 + {0,1}``.
- Metric position of a point maps to the cell containing it under half-open
  intervals ``[low, high)`` per axis, so every point belongs to exactly one cell.
- The camera looks along +x in its own frame, +z up, +y left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GridCell = tuple[int, int, int]
GridCellL = tuple[int, int, int, int]


class BoundsError(ValueError):
    """A cell or point lies outside the search region."""


@dataclass(frozen=True)
class RegionSpec:
    """Cubic search region: origin corner, ground resolution, octree dimension.

    ``size`` is the number of ground cells per axis and must be a power of two;
    the covered metric extent is ``size * res`` per axis.
    """

    origin: tuple[float, float, float]
    res: float
    size: int

    def __post_init__(self):
        if self.size < 2 or self.size & (self.size - 1) != 0:
            raise ValueError(f"octree size must be a power of two >= 2, got {self.size}")
        if self.res <= 0:
            raise ValueError(f"resolution must be positive, got {self.res}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def depth(self) -> int:
        """Number of levels above ground; the root sits at this level."""
        return self.size.bit_length() - 1

    @property
    def extent(self) -> float:
        return self.size * self.res

    def in_bounds(self, cell, level: int = 0) -> bool:
        n = self.size >> level
        return all(0 <= c < n for c in cell[:3])

    def contains_point(self, point) -> bool:
        o = self.origin
        e = self.extent
        return all(o[i] <= point[i] < o[i] + e for i in range(3))


def cell_to_metric(cell, region: RegionSpec, level: int = 0) -> np.ndarray:
    """Metric center of a cell at the given resolution level."""
    if not region.in_bounds(cell, level):
        raise BoundsError(f"cell {cell} outside region at level {level}")
    side = (1 << level) * region.res
    o = region.origin
    return np.array([o[i] + (cell[i] + 0.5) * side for i in range(3)])


def metric_to_cell(point, region: RegionSpec, level: int = 0) -> GridCell:
    """Cell containing a metric point (half-open intervals per axis)."""
    if not region.contains_point(point):
        raise BoundsError(f"point {tuple(point)} outside region")
    inv = 1.0 / ((1 << level) * region.res)
    o = region.origin
    return (
        int((point[0] - o[0]) * inv),
        int((point[1] - o[1]) * inv),
        int((point[2] - o[2]) * inv),
    )


def ancestor_at(cell: GridCell, level: int) -> GridCell:
    """Ancestor cell coordinates of a ground cell at the given level."""
    return (cell[0] >> level, cell[1] >> level, cell[2] >> level)


def children_of(cell, level: int):
    """The 8 child cells (at level-1 coordinates) of a cell at ``level``."""
    x, y, z = cell[0] << 1, cell[1] << 1, cell[2] << 1
    return [
        (x + dx, y + dy, z + dz)
        for dx in (0, 1)
        for dy in (0, 1)
        for dz in (0, 1)
    ]


def _yaw_pitch_matrix(yaw: float, pitch: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    return np.array([
        [cy * cp, -sy, cy * sp],
        [sy * cp, cy, sy * sp],
        [-sp, 0.0, cp],
    ])


def _yaw_pitch_quat(yaw: float, pitch: float) -> tuple[float, float, float, float]:
    c1, s1 = math.cos(yaw / 2), math.sin(yaw / 2)
    c2, s2 = math.cos(pitch / 2), math.sin(pitch / 2)
    # Rz(yaw) * Ry(pitch), quaternion as (x, y, z, w)
    return (-s1 * s2, c1 * s2, s1 * c2, c1 * c2)


def _quat_matrix(q) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class CameraPose:
    """6D camera pose: metric position and unit quaternion (x, y, z, w)."""

    position: tuple[float, float, float]
    quat: tuple[float, float, float, float]
    _matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        q = np.asarray(self.quat, dtype=float)
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-9:
            if n == 0:
                raise ValueError("zero quaternion")
            q = q / n
        object.__setattr__(self, "quat", tuple(q))

    @property
    def matrix(self) -> np.ndarray:
        """Rotation matrix mapping camera-frame vectors to the region frame."""
        m = self._matrix
        if m is None:
            m = _quat_matrix(self.quat)
            object.__setattr__(self, "_matrix", m)
        return m

    @property
    def forward(self) -> np.ndarray:
        return self.matrix[:, 0]

    def key(self):
        """Hashable quantized key for caching pose-dependent computations."""
        p = self.position
        q = self.quat
        return (
            round(p[0], 6), round(p[1], 6), round(p[2], 6),
            round(q[0], 6), round(q[1], 6), round(q[2], 6), round(q[3], 6),
        )


def look_at(position, target) -> CameraPose:
    """Pose at ``position`` with the optical axis through ``target``, roll 0."""
    dx = target[0] - position[0]
    dy = target[1] - position[1]
    dz = target[2] - position[2]
    yaw = math.atan2(dy, dx)
    horiz = math.hypot(dx, dy)
    pitch = -math.atan2(dz, horiz) if (horiz or dz) else 0.0
    pose = CameraPose(tuple(position), _yaw_pitch_quat(yaw, pitch))
    object.__setattr__(pose, "_matrix", _yaw_pitch_matrix(yaw, pitch))
    return pose


@dataclass(frozen=True)
class FrustumParams:
    """Truncated-pyramid camera model. ``fov_deg`` is the vertical FOV angle."""

    fov_deg: float = 60.0
    near: float = 0.2
    far: float = 2.0
    aspect: float = 1.0

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got {self.near}, {self.far}")
        if not (0 < self.fov_deg < 180):
            raise ValueError(f"fov must be in (0, 180) degrees, got {self.fov_deg}")
        if self.aspect <= 0:
            raise ValueError(f"aspect must be positive, got {self.aspect}")

    @property
    def tan_half(self) -> float:
        return math.tan(math.radians(self.fov_deg) / 2)


def in_frustum(params: FrustumParams, pose: CameraPose, point) -> bool:
    """True iff the metric point lies inside the camera frustum."""
    m = pose.matrix
    px, py, pz = pose.position
    dx = point[0] - px
    dy = point[1] - py
    dz = point[2] - pz
    # camera-frame coordinates: columns of m are the camera axes
    cx = m[0, 0] * dx + m[1, 0] * dy + m[2, 0] * dz
    if cx < params.near or cx > params.far:
        return False
    lim_v = cx * params.tan_half
    cz = m[0, 2] * dx + m[1, 2] * dy + m[2, 2] * dz
    if cz < -lim_v or cz > lim_v:
        return False
    lim_h = lim_v * params.aspect
    cy = m[0, 1] * dx + m[1, 1] * dy + m[2, 1] * dz
    return -lim_h <= cy <= lim_h


def frustum_mask(params: FrustumParams, pose: CameraPose, points: np.ndarray) -> np.ndarray:
    """Vectorized frustum membership for an (N, 3) array of metric points."""
    d = points - np.asarray(pose.position)
    cam = d @ pose.matrix  # (N, 3) in camera frame
    cx = cam[:, 0]
    lim_v = cx * params.tan_half
    lim_h = lim_v * params.aspect
    return (
        (cx >= params.near)
        & (cx <= params.far)
        & (np.abs(cam[:, 2]) <= lim_v)
        & (np.abs(cam[:, 1]) <= lim_h)
    )


def traverse_grid(region: RegionSpec, p0, p1):
    """Ground cells intersected by the segment p0 -> p1, in traversal order.

    Incremental integer grid traversal; on exact boundary ties the axis with
    the smallest parametric boundary advances first, x before y before z.
    """
    inv = 1.0 / region.res
    o = region.origin
    ax = (p0[0] - o[0]) * inv
    ay = (p0[1] - o[1]) * inv
    az = (p0[2] - o[2]) * inv
    bx = (p1[0] - o[0]) * inv
    by = (p1[1] - o[1]) * inv
    bz = (p1[2] - o[2]) * inv
    x, y, z = int(math.floor(ax)), int(math.floor(ay)), int(math.floor(az))
    dx, dy, dz = bx - ax, by - ay, bz - az

    cells = [(x, y, z)]
    inf = math.inf
    if dx > 0:
        sx, tdx = 1, 1.0 / dx
        tmx = (math.floor(ax) + 1 - ax) * tdx
    elif dx < 0:
        sx, tdx = -1, -1.0 / dx
        tmx = (ax - math.floor(ax)) * tdx
    else:
        sx, tdx, tmx = 0, inf, inf
    if dy > 0:
        sy, tdy = 1, 1.0 / dy
        tmy = (math.floor(ay) + 1 - ay) * tdy
    elif dy < 0:
        sy, tdy = -1, -1.0 / dy
        tmy = (ay - math.floor(ay)) * tdy
    else:
        sy, tdy, tmy = 0, inf, inf
    if dz > 0:
        sz, tdz = 1, 1.0 / dz
        tmz = (math.floor(az) + 1 - az) * tdz
    elif dz < 0:
        sz, tdz = -1, -1.0 / dz
        tmz = (az - math.floor(az)) * tdz
    else:
        sz, tdz, tmz = 0, inf, inf

    n = region.size
    limit = 3 * n + 3
    while limit > 0:
        limit -= 1
        if tmx <= tmy and tmx <= tmz:
            if tmx > 1.0:
                break
            x += sx
            tmx += tdx
        elif tmy <= tmz:
            if tmy > 1.0:
                break
            y += sy
            tmy += tdy
        else:
            if tmz > 1.0:
                break
            z += sz
            tmz += tdz
        if not (0 <= x < n and 0 <= y < n and 0 <= z < n):
            break
        cells.append((x, y, z))
    return cells


def cast_ray(occ, p0, p1):
    """First occupied ground cell on the segment p0 -> p1, or None.

    ``occ`` needs ``region`` and ``is_occupied(cell)``; cells are visited by
    exact grid stepping so no intersected cell is skipped.
    """
    for cell in traverse_grid(occ.region, p0, p1):
        if occ.is_occupied(cell):
            return cell
    return None
