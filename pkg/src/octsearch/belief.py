"""Octree belief over object position with lazy node materialization.

Values are unnormalized. A node's stored value Val is the total mass of its
subtree and the normalizer is the root value, so the belief that an object
occupies a node's cube is Val / root. Nodes are materialized only along paths
touched by priors or updates; everywhere else the mass is implied by the
nearest materialized ancestor, spread uniformly over the supported ground
cells beneath it. Supported cells are those seeded with default value 1 at
construction; all other cells carry value 0 forever (0 times any likelihood
stays 0), which is what makes the lazy representation exact.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .geometry import GridCell


class EmptyBeliefError(ValueError):
    """The belief has no supported cells or no remaining mass."""


def _check_cube(mask: np.ndarray) -> int:
    if mask.ndim != 3 or len(set(mask.shape)) != 1:
        raise ValueError(f"support mask must be a cube, got shape {mask.shape}")
    m = mask.shape[0]
    if m < 1 or (m & (m - 1)) != 0:
        raise ValueError(f"cube size must be a power of two, got {m}")
    return m


class OctreeBelief:
    """Belief over ground cells of an m**3 grid, m a power of two.

    ``support`` marks the cells holding default mass 1. ``priors`` maps
    ``(x, y, z, level)`` nodes to replacement values; a prior overrides the
    node's default and is spread uniformly over supported cells beneath it.
    Priors are applied coarsest level first so deeper priors override
    coarser ones inside their subtree.
    """

    def __init__(self, support: np.ndarray, priors: Mapping | None = None,
                 strict_priors: bool = True):
        support = np.ascontiguousarray(support, dtype=bool)
        m = _check_cube(support)
        total = int(support.sum())
        if total == 0:
            raise EmptyBeliefError("belief support is empty")
        support.setflags(write=False)
        self.size = m
        self.depth = m.bit_length() - 1
        self.support = support
        psum = np.zeros((m + 1,) * 3, dtype=np.int64)
        psum[1:, 1:, 1:] = support.cumsum(0).cumsum(1).cumsum(2)
        self._psum = psum
        self._root = (0, 0, 0, self.depth)
        self.nodes: dict = {self._root: float(total)}
        self.expanded: set = set()
        if priors:
            self._apply_priors(priors, strict_priors)

    # -- counting ---------------------------------------------------------

    def node_count(self, x: int, y: int, z: int, level: int) -> int:
        """Number of supported ground cells beneath the node."""
        s = 1 << level
        x0, y0, z0 = x * s, y * s, z * s
        x1, y1, z1 = x0 + s, y0 + s, z0 + s
        p = self._psum
        return int(p[x1, y1, z1] - p[x0, y1, z1] - p[x1, y0, z1] - p[x1, y1, z0]
                   + p[x0, y0, z1] + p[x0, y1, z0] + p[x1, y0, z0] - p[x0, y0, z0])

    # -- materialization --------------------------------------------------

    def _expand(self, key) -> None:
        """Materialize every supported child, splitting value by support count."""
        val = self.nodes[key]
        x, y, z, l = key
        d = self.node_count(x, y, z, l)
        if d > 0:
            cl = l - 1
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        cx, cy, cz = 2 * x + dx, 2 * y + dy, 2 * z + dz
                        dc = self.node_count(cx, cy, cz, cl)
                        if dc > 0:
                            self.nodes[(cx, cy, cz, cl)] = val * dc / d
        self.expanded.add(key)

    def _ensure_path(self, x: int, y: int, z: int, level: int) -> None:
        """Expand ancestors so the node itself is materialized (if supported)."""
        for l in range(self.depth, level, -1):
            sh = l - level
            key = (x >> sh, y >> sh, z >> sh, l)
            if key not in self.expanded:
                self._expand(key)

    def _recompute_up(self, x: int, y: int, z: int, level: int) -> None:
        for l in range(level + 1, self.depth + 1):
            sh = l - level
            key = (x >> sh, y >> sh, z >> sh, l)
            self.nodes[key] = self._child_sum(key)

    def _child_sum(self, key) -> float:
        x, y, z, l = key
        cl = l - 1
        total = 0.0
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    v = self.nodes.get((2 * x + dx, 2 * y + dy, 2 * z + dz, cl))
                    if v is not None:
                        total += v
        return total

    def _apply_priors(self, priors: Mapping, strict: bool) -> None:
        items = sorted(priors.items(), key=lambda kv: (-kv[0][3], kv[0][:3]))
        for (x, y, z, l), val in items:
            if not (0 <= l <= self.depth):
                raise ValueError(f"prior level {l} outside [0, {self.depth}]")
            n = self.size >> l
            if not (0 <= x < n and 0 <= y < n and 0 <= z < n):
                raise ValueError(f"prior node ({x}, {y}, {z}, {l}) out of bounds")
            val = float(val)
            if not (val >= 0.0 and np.isfinite(val)):
                raise ValueError(f"prior value {val} must be finite and nonnegative")
            if self.node_count(x, y, z, l) == 0:
                if strict:
                    raise ValueError(
                        f"prior node ({x}, {y}, {z}, {l}) has no supported cells")
                continue
            self._ensure_path(x, y, z, l)
            self.nodes[(x, y, z, l)] = val
            self._recompute_up(x, y, z, l)

    # -- queries ----------------------------------------------------------

    @property
    def norm(self) -> float:
        return self.nodes[self._root]

    def value_at(self, x: int, y: int, z: int, level: int = 0) -> float:
        """Unnormalized mass of the node's cube."""
        n = self.size >> level
        if not (0 <= x < n and 0 <= y < n and 0 <= z < n):
            raise ValueError(f"node ({x}, {y}, {z}) out of bounds at level {level}")
        v = self.nodes.get((x, y, z, level))
        if v is not None:
            return v
        for l in range(level + 1, self.depth + 1):
            sh = l - level
            akey = (x >> sh, y >> sh, z >> sh, l)
            av = self.nodes.get(akey)
            if av is None:
                continue
            if akey in self.expanded:
                # all supported children of an expanded node are materialized,
                # so an absent descendant has no support
                return 0.0
            da = self.node_count(*akey)
            if da == 0:
                return 0.0
            return av * self.node_count(x, y, z, level) / da
        raise AssertionError("root node must always be materialized")

    def prob(self, x: int, y: int, z: int, level: int = 0) -> float:
        """Normalized belief that the object is inside the node's cube."""
        n = self.norm
        if n <= 0.0:
            raise EmptyBeliefError("belief has no remaining mass")
        return self.value_at(x, y, z, level) / n

    def max_cell(self) -> GridCell:
        """Supported ground cell of maximum belief; lexicographic tiebreak.

        Every supported cell takes its value from its nearest materialized
        ancestor that is still a leaf, uniformly, so it suffices to rank the
        leaves by per-cell value.
        """
        best_val = -1.0
        best_leaves = []
        for key, val in self.nodes.items():
            if key in self.expanded:
                continue
            d = self.node_count(*key)
            if d == 0:
                continue
            per = val / d
            if per > best_val:
                best_val = per
                best_leaves = [key]
            elif per == best_val:
                best_leaves.append(key)
        if not best_leaves:
            raise EmptyBeliefError("belief has no supported leaves")
        best_cell = None
        for x, y, z, l in best_leaves:
            s = 1 << l
            sub = self.support[x * s:(x + 1) * s, y * s:(y + 1) * s, z * s:(z + 1) * s]
            local = np.argwhere(sub)[0]
            cell = (x * s + int(local[0]), y * s + int(local[1]), z * s + int(local[2]))
            if best_cell is None or cell < best_cell:
                best_cell = cell
        return best_cell

    # -- update -----------------------------------------------------------

    def update(self, factors: Mapping[GridCell, float]) -> None:
        """Multiply ground-cell values by per-cell likelihood factors.

        Cells not mentioned keep their value; unsupported cells stay at 0.
        Ancestor sums are recomputed bottom-up after all factors apply.
        """
        touched = []
        m = self.size
        for cell, f in factors.items():
            f = float(f)
            if not (f >= 0.0 and np.isfinite(f)):
                raise ValueError(f"likelihood factor {f} must be finite and nonnegative")
            x, y, z = int(cell[0]), int(cell[1]), int(cell[2])
            if not (0 <= x < m and 0 <= y < m and 0 <= z < m):
                raise ValueError(f"cell ({x}, {y}, {z}) out of bounds")
            if f == 1.0 or not self.support[x, y, z]:
                continue
            self._ensure_path(x, y, z, 0)
            key = (x, y, z, 0)
            self.nodes[key] *= f
            touched.append((x, y, z))
        if not touched:
            return
        cur = {(x, y, z) for x, y, z in touched}
        for l in range(1, self.depth + 1):
            cur = {(x >> 1, y >> 1, z >> 1) for x, y, z in cur}
            for x, y, z in sorted(cur):
                self.nodes[(x, y, z, l)] = self._child_sum((x, y, z, l))
        self._renorm_guard()

    def _renorm_guard(self) -> None:
        """Rescale all values when the normalizer drifts toward under/overflow."""
        n = self.norm
        if n <= 0.0:
            raise EmptyBeliefError("belief lost all mass during update")
        if 1e-100 < n < 1e100:
            return
        s = 1.0 / n
        for key in self.nodes:
            self.nodes[key] *= s

    # -- sampling ---------------------------------------------------------

    def sample(self, rng: np.random.Generator) -> GridCell:
        """Draw a ground cell with probability proportional to its value.

        Descends one level per step: through materialized children by value,
        and below the deepest materialized node uniformly by support count.
        """
        if self.norm <= 0.0:
            raise EmptyBeliefError("cannot sample from a massless belief")
        key = self._root
        while key[3] > 0:
            if key in self.expanded:
                key = self._pick_by_value(key, rng)
            else:
                return self._pick_uniform(key, rng)
        return key[:3]

    def _children(self, key):
        x, y, z, l = key
        cl = l - 1
        return [(2 * x + dx, 2 * y + dy, 2 * z + dz, cl)
                for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]

    def _pick_by_value(self, key, rng):
        kids = self._children(key)
        vals = [self.nodes.get(k, 0.0) for k in kids]
        total = sum(vals)
        if total <= 0.0:
            raise EmptyBeliefError(f"node {key} has no mass to sample")
        r = rng.random() * total
        for k, v in zip(kids, vals):
            r -= v
            if r < 0.0 and v > 0.0:
                return k
        return next(k for k, v in reversed(list(zip(kids, vals))) if v > 0.0)

    def _pick_uniform(self, key, rng):
        """Uniform supported ground cell beneath a leaf, by count descent."""
        d = self.node_count(*key)
        if d == 0:
            raise EmptyBeliefError(f"leaf {key} has no supported cells")
        idx = int(rng.integers(d))
        x, y, z, l = key
        while l > 0:
            for k in self._children((x, y, z, l)):
                dc = self.node_count(*k)
                if idx < dc:
                    x, y, z, l = k
                    break
                idx -= dc
            else:
                raise AssertionError("support counts must cover the parent count")
        return (x, y, z)

    # -- structure --------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def support_size(self) -> int:
        return self.node_count(0, 0, 0, self.depth)

    def supported_cells(self) -> Iterable[GridCell]:
        for c in np.argwhere(self.support):
            yield (int(c[0]), int(c[1]), int(c[2]))

    def to_records(self) -> list:
        """Materialized nodes in preorder, children visited in sorted order."""
        out = []
        stack = [self._root]
        while stack:
            key = stack.pop()
            val = self.nodes.get(key)
            if val is None:
                continue
            x, y, z, l = key
            out.append((x, y, z, l, val))
            if l > 0:
                stack.extend(sorted(self._children(key), reverse=True))
        return out

    def copy(self) -> "OctreeBelief":
        dup = object.__new__(OctreeBelief)
        dup.size = self.size
        dup.depth = self.depth
        dup.support = self.support
        dup._psum = self._psum
        dup._root = self._root
        dup.nodes = dict(self.nodes)
        dup.expanded = set(self.expanded)
        return dup


def belief_init(region_mask: np.ndarray, num_samples: int,
                rng: np.random.Generator, priors: Mapping | None = None) -> OctreeBelief:
    """Initialize a belief over an irregular region by rejection sampling.

    Draws ``num_samples`` cells uniformly from the bounding box of the region
    mask and seeds default mass 1 at every draw that lands inside the region.
    Unsampled region cells keep value 0, so the result approaches the uniform
    belief over the region as the sample count grows. Priors aimed at nodes
    the sampling missed entirely are dropped; priors aimed outside the region
    are rejected.
    """
    region_mask = np.asarray(region_mask, dtype=bool)
    _check_cube(region_mask)
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    idx = np.argwhere(region_mask)
    if len(idx) == 0:
        raise EmptyBeliefError("search region mask is empty")
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    xs = rng.integers(lo[0], hi[0] + 1, size=num_samples)
    ys = rng.integers(lo[1], hi[1] + 1, size=num_samples)
    zs = rng.integers(lo[2], hi[2] + 1, size=num_samples)
    inside = region_mask[xs, ys, zs]
    support = np.zeros_like(region_mask)
    support[xs[inside], ys[inside], zs[inside]] = True
    if not support.any():
        raise EmptyBeliefError("no samples landed inside the search region")
    if priors:
        m = region_mask.shape[0]
        for (x, y, z, l) in priors:
            n = m >> l
            if not (0 <= l < m.bit_length() and 0 <= x < n and 0 <= y < n and 0 <= z < n):
                raise ValueError(f"prior node ({x}, {y}, {z}, {l}) out of bounds")
            s = 1 << l
            if not region_mask[x * s:(x + 1) * s, y * s:(y + 1) * s,
                               z * s:(z + 1) * s].any():
                raise ValueError(
                    f"prior node ({x}, {y}, {z}, {l}) lies outside the search region")
    return OctreeBelief(support, priors, strict_priors=False)
