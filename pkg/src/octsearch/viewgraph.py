"""Belief-driven sampling of the view position graph (the Move action set).

Candidate camera positions are drawn uniformly from free space, kept at a
minimum pairwise separation, scored by the belief mass in their coarse cell,
and the top-K survive. Edges favor short hops but never push a node past the
degree cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import ndimage

from .belief import OctreeBelief
from .geometry import RegionSpec, ancestor_at
from .occupancy import OccupancyOctree, region_cells


class NoFreeSpaceError(RuntimeError):
    """No collision-free position available for view sampling."""


@dataclass(frozen=True)
class ViewGraphParams:
    num_nodes: int = 10
    sep: float = 0.75
    inflation: float = 0.0
    degree_cap: int = 3
    score_level: int = 2
    height_band: tuple = (None, None)
    pool_factor: int = 10
    max_attempts: int = 2000
    resample_threshold: float = 0.4

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be positive")
        if self.sep < 0 or self.inflation < 0:
            raise ValueError("sep and inflation must be nonnegative")
        if self.degree_cap < 1:
            raise ValueError("degree_cap must be positive")


@dataclass(frozen=True)
class ViewNode:
    id: int
    position: tuple
    score: float


@dataclass(frozen=True)
class ViewGraph:
    nodes: tuple
    edges: tuple  # sorted (i, j) id pairs, i < j
    params: ViewGraphParams

    def node(self, node_id: int) -> ViewNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no view node with id {node_id}")

    def degree(self, node_id: int) -> int:
        return sum(1 for i, j in self.edges if node_id in (i, j))

    def to_records(self) -> dict:
        return {
            "nodes": [{"id": n.id, "position": list(n.position), "score": n.score}
                      for n in self.nodes],
            "edges": [list(e) for e in self.edges],
        }


def inflate(occ: OccupancyOctree, radius: float) -> OccupancyOctree:
    """Grow the occupied set by a Euclidean ball of ``radius`` meters.

    A cell becomes occupied iff its center lies within ``radius`` of an
    occupied cell's center.
    """
    if radius < 0:
        raise ValueError("inflation radius must be nonnegative")
    if radius == 0 or not occ.grid.any():
        return occ
    r = radius / occ.region.res
    n = int(math.floor(r + 1e-9))
    if n == 0:
        return occ
    ax = np.arange(-n, n + 1)
    dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
    ball = dx * dx + dy * dy + dz * dz <= r * r + 1e-9
    grown = ndimage.binary_dilation(occ.grid, structure=ball)
    return OccupancyOctree(occ.region, grown, occ.observed_lo, occ.observed_hi)


def _free_mask(occ: OccupancyOctree, inflated: OccupancyOctree,
               params: ViewGraphParams) -> np.ndarray:
    mask = region_cells(occ)
    if not mask.any():
        mask = np.ones_like(occ.grid)
    mask = mask & ~inflated.grid
    zmin, zmax = params.height_band
    region = occ.region
    if zmin is not None or zmax is not None:
        m = region.size
        centers_z = region.origin[2] + (np.arange(m) + 0.5) * region.res
        zok = np.ones(m, dtype=bool)
        if zmin is not None:
            zok &= centers_z >= zmin
        if zmax is not None:
            zok &= centers_z <= zmax
        mask = mask & zok[None, None, :]
    return mask


def _score(position: tuple, region: RegionSpec, beliefs: Mapping[int, OctreeBelief],
           level: int) -> float:
    cell = tuple(int(math.floor((position[i] - region.origin[i]) / region.res))
                 for i in range(3))
    total = 0.0
    for b in beliefs.values():
        a = ancestor_at(cell, level)
        total += b.prob(a[0], a[1], a[2], level)
    return total


def sample_view_graph(occ: OccupancyOctree, beliefs: Mapping[int, OctreeBelief],
                      params: ViewGraphParams, rng: np.random.Generator) -> ViewGraph:
    """Sample scored view positions and connect them with degree-capped edges.

    ``beliefs`` should carry only the objects still being searched for. Fewer
    than K separated candidates is not an error; zero free space is.
    """
    inflated = inflate(occ, params.inflation)
    free = _free_mask(occ, inflated, params)
    free_cells = np.argwhere(free)
    if len(free_cells) == 0:
        raise NoFreeSpaceError("no free cells to sample view positions from")
    region = occ.region
    pool_target = params.pool_factor * params.num_nodes
    accepted: list[tuple] = []
    attempts = 0
    while len(accepted) < pool_target and attempts < params.max_attempts:
        attempts += 1
        cell = free_cells[int(rng.integers(len(free_cells)))]
        offset = rng.random(3)
        pos = tuple(region.origin[i] + (float(cell[i]) + float(offset[i])) * region.res
                    for i in range(3))
        if all(math.dist(pos, q) >= params.sep for q in accepted):
            accepted.append(pos)
    if not accepted:
        raise NoFreeSpaceError("separation constraint rejected every candidate")
    scored = [(_score(p, region, beliefs, params.score_level), i, p)
              for i, p in enumerate(accepted)]
    scored.sort(key=lambda t: (-t[0], t[1]))
    kept = scored[:params.num_nodes]
    nodes = tuple(ViewNode(i, p, s) for i, (s, _, p) in enumerate(kept))
    edges = _build_edges(nodes, params.degree_cap)
    return ViewGraph(nodes, edges, params)


def _build_edges(nodes: tuple, cap: int) -> tuple:
    """Shortest-first greedy edges; skip pairs that would exceed the cap."""
    pairs = []
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            d = math.dist(nodes[i].position, nodes[j].position)
            pairs.append((d, nodes[i].id, nodes[j].id))
    pairs.sort()
    degree = {n.id: 0 for n in nodes}
    edges = []
    for d, i, j in pairs:
        if degree[i] < cap and degree[j] < cap:
            edges.append((i, j))
            degree[i] += 1
            degree[j] += 1
    return tuple(sorted(edges))


def covered_mass(graph: ViewGraph, beliefs: Mapping[int, OctreeBelief],
                 region: RegionSpec, level: int | None = None) -> float:
    """Belief probability covered by the union of node coarse cells.

    Averaged over the given beliefs so the value stays on the 0..1 scale of a
    single distribution regardless of object count.
    """
    if not beliefs:
        return 1.0
    if level is None:
        level = graph.params.score_level
    cells = set()
    for n in graph.nodes:
        cell = tuple(int(math.floor((n.position[i] - region.origin[i]) / region.res))
                     for i in range(3))
        cells.add(ancestor_at(cell, level))
    total = 0.0
    for b in beliefs.values():
        total += sum(b.prob(c[0], c[1], c[2], level) for c in cells)
    return total / len(beliefs)


def should_resample(graph: ViewGraph, beliefs: Mapping[int, OctreeBelief],
                    region: RegionSpec, threshold: float | None = None) -> bool:
    """True when the graph no longer covers enough belief mass."""
    if threshold is None:
        threshold = graph.params.resample_threshold
    if not beliefs:
        return False
    return covered_mass(graph, beliefs, region) < threshold
