"""Multi-object search POMDP: states, actions, dynamics, observations, reward.

Observations label every ground cell in the camera frustum with an object id,
FREE, or UNKNOWN (occluded or beyond detection range). Planning uses a
deterministic detector and only needs the set of detected ids per step; the
full voxel census is generated for environment steps and belief updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .belief import OctreeBelief
from .geometry import (CameraPose, FrustumParams, GridCell, RegionSpec,
                       cell_to_metric, frustum_mask, in_frustum, look_at,
                       metric_to_cell, traverse_grid)
from .occupancy import OccupancyOctree

FREE = -1
UNKNOWN = -2


@dataclass(frozen=True)
class RobotState:
    pose: CameraPose
    found: frozenset = frozenset()


@dataclass(frozen=True)
class MosState:
    robot: RobotState
    objects: Mapping[int, GridCell]


@dataclass(frozen=True)
class MoveAction:
    """Move to a view-graph node; an implicit Look follows the move.

    ``orientation`` pins the post-move facing (used when the caller decides
    it from the belief); when None the facing is derived from the state at
    transition time, toward the nearest unfound object.
    """
    node_id: int
    position: tuple
    orientation: tuple | None = None

    @property
    def sort_key(self):
        return (0, self.node_id)


@dataclass(frozen=True)
class LookAction:
    orientation: tuple

    @property
    def sort_key(self):
        return (1, self.orientation)


@dataclass(frozen=True)
class FindAction:
    @property
    def sort_key(self):
        return (2, 0)


@dataclass(frozen=True)
class StayAction:
    """Global-level action: keep the 2D pose and search locally in 3D."""

    @property
    def sort_key(self):
        return (3, 0)


@dataclass(frozen=True)
class DetectorModel:
    """Per-object detector reliability.

    ``alpha``/``beta`` are the belief-update factors for detected vs observed
    empty cells; ``tp_rate``/``fp_rate`` drive the stochastic environment
    detector; ``max_range`` is a Euclidean cutoff (None = frustum far plane).
    """
    alpha: float = 1e5
    beta: float = 0.3
    tp_rate: float = 1.0
    fp_rate: float = 0.0
    max_range: float | None = None
    mode: str = "label-only"

    def __post_init__(self):
        if not (self.alpha > self.beta > 0.0):
            raise ValueError(f"detector needs alpha > beta > 0, got "
                             f"alpha={self.alpha}, beta={self.beta}")
        if not (0.0 <= self.tp_rate <= 1.0 and 0.0 <= self.fp_rate < 1.0):
            raise ValueError("detector rates must lie in [0, 1]")
        if self.mode not in ("box3d", "label-only"):
            raise ValueError(f"unknown detector mode {self.mode!r}")


@dataclass(frozen=True)
class RewardParams:
    hit: float = 1000.0
    miss: float = -1000.0
    step_cost: float = -10.0
    dist_cost: float = 0.0


@dataclass(frozen=True)
class VolumetricObservation:
    """Labels for every frustum ground cell, taken at ``pose``."""
    voxels: Mapping[GridCell, int]
    pose: CameraPose

    def detected_ids(self) -> frozenset:
        return frozenset(v for v in self.voxels.values() if v >= 0)


class MosModel:
    """Bundles region, occupancy, camera, and detector for model queries.

    Occupancy is a snapshot: replace the model's ``occ`` (and drop caches)
    when the map changes. Visibility lookups are cached by (camera position,
    target cell) since facing does not affect ray blocking.
    """

    def __init__(self, region: RegionSpec, occ: OccupancyOctree,
                 cam: FrustumParams, detectors: Mapping[int, DetectorModel],
                 reward_params: RewardParams = RewardParams()):
        if not detectors:
            raise ValueError("at least one target detector is required")
        self.region = region
        self.occ = occ
        self.cam = cam
        self.detectors = dict(detectors)
        self.reward_params = reward_params
        self._vis_cache: dict = {}
        self._centers = None

    @property
    def target_ids(self) -> tuple:
        return tuple(sorted(self.detectors))

    def set_occupancy(self, occ: OccupancyOctree) -> None:
        self.occ = occ
        self._vis_cache.clear()

    # -- geometry helpers --------------------------------------------------

    def cell_center(self, cell: GridCell) -> tuple:
        return cell_to_metric(cell, self.region)

    def visible(self, position: Sequence[float], cell: GridCell) -> bool:
        """True iff no occupied cell blocks the segment camera -> cell center.

        The target cell itself and the cell containing the camera never
        block. Out-of-region cells cannot block (occupancy is unknown there).
        """
        key = (round(position[0], 6), round(position[1], 6),
               round(position[2], 6), cell)
        hit = self._vis_cache.get(key)
        if hit is not None:
            return hit
        target = tuple(cell)
        center = self.cell_center(target)
        try:
            cam_cell = metric_to_cell(position, self.region)
        except Exception:
            cam_cell = None
        ok = True
        for c in traverse_grid(self.region, position, center):
            if c == target:
                break
            if c == cam_cell:
                continue
            if self.occ.is_occupied(c):
                ok = False
                break
        self._vis_cache[key] = ok
        return ok

    def in_range(self, position: Sequence[float], cell: GridCell,
                 det: DetectorModel) -> bool:
        rng_max = det.max_range if det.max_range is not None else self.cam.far
        center = self.cell_center(cell)
        d = math.dist(position, center)
        return d <= rng_max

    # -- planning-time detector --------------------------------------------

    def detected_objects(self, s: MosState) -> frozenset:
        """Unfound objects currently visible: in frustum, unoccluded, in range."""
        pose = s.robot.pose
        out = []
        for oid, cell in s.objects.items():
            if oid in s.robot.found:
                continue
            det = self.detectors.get(oid)
            if det is None:
                continue
            center = self.cell_center(cell)
            if not in_frustum(self.cam, pose, center):
                continue
            if not self.in_range(pose.position, cell, det):
                continue
            if self.visible(pose.position, cell):
                out.append(oid)
        return frozenset(out)

    # -- transition ---------------------------------------------------------

    def _facing(self, position: Sequence[float], s: MosState) -> CameraPose:
        """Pose at ``position`` looking at the nearest unfound object in s."""
        best = None
        for oid in sorted(s.objects):
            if oid in s.robot.found:
                continue
            center = self.cell_center(s.objects[oid])
            d = math.dist(position, center)
            if best is None or d < best[0]:
                best = (d, center)
        if best is None:
            return CameraPose(tuple(position), s.robot.pose.quat)
        return look_at(tuple(position), best[1])

    def transition(self, s: MosState, a) -> MosState:
        if isinstance(a, MoveAction):
            if a.orientation is not None:
                pose = CameraPose(tuple(a.position), a.orientation)
            else:
                pose = self._facing(a.position, s)
            return MosState(RobotState(pose, s.robot.found), s.objects)
        if isinstance(a, LookAction):
            pose = CameraPose(s.robot.pose.position, a.orientation)
            return MosState(RobotState(pose, s.robot.found), s.objects)
        if isinstance(a, FindAction):
            newly = self.detected_objects(s)
            if not newly:
                return s
            found = s.robot.found | newly
            return MosState(RobotState(s.robot.pose, found), s.objects)
        if isinstance(a, StayAction):
            return s
        raise ValueError(f"illegal action {a!r}")

    def reward(self, s: MosState, a, s2: MosState) -> float:
        p = self.reward_params
        if isinstance(a, FindAction):
            return p.hit if len(s2.robot.found) > len(s.robot.found) else p.miss
        cost = p.step_cost
        if isinstance(a, MoveAction) and p.dist_cost:
            cost -= p.dist_cost * math.dist(s.robot.pose.position, a.position)
        return cost

    # -- environment observation ---------------------------------------------

    def frustum_cells(self, pose: CameraPose) -> np.ndarray:
        """Ground cells whose centers fall inside the frustum, (k, 3) ints."""
        if self._centers is None:
            m = self.region.size
            idx = np.indices((m, m, m)).reshape(3, -1).T
            self._centers = (np.asarray(self.region.origin)
                             + (idx + 0.5) * self.region.res, idx)
        centers, idx = self._centers
        mask = frustum_mask(self.cam, pose, centers)
        return idx[mask]

    def simulate_observation(self, s: MosState, rng: np.random.Generator,
                             deterministic: bool = False) -> VolumetricObservation:
        """Label every frustum cell from the true state.

        Occluded or out-of-range cells are UNKNOWN. A cell holding an unfound
        object is labeled with its id with probability tp_rate (else FREE);
        other visible cells are FREE, except false positives at fp_rate.
        """
        pose = s.robot.pose
        pos = pose.position
        cells = self.frustum_cells(pose)
        obj_at = {tuple(c): oid for oid, c in s.objects.items()
                  if oid not in s.robot.found}
        default_det = next(iter(self.detectors.values()))
        ids = self.target_ids
        voxels = {}
        for c in cells:
            cell = (int(c[0]), int(c[1]), int(c[2]))
            oid = obj_at.get(cell)
            det = self.detectors.get(oid, default_det) if oid is not None else default_det
            if not self.in_range(pos, cell, det) or not self.visible(pos, cell):
                voxels[cell] = UNKNOWN
                continue
            if oid is not None:
                if deterministic or det.tp_rate >= 1.0 or rng.random() < det.tp_rate:
                    voxels[cell] = oid
                else:
                    voxels[cell] = FREE
            else:
                if (not deterministic and default_det.fp_rate > 0.0
                        and rng.random() < default_det.fp_rate):
                    voxels[cell] = ids[int(rng.integers(len(ids)))]
                else:
                    voxels[cell] = FREE
        return VolumetricObservation(voxels, pose)

    # -- belief update -------------------------------------------------------

    def observation_factors(self, obs: VolumetricObservation,
                            object_id: int) -> dict:
        """Per-cell likelihood factors for one object's belief update.

        Detected-as-this-object cells get alpha, cells observed FREE or as a
        different object get beta, UNKNOWN cells are left untouched.
        """
        det = self.detectors[object_id]
        factors = {}
        for cell, label in obs.voxels.items():
            if label == UNKNOWN:
                continue
            factors[cell] = det.alpha if label == object_id else det.beta
        return factors

    def update_beliefs(self, beliefs: Mapping[int, OctreeBelief],
                       obs: VolumetricObservation) -> None:
        for oid, belief in beliefs.items():
            belief.update(self.observation_factors(obs, oid))

    # -- action space and rollouts --------------------------------------------

    def move_actions(self, graph, s: MosState | None = None) -> list:
        """Moves to every graph node, skipping the node the robot stands on."""
        acts = []
        for node in graph.nodes:
            if s is not None and math.dist(s.robot.pose.position, node.position) < 1e-9:
                continue
            acts.append(MoveAction(node.id, tuple(node.position)))
        return acts

    def actions(self, s: MosState, graph) -> list:
        acts = self.move_actions(graph, s)
        acts.append(FindAction())
        return acts

    def rollout_policy(self, s: MosState, graph, rng: np.random.Generator):
        """Find when a target is visible, else a Move that closes distance."""
        if self.detected_objects(s):
            return FindAction()
        moves = self.move_actions(graph, s)
        if not moves:
            raise ValueError("view graph offers no moves")
        pos = s.robot.pose.position
        unfound = [self.cell_center(s.objects[oid]) for oid in sorted(s.objects)
                   if oid not in s.robot.found]
        improving = []
        for a in moves:
            for center in unfound:
                if math.dist(a.position, center) < math.dist(pos, center) - 1e-12:
                    improving.append(a)
                    break
        pool = improving if improving else moves
        return pool[int(rng.integers(len(pool)))]
