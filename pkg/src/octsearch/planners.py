"""Online planners over the search model: POUCT plus Random and Greedy.

POUCT runs Monte-Carlo tree search on the belief MDP: each simulation draws
object positions from the octree beliefs, walks the action tree with UCB1,
and evaluates leaves with the distance-closing rollout policy. Observations
inside the tree are reduced to the set of ids the deterministic planning
detector would report, which keeps branching tractable while preserving the
find/keep-looking structure of the problem.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .belief import OctreeBelief
from .model import FindAction, MosModel, MosState, MoveAction, RobotState


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "pouct"
    num_sims: int = 500
    max_depth: int = 10
    exploration_const: float = 200.0
    discount: float = 0.95

    def __post_init__(self):
        if self.kind not in ("pouct", "random", "greedy"):
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.num_sims < 1:
            raise ValueError("num_sims must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must lie in (0, 1]")


@dataclass(frozen=True)
class PlanResult:
    action: object
    planning_time: float
    visit_counts: Mapping = field(default_factory=dict)
    values: Mapping = field(default_factory=dict)
    num_sims: int = 0


class _QNode:
    __slots__ = ("n", "q", "children")

    def __init__(self):
        self.n = 0
        self.q = 0.0
        self.children = {}


class _VNode:
    __slots__ = ("n", "actions")

    def __init__(self, actions):
        self.n = 0
        self.actions = {a: _QNode() for a in actions}


def _check_graph(graph):
    if not graph.nodes:
        raise ValueError("cannot plan on an empty view graph")


class PouctPlanner:
    def __init__(self, config: PlannerConfig):
        self.config = config

    def plan(self, beliefs: Mapping[int, OctreeBelief], robot: RobotState,
             graph, model: MosModel, rng: np.random.Generator,
             last_obs=None) -> PlanResult:
        _check_graph(graph)
        t0 = time.perf_counter()
        cfg = self.config
        unfound = [oid for oid in model.target_ids
                   if oid not in robot.found and oid in beliefs]
        root_state = MosState(robot, {})
        root_actions = model.actions(root_state, graph)
        if not root_actions:
            raise ValueError("no legal actions at the root")
        root = _VNode(root_actions)
        for _ in range(cfg.num_sims):
            objects = {oid: beliefs[oid].sample(rng) for oid in unfound}
            s = MosState(robot, objects)
            self._simulate(s, root, 0, model, graph, rng)
        best = self._best_action(root)
        dt = time.perf_counter() - t0
        visits = {a: qn.n for a, qn in root.actions.items()}
        values = {a: qn.q for a, qn in root.actions.items()}
        return PlanResult(best, dt, visits, values, cfg.num_sims)

    def _best_action(self, root: _VNode):
        items = sorted(root.actions.items(),
                       key=lambda kv: (-kv[1].n, -kv[1].q, kv[0].sort_key))
        return items[0][0]

    def _simulate(self, s: MosState, vnode: _VNode, depth: int,
                  model: MosModel, graph, rng) -> float:
        cfg = self.config
        if depth >= cfg.max_depth or self._terminal(s):
            return 0.0
        a, qnode = self._ucb_pick(vnode, cfg.exploration_const)
        s2 = model.transition(s, a)
        r = model.reward(s, a, s2)
        obs_key = model.detected_objects(s2)
        child = qnode.children.get(obs_key)
        if child is None:
            qnode.children[obs_key] = _VNode(model.actions(s2, graph))
            future = self._rollout(s2, depth + 1, model, graph, rng)
        else:
            future = self._simulate(s2, child, depth + 1, model, graph, rng)
        q = r + cfg.discount * future
        vnode.n += 1
        qnode.n += 1
        qnode.q += (q - qnode.q) / qnode.n
        return q

    @staticmethod
    def _terminal(s: MosState) -> bool:
        return all(oid in s.robot.found for oid in s.objects)

    @staticmethod
    def _ucb_pick(vnode: _VNode, c: float):
        log_n = math.log(vnode.n) if vnode.n > 0 else 0.0
        best = None
        best_score = None
        for a, qn in sorted(vnode.actions.items(), key=lambda kv: kv[0].sort_key):
            if qn.n == 0:
                return a, qn
            score = qn.q + c * math.sqrt(log_n / qn.n)
            if best_score is None or score > best_score:
                best, best_score = (a, qn), score
        return best

    def _rollout(self, s: MosState, depth: int, model: MosModel,
                 graph, rng) -> float:
        cfg = self.config
        total = 0.0
        disc = 1.0
        while depth < cfg.max_depth and not self._terminal(s):
            a = model.rollout_policy(s, graph, rng)
            s2 = model.transition(s, a)
            total += disc * model.reward(s, a, s2)
            disc *= cfg.discount
            s = s2
            depth += 1
        return total


def _detected_unfound(last_obs, robot: RobotState) -> frozenset:
    """Ids of unfound targets detected in the most recent env observation."""
    if last_obs is None:
        return frozenset()
    return last_obs.detected_ids() - robot.found


class RandomPlanner:
    def __init__(self, config: PlannerConfig):
        self.config = config

    def plan(self, beliefs, robot: RobotState, graph, model: MosModel,
             rng: np.random.Generator, last_obs=None) -> PlanResult:
        _check_graph(graph)
        t0 = time.perf_counter()
        if _detected_unfound(last_obs, robot):
            action = FindAction()
        else:
            node = graph.nodes[int(rng.integers(len(graph.nodes)))]
            action = MoveAction(node.id, tuple(node.position))
        return PlanResult(action, time.perf_counter() - t0)


class GreedyPlanner:
    """Next-best-view: move to the node nearest any target's belief argmax."""

    def __init__(self, config: PlannerConfig):
        self.config = config

    def plan(self, beliefs: Mapping[int, OctreeBelief], robot: RobotState,
             graph, model: MosModel, rng: np.random.Generator,
             last_obs=None) -> PlanResult:
        _check_graph(graph)
        t0 = time.perf_counter()
        if _detected_unfound(last_obs, robot):
            return PlanResult(FindAction(), time.perf_counter() - t0)
        targets = [model.cell_center(beliefs[oid].max_cell())
                   for oid in model.target_ids
                   if oid not in robot.found and oid in beliefs]
        if not targets:
            return PlanResult(FindAction(), time.perf_counter() - t0)
        best = min(graph.nodes,
                   key=lambda n: (min(math.dist(n.position, t) for t in targets),
                                  n.id))
        action = MoveAction(best.id, tuple(best.position))
        return PlanResult(action, time.perf_counter() - t0)


def make_planner(config: PlannerConfig):
    if config.kind == "pouct":
        return PouctPlanner(config)
    if config.kind == "random":
        return RandomPlanner(config)
    return GreedyPlanner(config)
