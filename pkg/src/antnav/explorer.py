"""Frontier-driven depth-first exploration with a geometric waypoint generator."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import world
from .navgraph import DXY, DZ, NavGraph, detect_stairs_and_partition

log = logging.getLogger(__name__)

N_HEADINGS = 12
HEADING_STEP = math.radians(30.0)
MIN_FREE = 1.0
MAX_STEP = 2.0
STANDOFF = 0.3
MAX_CANDIDATES = 6


@dataclass(frozen=True)
class Waypoint:
    dx: float = 0.0
    dy: float = 0.0
    z: float = 0.0
    kind: str = "move"

    def __post_init__(self):
        if self.kind not in ("move", "backtrack", "stop"):
            raise ValueError(f"unknown waypoint kind {self.kind!r}")
        if self.kind == "move":
            r = math.hypot(self.dx, self.dy)
            if not 0.5 - 1e-9 <= r <= 2.5 + 1e-9:
                raise ValueError(f"move waypoint range {r:.3f} m outside [0.5, 2.5]")
        elif self.dx or self.dy:
            raise ValueError("backtrack/stop waypoints carry zero offsets")

    @property
    def heading(self) -> float:
        return math.atan2(self.dy, self.dx)

    def target(self, pose: world.Pose) -> np.ndarray:
        return np.array([pose.x + self.dx, pose.y + self.dy, self.z])

    def to_dict(self) -> dict:
        return {"dx": self.dx, "dy": self.dy, "z": self.z, "kind": self.kind}


def waypoint_candidates(scene: world.Scene, pose: world.Pose,
                        max_candidates: int = MAX_CANDIDATES,
                        clearance: float = world.AGENT_RADIUS) -> list[Waypoint]:
    """Up to ``max_candidates`` reachable waypoints around a floor-level pose.

    Headings follow panorama order (rotating right in 30 degree steps).
    """
    eye = np.array([pose.x, pose.y, pose.z + world.CAMERA_HEIGHT])
    found = []
    for i in range(N_HEADINGS):
        h = pose.yaw - HEADING_STEP * i
        d = np.array([math.cos(h), math.sin(h), 0.0])
        free = world.free_distance(scene, eye, d)
        if free < MIN_FREE:
            continue
        r = min(MAX_STEP, free - STANDOFF)
        tx, ty = pose.x + r * d[0], pose.y + r * d[1]
        tz = world.floor_height(scene, tx, ty, pose.z)
        if tz is None or not world.is_traversable(scene, (tx, ty, tz), clearance):
            continue
        found.append((-free, i, Waypoint(tx - pose.x, ty - pose.y, tz)))
    found.sort(key=lambda t: (t[0], t[1]))
    return [w for _, _, w in found[:max_candidates]]


@dataclass
class ExplorationTrace:
    steps: list = field(default_factory=list)

    def record(self, pose: world.Pose, action: str, discovered) -> None:
        self.steps.append({"pose": pose.to_dict(), "action": action,
                           "discovered": [list(k) for k in discovered]})

    def to_json(self) -> str:
        return json.dumps(self.steps)


def explore(scene: world.Scene, start: world.Pose, dxy: float = DXY, dz: float = DZ,
            max_candidates: int = MAX_CANDIDATES, clearance: float = world.AGENT_RADIUS,
            trace: ExplorationTrace | None = None, max_iterations: int = 200_000) -> NavGraph:
    """Explore until no frontier remains, then label stairs and regions.

    ``start`` is a floor-level pose. Frontiers are expanded most-recent-first;
    a frontier whose connecting segment fails the traversability audit is
    dropped from the graph.
    """
    p0 = start.position
    if not world.is_traversable(scene, p0, clearance):
        raise ValueError(f"start pose {start} is not traversable")
    graph = NavGraph(dxy=dxy, dz=dz)
    current = graph.upsert(p0, visited=True)
    yaw = start.yaw
    stack = []           # frontier keys, most recent last
    parents = {}         # frontier key -> discoverers in discovery order

    def expand(key):
        pos = graph.position(key)
        pose = world.Pose(pos[0], pos[1], pos[2], yaw)
        new = []
        for wp in waypoint_candidates(scene, pose, max_candidates, clearance):
            target = wp.target(pose)
            k = graph.key_of(target)
            if k == key:
                continue
            existing = graph.nodes.get(k)
            if existing is not None and existing.visited:
                # loop closure onto an already visited cell
                if k not in graph.adj[key] and world.segment_traversable(
                        scene, pos, existing.position, clearance):
                    graph.link(key, k)
                continue
            graph.upsert(target, visited=False)
            parents.setdefault(k, []).append(key)
            stack.append(k)
            new.append(k)
        return new

    discovered = expand(current)
    if trace is not None:
        trace.record(start, "start", discovered)

    iterations = 0
    while stack:
        iterations += 1
        if iterations > max_iterations:
            raise RuntimeError("exploration exceeded iteration budget")
        k = stack.pop()
        node = graph.nodes.get(k)
        if node is None or node.visited:
            continue
        target = np.asarray(node.position)
        via = None
        for parent in reversed(parents.get(k, [])):
            if world.segment_traversable(scene, graph.position(parent), target, clearance):
                via = parent
                break
        if via is None:
            log.warning("dropping unreachable frontier %s", tuple(k))
            graph.remove(k)
            parents.pop(k, None)
            continue
        route = graph.bfs_path(current, via, allowed=lambda v: graph.nodes[v].visited)
        if route is None:  # visited subgraph is connected by construction
            log.warning("no route to frontier %s", tuple(k))
            graph.remove(k)
            continue
        prev_pos = graph.position(via)
        yaw = math.atan2(target[1] - prev_pos[1], target[0] - prev_pos[0])
        graph.mark_visited(k)
        graph.link(via, k)
        parents.pop(k, None)
        current = k
        discovered = expand(k)
        if trace is not None:
            trace.record(world.Pose(*target, yaw), "move" if len(route) == 1 else "backtrack",
                         discovered)
    detect_stairs_and_partition(graph)
    return graph
