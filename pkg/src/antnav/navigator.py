"""Anticipation-guided episodic navigation: panoramas, history, candidates, episodes."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from . import explorer, metrics, splat, world
from .policy import (HistoryEntry, PolicyDecision, PolicyError, PolicyProtocolError,
                     PolicyRequest, SubPathCandidate)

log = logging.getLogger(__name__)

__all__ = ["Episode", "EpisodeResult", "HistoryEntry", "HistoryStream", "PolicyDecision",
           "SubPathCandidate", "assemble_candidates", "compress_history", "panorama",
           "run_episode"]

N_VIEWS = 12
VIEW_STEP = math.radians(30.0)
VIEW_SIZE = 256
RUN_TOLERANCE = math.radians(15.0)
MAX_STEPS = 25
PLACEHOLDER = (128, 128, 128)


@dataclass
class Episode:
    instruction: list
    start: world.Pose
    goal: tuple
    d_th: float = metrics.D_TH
    max_steps: int = MAX_STEPS
    episode_id: str = "episode"
    reference: list = field(default_factory=list)
    shortest_dist: float = 1.0

    def __post_init__(self):
        if not self.instruction:
            raise ValueError("instruction must not be empty")
        self.goal = tuple(float(v) for v in self.goal)

    def to_dict(self) -> dict:
        return {"episode_id": self.episode_id, "instruction": list(self.instruction),
                "start": self.start.to_dict(), "goal": list(self.goal), "d_th": self.d_th,
                "max_steps": self.max_steps, "reference": [list(p) for p in self.reference],
                "shortest_dist": self.shortest_dist}

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(d["instruction"], world.Pose.from_dict(d["start"]), tuple(d["goal"]),
                   d["d_th"], d["max_steps"], d["episode_id"],
                   [tuple(p) for p in d["reference"]], d["shortest_dist"])


@dataclass
class HistoryStream:
    entries: list

    def __len__(self):
        return len(self.entries)


@dataclass
class EpisodeResult:
    episode_id: str
    instruction: list
    trajectory: list
    decisions: list
    metrics: metrics.MetricBundle
    stopped: bool
    failure: str | None = None

    def to_dict(self) -> dict:
        return {"episode_id": self.episode_id, "instruction": list(self.instruction),
                "trajectory": [{"x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw}
                               for p in self.trajectory],
                "decisions": self.decisions, "metrics": self.metrics.to_dict(),
                "stopped": self.stopped, "failure": self.failure}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        traj = [world.Pose(p["x"], p["y"], p["z"], p["yaw"]) for p in d["trajectory"]]
        return cls(d["episode_id"], d["instruction"], traj, d["decisions"],
                   metrics.MetricBundle.from_dict(d["metrics"]), d["stopped"], d.get("failure"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "EpisodeResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# observations


def panorama(scene: world.Scene, pose: world.Pose,
             cam: world.CameraIntrinsics | None = None) -> list:
    """Twelve views from camera height, rotating right in 30 degree steps."""
    cam = cam or world.CameraIntrinsics()
    eye = pose.lifted()
    return [world.render_rgb(scene, eye.rotated(-VIEW_STEP * i), cam) for i in range(N_VIEWS)]


def resize_nearest(img: world.Image, size: int = VIEW_SIZE) -> world.Image:
    h, w = img.height, img.width
    if (h, w) == (size, size):
        return img
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return world.Image(img.pixels[rows][:, cols])


def _turn(a: float, b: float) -> float:
    return abs(world.normalize_angle(b - a))


def compress_history(raw) -> HistoryStream:
    """Collapse runs of >= 2 near-straight moves into their first and last view.

    ``raw`` holds dicts with ``view``, ``kind``, ``pose`` and, for moves,
    ``heading``.
    """
    raw = list(raw)
    entries, i = [], 0
    while i < len(raw):
        j = i
        if raw[i]["kind"] == "move":
            while (j + 1 < len(raw) and raw[j + 1]["kind"] == "move"
                   and _turn(raw[j]["heading"], raw[j + 1]["heading"]) < RUN_TOLERANCE):
                j += 1
        first = raw[i]
        if j > i:
            last = raw[j]
            entries.append(HistoryEntry(resize_nearest(first["view"]), "move", j - i + 1,
                                        first["pose"], "run-start", first["heading"]))
            entries.append(HistoryEntry(resize_nearest(last["view"]), "move", 1, last["pose"],
                                        "run-end", last["heading"]))
        else:
            entries.append(HistoryEntry(resize_nearest(first["view"]), first["kind"], 1,
                                        first["pose"], "single", first.get("heading", 0.0)))
        i = j + 1
    return HistoryStream(entries)


def nearest_view(pose: world.Pose, heading: float) -> int:
    """Index of the panorama slice whose heading is closest to ``heading``."""
    return min(range(N_VIEWS), key=lambda i: (_turn(pose.yaw - VIEW_STEP * i, heading), i))


def placeholder(cfg: splat.SplatConfig) -> world.Image:
    return world.Image.filled(cfg.width, cfg.height, PLACEHOLDER)


def assemble_candidates(scene: world.Scene, pose: world.Pose, cloud, waypoints, stack,
                        views=None, anticipation: bool = True,
                        cfg: splat.SplatConfig | None = None) -> list:
    """Moves first (in waypoint order), then backtrack if the stack is
    nonempty, then stop."""
    cfg = cfg or splat.SplatConfig()
    views = views if views is not None else panorama(scene, pose)
    out = []
    for wp in waypoints:
        obs = views[nearest_view(pose, math.atan2(wp.dy, wp.dx))]
        ant = splat.anticipate_view(cloud, pose, wp, cfg) if anticipation else placeholder(cfg)
        target = world.Pose(pose.x + wp.dx, pose.y + wp.dy, wp.z, math.atan2(wp.dy, wp.dx))
        out.append(SubPathCandidate(len(out), wp, obs, ant, target))
    if stack:
        prev = stack[-1]
        if math.hypot(prev.x - pose.x, prev.y - pose.y) > 1e-9:
            obs = views[nearest_view(pose, math.atan2(prev.y - pose.y, prev.x - pose.x))]
        else:
            obs = views[0]
        out.append(SubPathCandidate(len(out), explorer.Waypoint(0, 0, prev.z, "backtrack"), obs,
                                    None, prev))
    out.append(SubPathCandidate(len(out), explorer.Waypoint(0, 0, pose.z, "stop"), views[0],
                                None, pose))
    return out


# --------------------------------------------------------------------------
# episodes


def _summary(c: SubPathCandidate, anticipation: bool) -> dict:
    d = {"index": c.index, "kind": c.action.kind, "dx": round(c.action.dx, 6),
         "dy": round(c.action.dy, 6)}
    if c.action.kind == "move":
        d["anticipated"] = "rendered" if anticipation else "gray-placeholder"
    else:
        d["anticipated"] = None
    return d


def run_episode(scene: world.Scene, cloud, episode: Episode, policy,
                anticipation: bool = True, cfg: splat.SplatConfig | None = None,
                clearance: float = world.AGENT_RADIUS) -> EpisodeResult:
    """Run one instruction-following episode with ``policy(request) -> decision``."""
    cfg = cfg or splat.SplatConfig()
    pose = episode.start
    if not world.is_traversable(scene, pose.position, clearance):
        raise ValueError(f"episode start {pose} is not traversable")
    trajectory, decisions, raw, stack = [pose], [], [], []
    stopped, failure = False, None
    for step in range(episode.max_steps):
        views = panorama(scene, pose)
        wps = explorer.waypoint_candidates(scene, pose)
        cands = assemble_candidates(scene, pose, cloud, wps, stack, views, anticipation, cfg)
        history = compress_history(raw)
        smap = splat.spatial_map(cloud, trajectory, wps)

        def ask(cands):
            req = PolicyRequest(episode.instruction, history.entries, cands, smap, step,
                                episode.episode_id, pose, views[0], episode.d_th, anticipation)
            dec = policy(req)
            if not dec.stop and not 0 <= dec.chosen < len(cands):
                raise PolicyProtocolError(f"chosen index {dec.chosen} out of range")
            return dec

        try:
            dec = ask(cands)
            chosen = cands[dec.chosen] if not dec.stop else None
            if chosen is not None and chosen.action.kind == "move" and not \
                    world.segment_traversable(scene, pose.position, chosen.target.position,
                                              clearance):
                log.warning("move %d blocked; asking again", dec.chosen)
                kept = [c for c in cands if c.index != chosen.index]
                retry = [SubPathCandidate(i, c.action, c.observed, c.anticipated, c.target)
                         for i, c in enumerate(kept)]
                dec = ask(retry)
                cands = retry
                chosen = cands[dec.chosen] if not dec.stop else None
                if chosen is not None and chosen.action.kind == "move" and not \
                        world.segment_traversable(scene, pose.position, chosen.target.position,
                                                  clearance):
                    back = next((c for c in cands if c.action.kind == "backtrack"), None)
                    chosen = back if back is not None else next(
                        c for c in cands if c.action.kind == "stop")
                    dec = PolicyDecision(chosen.index, chosen.action.kind == "stop",
                                         "forced after two blocked moves")
        except PolicyProtocolError as exc:
            failure = f"policy protocol violation: {exc}"
            log.warning("%s: %s", episode.episode_id, failure)
            break
        except PolicyError as exc:
            failure = f"policy error: {exc}"
            log.warning("%s: %s", episode.episode_id, failure)
            break
        kind = "stop" if dec.stop or chosen.action.kind == "stop" else chosen.action.kind
        decisions.append({"step": step, "candidates": [_summary(c, anticipation) for c in cands],
                          "chosen": dec.chosen, "stop": kind == "stop", "kind": kind,
                          "rationale": dec.rationale})
        if kind == "stop":
            stopped = True
            break
        entry = {"view": views[0], "kind": kind, "pose": pose}
        if kind == "move":
            entry["heading"] = chosen.target.yaw
            stack.append(pose)
            pose = chosen.target
        else:
            pose = stack.pop()
        raw.append(entry)
        trajectory.append(pose)
    bundle = metrics.evaluate(trajectory, episode.reference, episode.goal, episode.d_th,
                              episode.shortest_dist, decisions, stopped)
    return EpisodeResult(episode.episode_id, list(episode.instruction), trajectory, decisions,
                         bundle, stopped, failure)


# --------------------------------------------------------------------------
# episode generation


def _nearest_node(graph, p, z_tol: float = 0.3):
    """Node closest to ``p`` in xy among nodes within ``z_tol`` of its height."""
    best = None
    for k, n in graph.nodes.items():
        if abs(n.position[2] - p[2]) > z_tol:
            continue
        d = math.hypot(n.position[0] - p[0], n.position[1] - p[1])
        if best is None or (d, k) < best:
            best = (d, k)
    return None if best is None else best[1]


SHORTCUT_RADIUS = 0.45
FIELD_REACH = 1.0


class GeodesicField:
    """Walking distance to ``goal`` over the navigation graph.

    Exploration leaves neighbouring lattice nodes unlinked when no waypoint
    happened to connect them, so nodes closer than ``radius`` are also linked
    whenever the straight step between them is traversable. Points off the
    graph attach to nodes within ``reach`` in straight, traversable segments.
    """

    def __init__(self, scene: world.Scene, graph, goal, clearance: float = world.AGENT_RADIUS,
                 radius: float = SHORTCUT_RADIUS, reach: float = FIELD_REACH):
        self.scene, self.clearance, self.reach = scene, clearance, reach
        self.goal = np.asarray(goal, dtype=float)
        keys, index, mat = graph.csgraph()
        self.keys, self.index = keys, index
        self.positions = pos = np.array([graph.position(k) for k in keys]).reshape(-1, 3)
        self.tree = cKDTree(pos)
        coo = mat.tocoo()
        pairs = {(min(i, j), max(i, j)) for i, j in zip(coo.row, coo.col)}
        for i, j in self.tree.query_pairs(radius):
            if (i, j) not in pairs and world.segment_traversable(scene, pos[i], pos[j], clearance):
                pairs.add((i, j))
        n = len(keys)
        rows, cols, vals = [], [], []
        for i, j in sorted(pairs):
            w = max(float(np.linalg.norm(pos[i] - pos[j])), 1e-9)
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        attach = self._attach(self.goal)
        if not attach and n:
            j = int(self.tree.query(self.goal)[1])
            attach = [(j, float(np.linalg.norm(pos[j] - self.goal)))]
        for j, w in attach:
            rows += [n, j]
            cols += [j, n]
            vals += [max(w, 1e-9)] * 2
        full = csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
        dist, pred = dijkstra(full, directed=False, indices=n, return_predecessors=True)
        self.dist, self.pred = dist[:n], pred

    def _attach(self, p) -> list:
        out = []
        for j in self.tree.query_ball_point(p, self.reach):
            if world.segment_traversable(self.scene, p, self.positions[j], self.clearance):
                out.append((j, float(np.linalg.norm(self.positions[j] - p))))
        return out

    def __call__(self, p) -> float:
        p = np.asarray(p, dtype=float)
        if float(np.linalg.norm(p - self.goal)) <= self.reach and world.segment_traversable(
                self.scene, p, self.goal, self.clearance):
            return float(np.linalg.norm(p - self.goal))
        return min((w + self.dist[j] for j, w in self._attach(p)), default=math.inf)

    def node_distance(self, key) -> float:
        return float(self.dist[self.index[key]])

    def path(self, key) -> list:
        """Node positions from ``key`` to the goal, goal included."""
        i = self.index[key]
        if not np.isfinite(self.dist[i]):
            return []
        out = []
        while i != len(self.keys):
            out.append(tuple(float(v) for v in self.positions[i]))
            i = int(self.pred[i])
        return out + [tuple(float(v) for v in self.goal)]


def generate_episodes(scene: world.Scene, graph, seed: int, count: int = 1,
                      d_th: float = metrics.D_TH, max_steps: int = MAX_STEPS,
                      prefix: str = "ep") -> list:
    """Room-to-room episodes on the ground floor: start near one room's
    centre, goal at another room's centre, instruction names the goal's wall colour."""
    rooms = [r for r in scene.rooms if r.floor == 0]
    if len(rooms) < 2:
        raise ValueError("need at least two ground-floor rooms")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        a, b = rng.choice(len(rooms), size=2, replace=False)
        start_room, goal_room = rooms[a], rooms[b]
        s = _nearest_node(graph, start_room.center)
        if s is None:
            raise ValueError("graph does not reach the start room")
        goal = tuple(float(v) for v in goal_room.center)
        geo = GeodesicField(scene, graph, goal)
        shortest = geo.node_distance(s)
        if not math.isfinite(shortest):
            raise ValueError("start and goal rooms are disconnected in the graph")
        ref = geo.path(s)
        yaw = float(rng.uniform(-math.pi, math.pi))
        sp = graph.nodes[s].position
        out.append(Episode(["go", "to", "the", goal_room.wall_color, "room"],
                           world.Pose(sp[0], sp[1], sp[2], yaw), goal, d_th, max_steps,
                           f"{prefix}{i}", ref, max(shortest, 0.1)))
    return out
