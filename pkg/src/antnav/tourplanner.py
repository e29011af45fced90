"""Visibility-aware scan tours: hub sparsification, set cover, 2-opt and capture."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import world
from .navgraph import GridKey, NavGraph

log = logging.getLogger(__name__)

HUB_CELL = 1.0
VIS_RADIUS = 3.0
TAU = 0.9
LAMBDA_OVERLAP = 2.0
YAW_OFFSETS = (0.0, math.radians(60.0), math.radians(-60.0))
PITCH_OFFSETS = (0.0, math.radians(45.0), math.radians(-45.0))
ENROUTE_SPACING = 0.5
DISPLACE_RADIUS = 1.0
TWO_OPT_TOL = 1e-9


class CoverageInfeasibleError(ValueError):
    def __init__(self, achievable: float, tau: float):
        super().__init__(f"coverage infeasible: max achievable ratio {achievable:.4f} < tau {tau}")
        self.achievable = achievable
        self.tau = tau


class DisconnectedHubsError(ValueError):
    pass


@dataclass
class VisSet:
    hub: GridKey
    visible: frozenset


@dataclass
class ScanTour:
    region: int
    hubs: list
    start_heading: float = 0.0
    schedule: list = field(default_factory=list)
    cost: float = 0.0

    def to_dict(self) -> dict:
        return {"region": self.region, "hubs": [list(h) for h in self.hubs],
                "start_heading": self.start_heading, "cost": self.cost}

    @classmethod
    def from_dict(cls, d: dict, graph: NavGraph | None = None) -> "ScanTour":
        tour = cls(d["region"], [GridKey(*h) for h in d["hubs"]], d["start_heading"],
                   [], d["cost"])
        if graph is not None:
            tour.schedule = build_schedule(tour, graph)
        return tour

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


@dataclass
class CaptureFrame:
    image: world.Image
    rel_heading: float
    pitch: float
    pose: world.Pose


@dataclass
class CaptureLog:
    frames: list

    def __post_init__(self):
        if not self.frames:
            raise ValueError("capture log needs at least one frame")

    @property
    def origin(self) -> world.Pose:
        return self.frames[0].pose

    def save(self, directory) -> None:
        """PPM frames plus index.json with heading, pitch and pose per frame."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        for i, f in enumerate(self.frames):
            name = f"frame_{i:04d}.ppm"
            f.image.save(directory / name)
            index.append({"file": name, "rel_heading": f.rel_heading, "pitch": f.pitch,
                          "pose": f.pose.to_dict()})
        (directory / "index.json").write_text(json.dumps(index, indent=1))

    @classmethod
    def load(cls, directory) -> "CaptureLog":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text())
        return cls([CaptureFrame(world.Image.load(directory / e["file"]), e["rel_heading"],
                                 e["pitch"], world.Pose.from_dict(e["pose"])) for e in index])


# --------------------------------------------------------------------------
# hubs and visibility


def downsample_hubs(graph: NavGraph, keys, cell: float = HUB_CELL) -> list:
    """One hub per occupied ``cell`` x ``cell`` x dz cell: the node nearest the
    cell centre in xy, ties to the smaller key."""
    best = {}
    for k in sorted(keys):
        x, y, _ = graph.nodes[k].position
        cx, cy = math.floor(x / cell), math.floor(y / cell)
        d = math.hypot(x - (cx + 0.5) * cell, y - (cy + 0.5) * cell)
        c = (cx, cy, k.iz)
        if c not in best or d < best[c][0]:
            best[c] = (d, k)
    return sorted(k for _, k in best.values())


def _eye(graph, keys):
    pts = np.array([graph.nodes[k].position for k in keys], dtype=float).reshape(-1, 3)
    pts[:, 2] += world.CAMERA_HEIGHT
    return pts


def visibility_sets(scene: world.Scene, graph: NavGraph, hubs, cells,
                    radius: float = VIS_RADIUS) -> dict:
    """Vis(h) for every hub, restricted to ``cells``: members within ``radius``
    whose eye-height segment from the hub is free of occupied voxels."""
    cells = sorted(cells)
    eyes = _eye(graph, cells)
    tree = cKDTree(eyes)
    hub_eyes = _eye(graph, hubs)
    out = {}
    for h, e in zip(hubs, hub_eyes):
        idx = np.array(sorted(tree.query_ball_point(e, radius + 1e-9)), dtype=int)
        visible = {h}
        if len(idx):
            clear = world.line_of_sight(scene, np.repeat(e[None], len(idx), 0), eyes[idx])
            visible.update(cells[i] for i, ok in zip(idx, clear) if ok)
        out[h] = VisSet(h, frozenset(visible))
    return out


def visibility_set(scene: world.Scene, graph: NavGraph, hub, cells=None,
                   radius: float = VIS_RADIUS) -> VisSet:
    return visibility_sets(scene, graph, [hub], graph.nodes if cells is None else cells,
                           radius)[hub]


# --------------------------------------------------------------------------
# set cover


def coverage_ratio(chosen, vis: dict, universe) -> float:
    universe = set(universe)
    if not universe:
        return 1.0
    covered = set()
    for h in chosen:
        covered |= vis[h].visible
    return len(covered & universe) / len(universe)


def greedy_set_cover(vis: dict, universe, tau: float = TAU) -> list:
    """Greedy maximum-marginal-coverage picks until the covered fraction of
    ``universe`` reaches ``tau``; returned in selection order."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    universe = set(universe)
    if not universe:
        return []
    sets = {h: set(v.visible) & universe for h, v in vis.items()}
    union = set().union(*sets.values()) if sets else set()
    need = tau * len(universe)
    if len(union) < need - 1e-9:
        raise CoverageInfeasibleError(len(union) / len(universe), tau)
    covered, chosen = set(), []
    while len(covered) < need - 1e-9:
        best, gain = None, 0
        for h in sorted(sets):
            g = len(sets[h] - covered)
            if g > gain:
                best, gain = h, g
        chosen.append(best)
        covered |= sets.pop(best)
    return chosen


# --------------------------------------------------------------------------
# tour cost and 2-opt


def iou(a: VisSet, b: VisSet) -> float:
    union = len(a.visible | b.visible)
    return 1.0 if union == 0 else len(a.visible & b.visible) / union


def edge_cost(u, v, graph: NavGraph, vis: dict, lam: float = LAMBDA_OVERLAP,
              length: float | None = None) -> float:
    """Path length plus a penalty for insufficient visual overlap."""
    if length is None:
        length = 0.0 if u == v else graph.shortest_path(u, v)[0]
    if not math.isfinite(length):
        return math.inf
    return length + lam * (1.0 - iou(vis[u], vis[v]))


def cost_matrix(hubs, graph: NavGraph, vis: dict, lam: float = LAMBDA_OVERLAP) -> np.ndarray:
    n = len(hubs)
    if n == 0:
        return np.zeros((0, 0))
    keys, index, dist, _ = graph.shortest_paths(hubs)
    cols = [index[h] for h in hubs]
    c = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                c[i, j] = edge_cost(hubs[i], hubs[j], graph, vis, lam, float(dist[i, cols[j]]))
    return c


def cycle_cost(order, c) -> float:
    n = len(order)
    if n < 2:
        return 0.0
    return float(sum(c[order[i], order[(i + 1) % n]] for i in range(n)))


def nearest_neighbor(c: np.ndarray, start: int = 0) -> list:
    n = len(c)
    order, left = [start], set(range(n)) - {start}
    while left:
        cur = order[-1]
        nxt = min(left, key=lambda j: (c[cur, j], j))
        order.append(nxt)
        left.remove(nxt)
    return order


def _two_opt_delta(order, c, i, j) -> float:
    n = len(order)
    a, b = order[i - 1], order[i]
    d, e = order[j], order[(j + 1) % n]
    return c[a, d] + c[b, e] - c[a, b] - c[d, e]


def best_two_opt_move(order, c):
    """(delta, i, j) of the most improving reversal of order[i..j], or None."""
    n = len(order)
    best = None
    for i in range(1, n - 1):
        for j in range(i + 1, n):
            delta = _two_opt_delta(order, c, i, j)
            if delta < -TWO_OPT_TOL and (best is None or delta < best[0]):
                best = (delta, i, j)
    return best


def two_opt(order, c) -> list:
    """Best-improvement 2-opt on a cycle with order[0] fixed."""
    order = list(order)
    while True:
        move = best_two_opt_move(order, c)
        if move is None:
            return order
        _, i, j = move
        order[i:j + 1] = order[i:j + 1][::-1]


def plan_tour(hubs, c: np.ndarray, graph: NavGraph | None = None, region: int = 0) -> ScanTour:
    """Nearest-neighbour cycle from ``hubs[0]`` improved by 2-opt.

    ``c`` is the pairwise cost matrix in ``hubs`` order.
    """
    hubs = list(hubs)
    if not hubs:
        raise ValueError("plan_tour needs at least one hub")
    if len(set(hubs)) != len(hubs):
        raise ValueError("hubs must be distinct")
    bad = np.argwhere(~np.isfinite(c))
    if len(bad):
        i, j = bad[0]
        raise DisconnectedHubsError(f"hubs {tuple(hubs[i])} and {tuple(hubs[j])} are disconnected")
    order = two_opt(nearest_neighbor(c, 0), c)
    tour = ScanTour(region, [hubs[i] for i in order], 0.0, [], cycle_cost(order, c))
    if len(hubs) > 1 and graph is not None:
        p0, p1 = graph.position(tour.hubs[0]), graph.position(tour.hubs[1])
        tour.start_heading = world.normalize_angle(math.atan2(p1[1] - p0[1], p1[0] - p0[0]))
    if graph is not None:
        tour.schedule = build_schedule(tour, graph)
    return tour


# --------------------------------------------------------------------------
# schedules and capture


def _route(graph: NavGraph, a, b) -> list:
    dist, keys = graph.shortest_path(a, b)
    if not math.isfinite(dist):
        raise DisconnectedHubsError(f"hubs {tuple(a)} and {tuple(b)} are disconnected")
    return [graph.position(k) for k in keys]


def _heading(p, q, default: float) -> float:
    dx, dy = q[0] - p[0], q[1] - p[1]
    if math.hypot(dx, dy) < 1e-9:
        return default
    return math.atan2(dy, dx)


def _approach_headings(tour: ScanTour, graph: NavGraph) -> tuple[list, list]:
    """Arrival heading at each hub and the polyline walked to reach it."""
    headings, routes = [tour.start_heading], [[]]
    for a, b in zip(tour.hubs, tour.hubs[1:]):
        pts = _route(graph, a, b)
        h = headings[-1]
        for p, q in zip(pts, pts[1:]):
            h = _heading(p, q, h)
        headings.append(h)
        routes.append(pts)
    return headings, routes


def _sweep(pos, heading) -> list:
    return [world.Pose(pos[0], pos[1], pos[2], heading + dy, dp)
            for dy in YAW_OFFSETS for dp in PITCH_OFFSETS]


def build_schedule(tour: ScanTour, graph: NavGraph) -> list:
    """Look-around poses per hub: yaw +-60 deg by pitch +-45 deg about the
    approach heading, (0, 0) first."""
    headings, _ = _approach_headings(tour, graph)
    out = []
    for h, heading in zip(tour.hubs, headings):
        out.extend(_sweep(graph.position(h), heading))
    return out


def refine_with_safety(tour: ScanTour, scene: world.Scene, graph: NavGraph,
                       clearance: float = world.AGENT_RADIUS, vis: dict | None = None,
                       universe=None, tau: float = TAU, costs=None) -> ScanTour:
    """Displace hubs that fail the clearance check to the nearest passing
    graph node within 1 m; drop them otherwise.

    ``costs(hubs) -> matrix`` recomputes the cycle cost when hubs change.
    """
    hubs, changed = [], False
    for h in tour.hubs:
        if world.is_traversable(scene, graph.position(h), clearance):
            hubs.append(h)
            continue
        changed = True
        p = graph.position(h)
        options = sorted((float(np.linalg.norm(graph.position(k) - p)), k) for k in graph.nodes
                         if k != h and k not in tour.hubs and k not in hubs)
        repl = next((k for d, k in options if d <= DISPLACE_RADIUS
                     and world.is_traversable(scene, graph.position(k), clearance)), None)
        if repl is None:
            log.warning("dropping hub %s: no clear node within %.1f m", tuple(h), DISPLACE_RADIUS)
        else:
            hubs.append(repl)
    if not changed:
        return tour
    if not hubs:
        raise ValueError(f"region {tour.region}: every hub failed the clearance check")
    if vis is not None and universe is not None:
        missing = [h for h in hubs if h not in vis]
        vis.update(visibility_sets(scene, graph, missing, universe))
        ratio = coverage_ratio(hubs, vis, universe)
        if ratio < tau:
            log.warning("region %d coverage fell to %.3f after refinement", tour.region, ratio)
    out = ScanTour(tour.region, hubs, tour.start_heading, [], tour.cost)
    if len(hubs) > 1:
        p0, p1 = graph.position(hubs[0]), graph.position(hubs[1])
        out.start_heading = world.normalize_angle(math.atan2(p1[1] - p0[1], p1[0] - p0[0]))
    if costs is not None:
        out.cost = cycle_cost(list(range(len(hubs))), costs(hubs))
    out.schedule = build_schedule(out, graph)
    return out


def enroute_poses(route, heading: float, spacing: float = ENROUTE_SPACING) -> tuple[list, float]:
    """Poses every ``spacing`` metres along a polyline, facing the direction of
    travel; returns them with the final heading."""
    out = []
    travelled, next_mark = 0.0, spacing
    for p, q in zip(route, route[1:]):
        seg = float(np.linalg.norm(q - p))
        heading = _heading(p, q, heading)
        while seg > 0 and next_mark <= travelled + seg + 1e-9:
            t = min(1.0, (next_mark - travelled) / seg)
            x = p + t * (q - p)
            out.append(world.Pose(x[0], x[1], x[2], heading))
            next_mark += spacing
        travelled += seg
    return out, heading


def capture_poses(tour: ScanTour, graph: NavGraph) -> list:
    """Floor-level poses in capture order: sweeps at hubs, en-route frames
    between consecutive hubs (the closing leg is not walked)."""
    headings, routes = _approach_headings(tour, graph)
    out = []
    for k, (h, heading) in enumerate(zip(tour.hubs, headings)):
        if k > 0:
            poses, _ = enroute_poses(routes[k], headings[k - 1])
            out.extend(poses)
        out.extend(_sweep(graph.position(h), heading))
    return out


def execute_tour(scene: world.Scene, tour: ScanTour, graph: NavGraph,
                 cam: world.CameraIntrinsics | None = None) -> CaptureLog:
    """Render every capture pose from camera height; the first frame is the origin."""
    cam = cam or world.CameraIntrinsics()
    poses = capture_poses(tour, graph)
    yaw0 = poses[0].yaw
    frames = [CaptureFrame(world.render_rgb(scene, p.lifted(), cam),
                           world.normalize_angle(p.yaw - yaw0), p.pitch, p) for p in poses]
    return CaptureLog(frames)


# --------------------------------------------------------------------------
# per-region orchestration


def plan_region_tours(scene: world.Scene, graph: NavGraph, tau: float = TAU,
                      lam: float = LAMBDA_OVERLAP, radius: float = VIS_RADIUS,
                      clearance: float = world.AGENT_RADIUS) -> list:
    """One refined scan tour per region, ordered by region id."""
    tours = []
    for region, keys in sorted(graph.regions().items()):
        universe = set(keys)
        candidates = downsample_hubs(graph, keys)
        vis = visibility_sets(scene, graph, candidates, universe, radius)
        chosen = greedy_set_cover(vis, universe, tau)
        c = cost_matrix(chosen, graph, vis, lam)
        tour = plan_tour(chosen, c, graph, region)

        def costs(hubs):
            extra = [h for h in hubs if h not in vis]
            vis.update(visibility_sets(scene, graph, extra, universe, radius))
            return cost_matrix(hubs, graph, vis, lam)

        tours.append(refine_with_safety(tour, scene, graph, clearance, vis, universe, tau, costs))
    return tours
