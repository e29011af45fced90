"""Point-cloud splatting for view anticipation, and the top-down spatial map."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, world

NEAR = 0.05
DIST_OFFSET = 0.1

# spatial-map colour codes
MAP_UNKNOWN = (0, 0, 0)
MAP_FLOOR = (255, 255, 255)
MAP_OBSTACLE = (128, 128, 128)
MAP_TRAJECTORY = (0, 0, 255)
MAP_CANDIDATE = (0, 200, 0)
MAP_LABEL = (0, 200, 0)
MAP_AGENT = (255, 0, 0)
OBSTACLE_BAND = (0.1, 1.6)
FLOOR_BAND = 0.1

# 3x5 digit glyphs, rows top to bottom
_DIGITS = {
    "0": ("111", "101", "101", "101", "111"), "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"), "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"), "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"), "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"), "9": ("111", "101", "111", "001", "111"),
}


def gaussian_kernel(sigma: float = 0.8) -> np.ndarray:
    r = np.arange(-1, 2)
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


@dataclass(frozen=True)
class SplatConfig:
    epsilon: float = 0.10
    sigma: float = 0.8
    width: int = 256
    height: int = 256
    hfov: float = 90.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def kernel(self) -> np.ndarray:
        return gaussian_kernel(self.sigma)

    @property
    def camera(self) -> world.CameraIntrinsics:
        return world.CameraIntrinsics(self.width, self.height, self.hfov)


def _frame(pose: world.Pose):
    fwd, right, up = world.camera_basis(pose)
    return np.array([pose.x, pose.y, pose.z]), fwd, right, up


def project_point(p, pose: world.Pose, cam: world.CameraIntrinsics):
    """(u, v, range) of ``p`` in a camera at ``pose``, or None when it is
    behind, closer than 5 cm, or off the image."""
    c, fwd, right, up = _frame(pose)
    us, vs, ds, ok = _kernels.project_points(np.asarray(p, float).reshape(1, 3), c, fwd, right, up,
                                             cam.focal, cam.width, cam.height, NEAR)
    if not ok[0]:
        return None
    return float(us[0]), float(vs[0]), float(ds[0])


def _points(points):
    return np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))


def render_points(points, colors, pose: world.Pose, cfg: SplatConfig | None = None):
    """Splat raw points seen from a camera pose; returns (Image, DepthMap)."""
    cfg = cfg or SplatConfig()
    cam = cfg.camera
    c, fwd, right, up = _frame(pose)
    cols = np.ascontiguousarray(np.asarray(colors, dtype=float).reshape(-1, 3))
    rgb, depth, _ = _kernels.splat(_points(points), cols, c, fwd, right, up, cam.focal,
                                   cam.width, cam.height, NEAR, cfg.kernel, cfg.epsilon,
                                   DIST_OFFSET, world.SENTINEL)
    return world.Image(rgb), world.DepthMap(depth)


def _require_global(cloud) -> None:
    if cloud.frame != "global":
        raise ValueError(f"splat_render needs a global-frame cloud, got {cloud.frame!r}")


def splat_render(cloud, pose: world.Pose, cfg: SplatConfig | None = None):
    """Render a global-frame cloud from a camera pose."""
    _require_global(cloud)
    return render_points(cloud.points, cloud.colors, pose, cfg)


def contributions(points, pose: world.Pose, cfg: SplatConfig | None = None):
    """Every (flat pixel index, point index, point depth) that adds colour to
    a splat render, with the per-pixel minimum depth map."""
    cfg = cfg or SplatConfig()
    cam = cfg.camera
    c, fwd, right, up = _frame(pose)
    return _kernels.splat_trace(_points(points), c, fwd, right, up, cam.focal, cam.width,
                                cam.height, NEAR, cfg.epsilon)


def anticipate_view(cloud, agent: world.Pose, wp, cfg: SplatConfig | None = None) -> world.Image:
    """Expected view from a move waypoint, facing along the move."""
    if wp.kind != "move":
        raise ValueError(f"no anticipation for {wp.kind!r} waypoints")
    _require_global(cloud)
    pose = world.Pose(agent.x + wp.dx, agent.y + wp.dy, wp.z + world.CAMERA_HEIGHT,
                      math.atan2(wp.dy, wp.dx))
    image, _ = render_points(cloud.points, cloud.colors, pose, cfg)
    return image


# --------------------------------------------------------------------------
# spatial map


def _stamp(img, r, c, color):
    if 0 <= r < img.shape[0] and 0 <= c < img.shape[1]:
        img[r, c] = color


def _draw_line(img, a, b, color):
    n = int(max(abs(b[0] - a[0]), abs(b[1] - a[1]))) + 1
    for t in np.linspace(0.0, 1.0, n + 1):
        _stamp(img, int(round(a[0] + t * (b[0] - a[0]))), int(round(a[1] + t * (b[1] - a[1]))),
               color)


def _draw_label(img, r, c, text, color):
    for ch in text:
        glyph = _DIGITS[ch]
        for dr, row in enumerate(glyph):
            for dc, bit in enumerate(row):
                if bit == "1":
                    _stamp(img, r + dr, c + dc, color)
        c += 4


def _draw_triangle(img, center, yaw, size, color):
    """Filled triangle with its apex along ``yaw`` (map rows grow southwards)."""
    cr, cc = center
    fwd = np.array([-math.sin(yaw), math.cos(yaw)])    # (row, col) direction of +yaw
    side = np.array([fwd[1], -fwd[0]])
    tip = np.array([cr, cc]) + fwd * size
    left = np.array([cr, cc]) - fwd * size * 0.6 + side * size * 0.7
    right = np.array([cr, cc]) - fwd * size * 0.6 - side * size * 0.7
    lo = np.floor(np.minimum(np.minimum(tip, left), right)).astype(int)
    hi = np.ceil(np.maximum(np.maximum(tip, left), right)).astype(int)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    for r in range(lo[0], hi[0] + 1):
        for c in range(lo[1], hi[1] + 1):
            p = (r, c)
            s = (cross(tip, left, p), cross(left, right, p), cross(right, tip, p))
            if all(v >= -1e-9 for v in s) or all(v <= 1e-9 for v in s):
                _stamp(img, r, c, color)
    _stamp(img, int(round(cr)), int(round(cc)), color)


def spatial_map(cloud, trajectory, candidates, cell: float = 0.1,
                floor: float | None = None, pad: float = 0.5) -> world.Image:
    """Top-down raster of the cloud around the agent's floor.

    Legend: black unknown, white observed floor, gray obstacle, blue
    trajectory, green numbered candidates, red agent triangle. North (+y) is up.
    """
    pts = np.asarray(cloud.points, dtype=float).reshape(-1, 3)
    if floor is None:
        floor = trajectory[-1].z if trajectory else (float(pts[:, 2].min()) if len(pts) else 0.0)
    band = pts[(pts[:, 2] >= floor - FLOOR_BAND) & (pts[:, 2] <= floor + OBSTACLE_BAND[1])]
    anchors = [band[:, :2]] if len(band) else []
    anchors += [np.array([[p.x, p.y] for p in trajectory])] if trajectory else []
    if trajectory and candidates:
        last = trajectory[-1]
        anchors.append(np.array([[last.x + w.dx, last.y + w.dy] for w in candidates]))
    if not anchors:
        return world.Image.filled(16, 16, MAP_UNKNOWN)
    xy = np.vstack(anchors)
    x0, y0 = xy.min(0) - pad
    x1, y1 = xy.max(0) + pad
    ncol = max(16, int(math.ceil((x1 - x0) / cell)))
    nrow = max(16, int(math.ceil((y1 - y0) / cell)))
    img = np.zeros((nrow, ncol, 3), dtype=np.uint8)

    def cell_of(x, y):
        return nrow - 1 - int(math.floor((y - y0) / cell)), int(math.floor((x - x0) / cell))

    if len(band):
        rows = nrow - 1 - np.floor((band[:, 1] - y0) / cell).astype(int)
        cols = np.floor((band[:, 0] - x0) / cell).astype(int)
        h = band[:, 2] - floor
        flo = h < OBSTACLE_BAND[0]
        img[rows[flo], cols[flo]] = MAP_FLOOR
        obs = (h >= OBSTACLE_BAND[0]) & (h <= OBSTACLE_BAND[1])
        img[rows[obs], cols[obs]] = MAP_OBSTACLE
    for a, b in zip(trajectory, trajectory[1:]):
        _draw_line(img, cell_of(a.x, a.y), cell_of(b.x, b.y), MAP_TRAJECTORY)
    if trajectory:
        last = trajectory[-1]
        for i, w in enumerate(candidates):
            r, c = cell_of(last.x + w.dx, last.y + w.dy)
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    _stamp(img, r + dr, c + dc, MAP_CANDIDATE)
            _draw_label(img, r - 2, c + 3, str(i), MAP_LABEL)
        _draw_triangle(img, cell_of(last.x, last.y), last.yaw, 3.0, MAP_AGENT)
    return world.Image(img)
