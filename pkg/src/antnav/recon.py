"""Simulated regional reconstruction, metric scale recovery and global merging."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from . import splat, world

log = logging.getLogger(__name__)

FRAMES = ("local", "metric", "global")
PIXEL_STRIDE = 2
SCALE_RANGE = (0.5, 2.0)
MATCH_RADIUS = 0.2
MIN_RENDERED_DEPTH = 0.05
MIN_VALID_PIXELS = 100
DEDUP_VOXEL = 0.05
SSIM_WINDOW = 7
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


class FrameError(ValueError):
    """A cloud was used in the wrong coordinate frame."""


class InsufficientOverlapError(ValueError):
    pass


class ReconstructionError(RuntimeError):
    def __init__(self, region: int, cause: Exception):
        super().__init__(f"region {region}: {cause}")
        self.region = region
        self.cause = cause


@dataclass
class RegionCloud:
    points: np.ndarray
    colors: np.ndarray
    frame: str = "global"
    origin: world.Pose | None = None
    injected_scale: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise ValueError("points and colors differ in length")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "RegionCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.uint8))

    def to_ply(self) -> str:
        lines = ["ply", "format ascii 1.0", f"element vertex {len(self)}",
                 "property float x", "property float y", "property float z",
                 "property uchar red", "property uchar green", "property uchar blue",
                 "end_header"]
        lines += [f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}"
                  for (x, y, z), (r, g, b) in zip(self.points.tolist(), self.colors.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ply(cls, text: str, frame: str = "global") -> "RegionCloud":
        lines = text.splitlines()
        if not lines or lines[0].strip() != "ply":
            raise ValueError("not a PLY file")
        n, i = None, 1
        while lines[i].strip() != "end_header":
            parts = lines[i].split()
            if parts[:2] == ["format", "binary_little_endian"] or parts[:2] == ["format", "binary_big_endian"]:
                raise ValueError("only ASCII PLY is supported")
            if parts[:2] == ["element", "vertex"]:
                n = int(parts[2])
            i += 1
        if n is None:
            raise ValueError("PLY header has no vertex element")
        body = lines[i + 1:i + 1 + n]
        data = np.array([row.split()[:6] for row in body], dtype=float).reshape(-1, 6)
        return cls(data[:, :3], data[:, 3:6].astype(np.uint8), frame)

    def save_ply(self, path) -> None:
        Path(path).write_text(self.to_ply())

    @classmethod
    def load_ply(cls, path) -> "RegionCloud":
        return cls.from_ply(Path(path).read_text())


@dataclass
class ScaleEstimate:
    delta: float
    valid_pixel_count: int
    matched_frame_index: int = -1
    ssim_score: float = float("nan")


@dataclass(frozen=True)
class ReconNoise:
    scale_seed: int = 0
    pos_sigma: float = 0.0
    dropout: float = 0.0
    depth_sigma: float = 0.0
    depth_seed: int = 0
    scale_range: tuple = SCALE_RANGE
    forced_scale: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 0.6:
            raise ValueError("dropout must lie in [0, 0.6]")
        if not 0.0 <= self.pos_sigma <= 0.05:
            raise ValueError("pos_sigma must lie in [0, 0.05]")
        if not 0.0 <= self.depth_sigma <= 0.2:
            raise ValueError("depth_sigma must lie in [0, 0.2]")


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def backproject(depth: world.DepthMap, pose: world.Pose, cam: world.CameraIntrinsics,
                stride: int = PIXEL_STRIDE) -> tuple[np.ndarray, np.ndarray]:
    """World points for the valid pixels of a sub-sampled depth map; also
    returns the (row, col) pixel indices used."""
    rows = np.arange(0, cam.height, stride)
    cols = np.arange(0, cam.width, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    d = depth.depth[rr, cc]
    ok = depth.valid[rr, cc]
    rr, cc, d = rr[ok], cc[ok], d[ok]
    fwd, right, up = world.camera_basis(pose)
    x = (cc + 0.5 - cam.width / 2.0) / cam.focal
    y = (rr + 0.5 - cam.height / 2.0) / cam.focal
    rays = fwd[None] + x[:, None] * right[None] - y[:, None] * up[None]
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    pts = pose.position[None] + d[:, None] * rays
    return pts, np.stack([rr, cc], axis=1)


def simulate_regional_reconstruction(scene: world.Scene, log_, noise: ReconNoise | None = None,
                                     cam: world.CameraIntrinsics | None = None,
                                     stride: int = PIXEL_STRIDE) -> RegionCloud:
    """Stand-in for monocular SLAM: ground-truth back-projection expressed in
    the first camera's frame, then scaled by an unknown factor, jittered and
    thinned."""
    noise = noise or ReconNoise()
    cam = cam or world.CameraIntrinsics()
    if not log_.frames:
        raise ValueError("empty capture log")
    pts, cols = [], []
    for f in log_.frames:
        camera = f.pose.lifted()
        img, depth = world.render(scene, camera, cam)
        p, rc = backproject(depth, camera, cam, stride)
        pts.append(p)
        cols.append(img.pixels[rc[:, 0], rc[:, 1]])
    pts = np.concatenate(pts)
    cols = np.concatenate(cols)
    origin = log_.origin
    cam0 = origin.lifted().position
    local = (pts - cam0) @ rot_z(-origin.yaw).T
    rng = np.random.default_rng(noise.scale_seed)
    s = noise.forced_scale if noise.forced_scale is not None else float(rng.uniform(*noise.scale_range))
    local = local * s
    if noise.pos_sigma > 0:
        local = local + rng.normal(0.0, noise.pos_sigma * s, size=local.shape)
    if noise.dropout > 0:
        keep = rng.random(len(local)) >= noise.dropout
        local, cols = local[keep], cols[keep]
    return RegionCloud(local, cols, "local", origin, s)


# --------------------------------------------------------------------------
# frame matching and scale


def ssim(a: world.Image, b: world.Image) -> float:
    """Mean SSIM over channels and 7x7 uniform windows (valid positions only)."""
    x = a.pixels.astype(float)
    y = b.pixels.astype(float)
    if x.shape != y.shape:
        raise ValueError(f"image sizes differ: {x.shape} vs {y.shape}")
    w = SSIM_WINDOW
    if x.shape[0] < w or x.shape[1] < w:
        raise ValueError("images smaller than the SSIM window")
    h = w // 2
    crop = (slice(h, x.shape[0] - h), slice(h, x.shape[1] - h))
    scores = []
    for ch in range(3):
        xs, ys = x[..., ch], y[..., ch]
        mx = uniform_filter(xs, w)[crop]
        my = uniform_filter(ys, w)[crop]
        # population statistics over each window
        vx = uniform_filter(xs * xs, w)[crop] - mx * mx
        vy = uniform_filter(ys * ys, w)[crop] - my * my
        cxy = uniform_filter(xs * ys, w)[crop] - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        scores.append(num / den)
    return float(np.mean(np.mean(scores, axis=0)))


def best_frame_match(rendered: world.Image, log_, radius: float = MATCH_RADIUS) -> tuple[int, float]:
    """Index and score of the most similar frame taken near the tour start."""
    if not log_.frames:
        raise ValueError("empty capture log")
    start = log_.origin.position
    near = [i for i, f in enumerate(log_.frames)
            if np.linalg.norm(f.pose.position - start) <= radius]
    if not near:
        log.warning("no frame within %.2f m of the tour start; matching all frames", radius)
        near = list(range(len(log_.frames)))
    best, score = -1, -math.inf
    for i in near:
        s = ssim(rendered, log_.frames[i].image)
        if s > score:
            best, score = i, s
    return best, score


def estimate_scale(metric_depth: world.DepthMap, rendered_depth: world.DepthMap,
                   reducer: str = "mean") -> ScaleEstimate:
    """Average ratio of metric to rendered depth over pixels valid in both."""
    a, b = metric_depth.depth, rendered_depth.depth
    if a.shape != b.shape:
        raise ValueError(f"depth sizes differ: {a.shape} vs {b.shape}")
    omega = metric_depth.valid & rendered_depth.valid & (b > MIN_RENDERED_DEPTH)
    n = int(omega.sum())
    if n < MIN_VALID_PIXELS:
        raise InsufficientOverlapError(f"only {n} valid pixels (need {MIN_VALID_PIXELS})")
    ratios = a[omega] / b[omega]
    if reducer == "mean":
        delta = float(ratios.mean())
    elif reducer == "median":
        delta = float(np.median(ratios))
    else:
        raise ValueError(f"unknown reducer {reducer!r}")
    return ScaleEstimate(delta, n)


def apply_scale(cloud: RegionCloud, delta: float) -> RegionCloud:
    if cloud.frame != "local":
        raise FrameError(f"apply_scale needs a local cloud, got {cloud.frame!r}")
    if delta <= 0:
        raise ValueError("scale must be positive")
    return replace(cloud, points=cloud.points * delta, frame="metric")


def integrate_global(cloud: RegionCloud, p0, theta0: float, theta_t: float) -> RegionCloud:
    """p -> R_z(theta0 + theta_t) p + p0."""
    if cloud.frame != "metric":
        raise FrameError(f"integrate_global needs a metric cloud, got {cloud.frame!r}")
    p0 = np.asarray(p0, dtype=float)
    pts = cloud.points @ rot_z(theta0 + theta_t).T + p0
    return replace(cloud, points=pts, frame="global")


def deintegrate_global(cloud: RegionCloud, p0, theta0: float, theta_t: float) -> RegionCloud:
    """Analytic inverse of :func:`integrate_global`."""
    if cloud.frame != "global":
        raise FrameError(f"deintegrate_global needs a global cloud, got {cloud.frame!r}")
    p0 = np.asarray(p0, dtype=float)
    pts = (cloud.points - p0) @ rot_z(theta0 + theta_t)
    return replace(cloud, points=pts, frame="metric")


def merge(clouds, voxel: float = DEDUP_VOXEL) -> RegionCloud:
    """Concatenate global clouds, keeping the first point in each voxel."""
    clouds = list(clouds)
    for c in clouds:
        if c.frame != "global":
            raise FrameError(f"merge needs global clouds, got {c.frame!r}")
    if not clouds:
        return RegionCloud.empty()
    pts = np.concatenate([c.points for c in clouds])
    cols = np.concatenate([c.colors for c in clouds])
    if len(pts) == 0:
        return RegionCloud.empty()
    keys = np.floor(pts / voxel).astype(np.int64)
    keys -= keys.min(axis=0)
    span = keys.max(axis=0) + 1
    flat = (keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
    _, first = np.unique(flat, return_index=True)
    first.sort()
    return RegionCloud(pts[first], cols[first], "global")


# --------------------------------------------------------------------------
# pipeline


@dataclass
class RegionResult:
    region: int
    cloud: RegionCloud
    scale: ScaleEstimate
    injected_scale: float


def reconstruct_region(scene: world.Scene, log_, start_heading: float, noise: ReconNoise,
                       cam: world.CameraIntrinsics | None = None,
                       reducer: str = "mean", region: int = 0) -> RegionResult:
    cam = cam or world.CameraIntrinsics()
    local = simulate_regional_reconstruction(scene, log_, noise, cam)
    cfg = splat.SplatConfig(width=cam.width, height=cam.height, hfov=cam.hfov)
    rendered, rdepth = splat.render_points(local.points, local.colors, world.Pose(0, 0, 0), cfg)
    idx, score = best_frame_match(rendered, log_)
    frame = log_.frames[idx]
    metric = world.metric_depth_oracle(scene, frame.pose.lifted(), cam, noise.depth_sigma,
                                       noise.depth_seed)
    est = estimate_scale(metric, rdepth, reducer)
    est.matched_frame_index, est.ssim_score = idx, score
    cloud = apply_scale(local, est.delta)
    p0 = log_.origin.lifted().position
    cloud = integrate_global(cloud, p0, start_heading, frame.rel_heading)
    return RegionResult(region, cloud, est, local.injected_scale)


def reconstruct_scene(scene: world.Scene, tours, logs, noise: ReconNoise | None = None,
                      cam: world.CameraIntrinsics | None = None, reducer: str = "mean"):
    """Per-region reconstruction and alignment, then a merged global cloud.

    Region ``i`` draws its hidden scale from ``noise.scale_seed + i``.
    Returns (merged cloud, per-region results).
    """
    noise = noise or ReconNoise()
    results = []
    for i, (tour, log_) in enumerate(zip(tours, logs)):
        rnoise = replace(noise, scale_seed=noise.scale_seed + i, depth_seed=noise.depth_seed + i)
        try:
            results.append(reconstruct_region(scene, log_, tour.start_heading, rnoise, cam,
                                              reducer, tour.region))
        except (ValueError, world.EmbeddedPoseError) as exc:
            raise ReconstructionError(tour.region, exc) from exc
    return merge(r.cloud for r in results), results
