"""Procedural indoor scenes and ground-truth sensor oracles.

Scenes are voxel grids (0.1 m) holding walled rectangular rooms laid out on a
grid per floor, connected by doors; two-floor scenes add a double-height
stairwell with a monotone ramp. Rendering is voxel DDA ray casting.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels

log = logging.getLogger(__name__)

VOXEL_SIZE = 0.1
CAMERA_HEIGHT = 1.2
AGENT_RADIUS = 0.25
AGENT_HEIGHT = 1.4
STEP_HEIGHT = 0.25
SUPPORT_DEPTH = 0.3
MAX_RANGE = 20.0
SENTINEL = -1.0
BACKGROUND = (0, 0, 0)

WALL_HEIGHT = 2.6
DOOR_WIDTH = 1.0
DOOR_HEIGHT = 2.1
STOREY = 3.0
RAMP_LENGTH = 6.0
LANDING = 1.5
STAIR_WIDTH = 2.0

PALETTE = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "white": (255, 255, 255),
    "gray": (128, 128, 128),
}
ROOM_COLORS = ("red", "green", "blue", "yellow", "cyan", "magenta")
FLOOR_COLORS = ("white", "gray")


class InfeasibleSpecError(ValueError):
    """Room placement failed for the requested scene spec."""


class EmbeddedPoseError(ValueError):
    """A camera pose lies inside an occupied voxel."""


def normalize_angle(a: float) -> float:
    """Wrap to [-pi, pi), quantized to 1e-12 rad so full turns compare equal."""
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    a = round(a, 12)
    if a >= math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))
        if not -math.pi / 2 <= self.pitch <= math.pi / 2:
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def lifted(self, dz: float = CAMERA_HEIGHT) -> "Pose":
        return Pose(self.x, self.y, self.z + dz, self.yaw, self.pitch)

    def rotated(self, dyaw: float = 0.0, dpitch: float = 0.0) -> "Pose":
        return Pose(self.x, self.y, self.z, self.yaw + dyaw, self.pitch + dpitch)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(d["x"], d["y"], d["z"], d.get("yaw", 0.0), d.get("pitch", 0.0))


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 256
    height: int = 256
    hfov: float = 90.0

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("camera must be at least 16x16 pixels")
        if not 10.0 < self.hfov < 170.0:
            raise ValueError(f"hfov {self.hfov} outside (10, 170) degrees")

    @property
    def focal(self) -> float:
        return self.width / (2.0 * math.tan(math.radians(self.hfov) / 2.0))


@dataclass
class Image:
    """RGB image; ``pixels`` is an (H, W, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must have shape (H, W, 3)")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, rgb) -> "Image":
        return cls(np.broadcast_to(np.asarray(rgb, np.uint8), (height, width, 3)).copy())

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def to_ppm(self) -> bytes:
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.pixels.tobytes()

    @classmethod
    def from_ppm(cls, data: bytes) -> "Image":
        tokens = []
        pos = 0
        while len(tokens) < 4:
            while data[pos:pos + 1].isspace():
                pos += 1
            if data[pos:pos + 1] == b"#":
                pos = data.index(b"\n", pos) + 1
                continue
            start = pos
            while not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
        if tokens[0] != b"P6" or int(tokens[3]) != 255:
            raise ValueError("only binary P6 PPM with maxval 255 is supported")
        w, h = int(tokens[1]), int(tokens[2])
        raw = np.frombuffer(data[pos + 1:pos + 1 + w * h * 3], dtype=np.uint8)
        if raw.size != w * h * 3:
            raise ValueError("truncated PPM payload")
        return cls(raw.reshape(h, w, 3).copy())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_ppm())

    @classmethod
    def load(cls, path) -> "Image":
        return cls.from_ppm(Path(path).read_bytes())


@dataclass
class DepthMap:
    """Per-pixel metres; ``SENTINEL`` (negative) marks missing values."""

    depth: np.ndarray
    sentinel: float = SENTINEL

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.depth != self.sentinel

    def __eq__(self, other):
        return isinstance(other, DepthMap) and np.array_equal(self.depth, other.depth)

    def to_raw(self) -> bytes:
        header = struct.pack("<IIf", self.width, self.height, self.sentinel)
        return header + self.depth.astype("<f4").tobytes()

    @classmethod
    def from_raw(cls, data: bytes) -> "DepthMap":
        w, h, sentinel = struct.unpack("<IIf", data[:12])
        arr = np.frombuffer(data[12:12 + 4 * w * h], dtype="<f4").reshape(h, w)
        return cls(arr.astype(np.float64), float(sentinel))

    def to_json(self) -> str:
        return json.dumps({"width": self.width, "height": self.height,
                           "sentinel": self.sentinel, "depth": self.depth.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DepthMap":
        d = json.loads(text)
        return cls(np.array(d["depth"], dtype=np.float64), d["sentinel"])


@dataclass(frozen=True)
class SceneSpec:
    rooms: int = 3
    floors: int = 1
    min_room: float = 3.0
    max_room: float = 6.0

    def validate(self) -> None:
        if not 2 <= self.rooms <= 6:
            raise ValueError("room count must be in [2, 6]")
        if self.floors not in (1, 2):
            raise ValueError("floor count must be 1 or 2")
        if self.min_room <= 0 or self.max_room < self.min_room:
            raise ValueError("room size bounds must be positive and ordered")
        if self.floors == 2 and self.rooms < 2:
            raise ValueError("two floors need at least one room each")


@dataclass
class Room:
    min_corner: tuple
    max_corner: tuple
    wall_color: str
    floor_color: str
    label: str
    floor: int = 0

    @property
    def center(self) -> np.ndarray:
        lo, hi = np.array(self.min_corner), np.array(self.max_corner)
        return np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2]])


@dataclass
class Stairs:
    start: tuple  # bottom of the ramp (x, y, z) at lane centre
    end: tuple    # top of the ramp
    width: float
    axis: str = "x"


@dataclass
class Scene:
    seed: int
    spec: SceneSpec
    voxel_size: float
    origin: np.ndarray          # world position of voxel (0, 0, 0) corner
    occupancy: np.ndarray       # (nx, ny, nz) bool
    voxel_color: np.ndarray     # (nx, ny, nz, 3) uint8
    floors: list = field(default_factory=list)
    rooms: list = field(default_factory=list)
    stairs: Stairs | None = None
    doors: list = field(default_factory=list)

    @property
    def bounds(self) -> tuple:
        lo = self.origin.copy()
        hi = lo + np.array(self.occupancy.shape) * self.voxel_size
        return lo, hi

    def to_grid(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=np.float64) - self.origin) / self.voxel_size

    def to_world(self, g) -> np.ndarray:
        return np.asarray(g, dtype=np.float64) * self.voxel_size + self.origin

    def room_at(self, p) -> Room | None:
        for room in self.rooms:
            lo, hi = room.min_corner, room.max_corner
            if lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1] and abs(p[2] - lo[2]) < 1.0:
                return room
        return None

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "spec": asdict(self.spec),
            "voxel_size": self.voxel_size,
            "origin": self.origin.tolist(),
            "shape": list(self.occupancy.shape),
            "floors": self.floors,
            "rooms": [asdict(r) for r in self.rooms],
            "stairs": asdict(self.stairs) if self.stairs else None,
            "doors": self.doors,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        d = json.loads(text)
        scene = generate_scene(d["seed"], SceneSpec(**d["spec"]))
        stored = [Room(**{**r, "min_corner": tuple(r["min_corner"]),
                          "max_corner": tuple(r["max_corner"])}) for r in d["rooms"]]
        if [asdict(r) for r in stored] != [asdict(r) for r in scene.rooms]:
            raise ValueError("scene file does not match regenerated scene")
        return scene

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_json(Path(path).read_text())


# --------------------------------------------------------------------------
# generation


class _Builder:
    def __init__(self, shape, origin_vox):
        self.occ = np.zeros(shape, dtype=bool)
        self.col = np.zeros(shape + (3,), dtype=np.uint8)
        self.origin_vox = np.array(origin_vox)

    def box(self, lo, hi, color, occupied=True):
        """Fill voxel index box [lo, hi) given in world-voxel indices."""
        lo = np.maximum(np.array(lo) - self.origin_vox, 0)
        hi = np.minimum(np.array(hi) - self.origin_vox, self.occ.shape)
        if np.any(hi <= lo):
            return
        sl = tuple(slice(a, b) for a, b in zip(lo, hi))
        self.occ[sl] = occupied
        if occupied:
            self.col[sl] = color
        else:
            self.col[sl] = 0


def _split_rooms(n: int, floors: int) -> list:
    if floors == 1:
        return [n]
    return [(n + 1) // 2, n // 2]


def _grid_shape(n: int) -> tuple:
    rows = 1 if n <= 2 else 2
    return rows, math.ceil(n / rows)


def _spanning_doors(rng, rows, cols, cells):
    """Random spanning tree over grid-adjacent occupied cells, plus maybe one
    extra door."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            if (r, c) not in cells:
                continue
            if (r, c + 1) in cells:
                edges.append(((r, c), (r, c + 1)))
            if (r + 1, c) in cells:
                edges.append(((r, c), (r + 1, c)))
    order = rng.permutation(len(edges))
    parent = {cell: cell for cell in cells}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen, spare = [], []
    for i in order:
        a, b = edges[i]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append(edges[i])
        else:
            spare.append(edges[i])
    if spare and rng.random() < 0.3:
        chosen.append(spare[0])
    return sorted(chosen)


def _layout_floor(rng, n, spec, vs):
    rows, cols = _grid_shape(n)
    lo_v = int(round(spec.min_room / vs))
    hi_v = int(round(spec.max_room / vs))
    widths = [int(rng.integers(lo_v, hi_v + 1)) for _ in range(cols)]
    depths = [int(rng.integers(lo_v, hi_v + 1)) for _ in range(rows)]
    xs = np.concatenate([[0], np.cumsum(widths)])
    ys = np.concatenate([[0], np.cumsum(depths)])
    cells = [(r, c) for r in range(rows) for c in range(cols)][:n]
    return rows, cols, xs, ys, cells


def _door_span(rng, lo, hi, width):
    """Door start voxel within interior span [lo, hi) keeping corner clearance."""
    margin = 3
    a, b = lo + margin, hi - margin - width
    if b < a:
        return None
    return int(rng.integers(a, b + 1))


def generate_scene(seed: int, spec: SceneSpec | None = None, max_retries: int = 10) -> Scene:
    """Build a connected synthetic indoor scene, deterministic in (seed, spec)."""
    spec = spec or SceneSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        scene = _try_generate(rng, seed, spec)
        if scene is not None and reachability_audit(scene):
            return scene
    raise InfeasibleSpecError(f"infeasible spec {spec} for seed {seed}")


def _try_generate(rng, seed, spec):
    vs = VOXEL_SIZE
    wall_h = int(round(WALL_HEIGHT / vs))
    door_w = int(round(DOOR_WIDTH / vs))
    door_h = int(round(DOOR_HEIGHT / vs))
    storey = int(round(STOREY / vs))
    landing = int(round(LANDING / vs))
    ramp = int(round(RAMP_LENGTH / vs))
    stair_w = int(round(STAIR_WIDTH / vs))
    stair_len = 2 * landing + ramp + 2
    counts = _split_rooms(spec.rooms, spec.floors)
    colors = [str(c) for c in rng.permutation(ROOM_COLORS)]

    layouts = [_layout_floor(rng, n, spec, vs) for n in counts]
    if spec.floors == 2 and any(int(l[3][1]) < stair_w + 2 + door_w for l in layouts):
        return None

    # block x offsets in voxels; the stairwell sits between the two blocks
    offsets = [0]
    stair_x0 = None
    if spec.floors == 2:
        stair_x0 = int(layouts[0][2][-1])
        offsets.append(stair_x0 + stair_len)

    total_x = max(off + int(l[2][-1]) for off, l in zip(offsets, layouts))
    total_y = max(int(l[3][-1]) for l in layouts)
    margin = 5
    top = (spec.floors - 1) * storey + wall_h + margin
    origin_vox = np.array([-margin, -margin, -2 - margin])
    shape = (total_x + 2 * margin + 1, total_y + 2 * margin + 1, top + 2 + margin)
    b = _Builder(shape, origin_vox)
    gray = PALETTE["gray"]

    # enclosure = (x0, x1, y0, y1, z0, height, wall colour, floor colour),
    # interior voxel ranges [x0, x1) x [y0, y1), floor top at z0
    enclosures = []
    rooms, doors = [], []
    door_cuts = []
    color_iter = iter(colors)
    for f, (off, (rows, cols, xs, ys, cells)) in enumerate(zip(offsets, layouts)):
        z0 = f * storey
        boxes = {}
        for (r, c) in cells:
            x0, x1 = off + int(xs[c]) + 1, off + int(xs[c + 1]) - 1
            y0, y1 = int(ys[r]) + 1, int(ys[r + 1]) - 1
            boxes[(r, c)] = (x0, x1, y0, y1)
            wall = next(color_iter)
            floor_c = str(FLOOR_COLORS[int(rng.integers(len(FLOOR_COLORS)))])
            enclosures.append((x0, x1, y0, y1, z0, wall_h, wall, floor_c))
            rooms.append(Room(
                min_corner=(round(x0 * vs, 6), round(y0 * vs, 6), round(z0 * vs, 6)),
                max_corner=(round(x1 * vs, 6), round(y1 * vs, 6), round((z0 + wall_h) * vs, 6)),
                wall_color=wall, floor_color=floor_c, label=wall, floor=f))
        for a, bcell in _spanning_doors(rng, rows, cols, set(cells)):
            ax0, ax1, ay0, ay1 = boxes[a]
            bx0, bx1, by0, by1 = boxes[bcell]
            if a[0] == bcell[0]:  # east-west neighbours share the wall at x = ax1
                d = _door_span(rng, max(ay0, by0), min(ay1, by1), door_w)
                if d is None:
                    return None
                door_cuts.append(((ax1, d, z0), (ax1 + 2, d + door_w, z0 + door_h)))
                door = ((ax1 + 1) * vs, (d + door_w / 2) * vs, z0 * vs)
            else:
                d = _door_span(rng, max(ax0, bx0), min(ax1, bx1), door_w)
                if d is None:
                    return None
                door_cuts.append(((d, ay1, z0), (d + door_w, ay1 + 2, z0 + door_h)))
                door = ((d + door_w / 2) * vs, (ay1 + 1) * vs, z0 * vs)
            doors.append([round(v, 6) for v in door])

    stairs = None
    ramp_cols = []
    if spec.floors == 2:
        x0, x1 = stair_x0 + 1, stair_x0 + stair_len - 1
        y0, y1 = 1, 1 + stair_w
        enclosures.append((x0, x1, y0, y1, 0, storey + wall_h, "white", "gray"))
        for a in range(x1 - x0):
            if a < landing:
                h = 0
            elif a < landing + ramp:
                h = int(round((a - landing + 0.5) * storey / ramp))
            else:
                h = storey
            ramp_cols.append((x0 + a, h))
        lo_d = _door_span(rng, y0, y1, door_w)
        hi_d = _door_span(rng, y0, y1, door_w)
        if lo_d is None or hi_d is None:
            return None
        door_cuts.append(((x0 - 2, lo_d, 0), (x0, lo_d + door_w, door_h)))
        door_cuts.append(((x1, hi_d, storey), (x1 + 2, hi_d + door_w, storey + door_h)))
        doors.append([round((x0 - 1) * vs, 6), round((lo_d + door_w / 2) * vs, 6), 0.0])
        doors.append([round((x1 + 1) * vs, 6), round((hi_d + door_w / 2) * vs, 6), STOREY])
        yc = round((y0 + y1) / 2 * vs, 6)
        stairs = Stairs(start=(round((x0 + landing) * vs, 6), yc, 0.0),
                        end=(round((x0 + landing + ramp) * vs, 6), yc, STOREY),
                        width=STAIR_WIDTH)

    # paint in phases so shared walls keep each room's colour on its own side
    for x0, x1, y0, y1, z0, h, _, _ in enclosures:
        b.box((x0 - 2, y0 - 2, z0 - 2), (x1 + 2, y1 + 2, z0), gray)
        b.box((x0 - 2, y0 - 2, z0), (x1 + 2, y1 + 2, z0 + h), gray)
    for x0, x1, y0, y1, z0, h, wall, _ in enclosures:
        b.box((x0 - 1, y0 - 1, z0), (x1 + 1, y1 + 1, z0 + h), PALETTE[wall])
    for x0, x1, y0, y1, z0, h, _, floor_c in enclosures:
        b.box((x0, y0, z0), (x1, y1, z0 + h + 1), 0, occupied=False)
        b.box((x0, y0, z0 - 1), (x1, y1, z0), PALETTE[floor_c])
    if ramp_cols:
        y0, y1 = 1, 1 + stair_w
        for x, h in ramp_cols:
            if h > 0:
                b.box((x, y0, 0), (x + 1, y1, h), gray)
    for lo, hi in door_cuts:
        b.box(lo, hi, 0, occupied=False)

    floors = [f * STOREY for f in range(spec.floors)]
    return Scene(seed=seed, spec=spec, voxel_size=vs,
                 origin=origin_vox * vs, occupancy=b.occ, voxel_color=b.col,
                 floors=floors, rooms=rooms, stairs=stairs, doors=doors)


# --------------------------------------------------------------------------
# audits


def walkable_heightfield(scene: Scene, clearance: float = AGENT_RADIUS):
    """Top surface per column and a mask of columns where a cylinder of
    ``clearance`` fits on that surface (single-surface-per-column model)."""
    occ = scene.occupancy
    vs = scene.voxel_size
    body = int(math.ceil(AGENT_HEIGHT / vs))
    nz = occ.shape[2]
    # lowest occupied voxel with ``body`` free voxels above it
    padded = np.concatenate([occ, np.zeros(occ.shape[:2] + (body,), bool)], axis=2)
    csum = np.concatenate([np.zeros(occ.shape[:2] + (1,), int),
                           np.cumsum(padded, axis=2)], axis=2)
    above = csum[:, :, 1 + body + np.arange(nz)] - csum[:, :, 1 + np.arange(nz)]
    surface = occ & (above == 0)
    any_occ = surface.any(axis=2)
    top = np.where(any_occ, np.argmax(surface, axis=2) + 1, -1).astype(float)
    r = clearance / vs
    ri = int(math.ceil(r))
    yy, xx = np.mgrid[-ri:ri + 1, -ri:ri + 1]
    # voxel squares intersecting the disk around a column centre
    qx = np.maximum(np.abs(xx) - 0.5, 0)
    qy = np.maximum(np.abs(yy) - 0.5, 0)
    footprint = qx ** 2 + qy ** 2 < r ** 2
    hmax = ndimage.maximum_filter(top, footprint=footprint, mode="constant", cval=1e9)
    step = STEP_HEIGHT / vs
    ok = any_occ & (hmax <= top + step)
    return top, ok


def reachability_audit(scene: Scene, clearance: float = AGENT_RADIUS) -> bool:
    """Flood fill over walkable columns; True iff every room centre is reached
    from the first one."""
    top, ok = walkable_heightfield(scene, clearance)
    step = STEP_HEIGHT / scene.voxel_size
    seeds = []
    for room in scene.rooms:
        g = np.floor(scene.to_grid(room.center)).astype(int)
        if not ok[g[0], g[1]]:
            return False
        seeds.append((g[0], g[1]))
    seen = np.zeros_like(ok)
    stack = [seeds[0]]
    seen[seeds[0]] = True
    nx, ny = ok.shape
    while stack:
        i, j = stack.pop()
        h = top[i, j]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and ok[a, b] and not seen[a, b] \
                    and abs(top[a, b] - h) <= step:
                seen[a, b] = True
                stack.append((a, b))
    return all(seen[s] for s in seeds)


# --------------------------------------------------------------------------
# sensors


def camera_basis(pose: Pose):
    cy, sy = math.cos(pose.yaw), math.sin(pose.yaw)
    cp, sp = math.cos(pose.pitch), math.sin(pose.pitch)
    fwd = np.array([cp * cy, cp * sy, sp])
    right = np.array([sy, -cy, 0.0])
    up = np.array([-sp * cy, -sp * sy, cp])
    return fwd, right, up


def _cast(scene: Scene, pose: Pose, cam: CameraIntrinsics, stride: int = 1):
    g = scene.to_grid(pose.position)
    i, j, k = np.floor(g).astype(int)
    shape = scene.occupancy.shape
    if not (0 <= i < shape[0] and 0 <= j < shape[1] and 0 <= k < shape[2]):
        raise ValueError(f"pose {pose} outside scene bounds")
    if scene.occupancy[i, j, k]:
        raise EmbeddedPoseError(f"pose {pose} is inside an occupied voxel")
    fwd, right, up = camera_basis(pose)
    depth, rgb = _kernels.cast_image(
        scene.occupancy, scene.voxel_color, g, fwd, right, up, cam.focal,
        cam.width, cam.height, MAX_RANGE / scene.voxel_size, stride, -1.0)
    hit = depth >= 0
    depth = np.where(hit, depth * scene.voxel_size, SENTINEL)
    return depth, rgb


def raycast_depth(scene: Scene, pose: Pose, cam: CameraIntrinsics) -> DepthMap:
    """Euclidean distance along each pixel ray to the first occupied voxel."""
    depth, _ = _cast(scene, pose, cam)
    return DepthMap(depth)


def render_rgb(scene: Scene, pose: Pose, cam: CameraIntrinsics) -> Image:
    _, rgb = _cast(scene, pose, cam)
    return Image(rgb)


def render(scene: Scene, pose: Pose, cam: CameraIntrinsics):
    """Colour and depth from a single traversal."""
    depth, rgb = _cast(scene, pose, cam)
    return Image(rgb), DepthMap(depth)


def metric_depth_oracle(scene: Scene, pose: Pose, cam: CameraIntrinsics,
                        relative_sigma: float = 0.0, seed: int = 0) -> DepthMap:
    """Ground-truth depth with multiplicative lognormal noise."""
    if not 0.0 <= relative_sigma <= 0.2:
        raise ValueError("relative_sigma must lie in [0, 0.2]")
    dm = raycast_depth(scene, pose, cam)
    if relative_sigma == 0.0:
        return dm
    rng = np.random.default_rng(seed)
    factors = np.exp(rng.normal(0.0, relative_sigma, size=dm.depth.shape))
    return DepthMap(np.where(dm.valid, dm.depth * factors, dm.sentinel))


def is_traversable(scene: Scene, p, clearance: float = AGENT_RADIUS) -> bool:
    vs = scene.voxel_size
    g = scene.to_grid(p)
    return bool(_kernels.traversable(scene.occupancy, g[0], g[1], g[2], clearance / vs,
                                     STEP_HEIGHT / vs, AGENT_HEIGHT / vs, SUPPORT_DEPTH / vs))


def segment_traversable(scene: Scene, a, b, clearance: float = AGENT_RADIUS,
                        spacing: float = 0.1) -> bool:
    """Sample the straight segment a->b every ``spacing`` metres."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
    for t in np.linspace(0.0, 1.0, n + 1):
        if not is_traversable(scene, a + t * (b - a), clearance):
            return False
    return True


def floor_height(scene: Scene, x: float, y: float, z_hint: float,
                 reach: float = 1.2) -> float | None:
    """Walkable surface height under (x, y) within ``reach`` of ``z_hint``."""
    vs = scene.voxel_size
    g = scene.to_grid((x, y, z_hint))
    top = _kernels.support_top(scene.occupancy, g[0], g[1], g[2] - reach / vs, g[2] + reach / vs)
    if top < 0:
        return None
    return float(top * vs + scene.origin[2])


def free_distance(scene: Scene, origin, direction, max_range: float = MAX_RANGE) -> float:
    """Distance to the first occupied voxel along ``direction`` (capped)."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    g = scene.to_grid(origin)
    t, *_ = _kernels.dda(scene.occupancy, g[0], g[1], g[2], d[0], d[1], d[2],
                         max_range / scene.voxel_size)
    return max_range if t < 0 else float(t * scene.voxel_size)


def line_of_sight(scene: Scene, starts, ends) -> np.ndarray:
    s = scene.to_grid(np.atleast_2d(starts))
    e = scene.to_grid(np.atleast_2d(ends))
    return _kernels.segments_clear(scene.occupancy, np.ascontiguousarray(s), np.ascontiguousarray(e))


def scene_from_boxes(boxes, bounds, voxel_size: float = VOXEL_SIZE, seed: int = 0) -> Scene:
    """Hand-built scene from ``[(lo_xyz, hi_xyz, color_name)]`` boxes in metres.

    Used by fixtures and demos; ``bounds`` is ``(lo_xyz, hi_xyz)``.
    """
    lo = np.round(np.asarray(bounds[0], float) / voxel_size).astype(int)
    hi = np.round(np.asarray(bounds[1], float) / voxel_size).astype(int)
    b = _Builder(tuple(hi - lo), lo)
    for blo, bhi, color in boxes:
        a = np.round(np.asarray(blo, float) / voxel_size).astype(int)
        c = np.round(np.asarray(bhi, float) / voxel_size).astype(int)
        b.box(a, c, PALETTE[color] if isinstance(color, str) else color)
    return Scene(seed=seed, spec=SceneSpec(), voxel_size=voxel_size, origin=lo * voxel_size,
                 occupancy=b.occ, voxel_color=b.col)
