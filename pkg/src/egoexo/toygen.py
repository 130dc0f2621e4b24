"""Procedural paired ego/exo scene generator.

Renders a scripted actor (torso + head boxes) inside a box-obstacle scene
with a software z-buffer rasterizer and a pinhole camera model. The ego
camera rides the actor's head (with per-frame jitter); the exo camera is a
static side or top view. Output follows the core-data manifest layout, so
generated datasets are interchangeable with ingested ones.

World frame: x/y ground plane, z up, meters. Camera frame: x right, y down,
z forward; a point P projects to u = f*x/z + cx, v = f*y/z + cy.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from . import data
from .data import CameraPose, Manifest, PairedSequence, SYNTHETIC_ACTIONS
from .errors import DegenerateCamera, InvalidScript, SchemaError

DEFAULT_IMAGE_SIZE = 128
DEFAULT_JITTER_DEG = 3.0
NEAR_PLANE = 0.05

DEFAULT_SPEEDS = {
    "walking": 0.06,
    "running": 0.14,
    "crouching": 0.03,
    "strafing": 0.06,
    "jumping": 0.05,
}
BASE_HEIGHT = 1.7
JUMP_HEIGHT = 0.55
JUMP_PERIOD = 30
CROUCH_FACTOR = 0.65

_LIGHT_DIR = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])


# ---------------------------------------------------------------------------
# specs

@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    color: tuple[int, int, int]
    yaw: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    bounds: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    ground_color: Optional[tuple[int, int, int]]
    sky_color: tuple[int, int, int]
    obstacles: tuple[Box, ...]
    rng_seed: int
    actor_color: tuple[int, int, int] = (235, 70, 45)
    pixel_noise: float = 0.0

    def validate(self) -> None:
        xmin, xmax, ymin, ymax = self.bounds
        if xmin >= xmax or ymin >= ymax:
            raise SchemaError("scene bounds are empty")
        for box in self.obstacles:
            cx, cy, _ = box.center
            sx, sy, _ = box.size
            half = 0.5 * math.hypot(sx, sy)
            if not (xmin <= cx - half and cx + half <= xmax and ymin <= cy - half and cy + half <= ymax):
                raise SchemaError(f"obstacle at {box.center} leaves the scene bounds")


@dataclass(frozen=True)
class Trajectory:
    """Ground-plane path. ``line`` keeps the heading fixed (reflecting at the
    bounds); ``wander`` adds a sinusoidal heading oscillation."""

    start: tuple[float, float]
    heading: float
    kind: str = "line"  # "line" or "wander"
    wander_amp: float = 0.8  # radians
    wander_period: float = 60.0  # frames
    wander_phase: float = 0.0


@dataclass(frozen=True)
class ActionScript:
    action: str
    duration: int
    trajectory: Trajectory
    speed: Optional[float] = None  # m/frame; None picks the per-action default
    base_height: float = BASE_HEIGHT

    def resolved_speed(self) -> float:
        return DEFAULT_SPEEDS[self.action] if self.speed is None else self.speed

    def validate(self) -> None:
        if self.action not in SYNTHETIC_ACTIONS:
            raise InvalidScript(f"unknown action {self.action!r}")
        if self.duration < 1:
            raise InvalidScript(f"duration must be >= 1, got {self.duration}")
        if self.speed is not None and self.speed < 0:
            raise InvalidScript(f"speed must be >= 0, got {self.speed}")
        if self.base_height <= 0:
            raise InvalidScript("base_height must be positive")


@dataclass(frozen=True)
class Intrinsics:
    focal: float
    width: int
    height: int
    cx: Optional[float] = None
    cy: Optional[float] = None

    def principal_point(self) -> tuple[float, float]:
        cx = (self.width - 1) / 2.0 if self.cx is None else self.cx
        cy = (self.height - 1) / 2.0 if self.cy is None else self.cy
        return cx, cy


@dataclass(frozen=True)
class CameraExtrinsics:
    """Rigid pose: camera center in world coordinates and the world-to-camera
    rotation (rows: right, down, forward)."""

    position: np.ndarray
    r_w2c: np.ndarray

    def to_camera_pose(self) -> CameraPose:
        quat_xyzw = Rotation.from_matrix(self.r_w2c.T).as_quat()
        w, x, y, z = quat_xyzw[3], quat_xyzw[0], quat_xyzw[1], quat_xyzw[2]
        return CameraPose(tuple(float(v) for v in self.position), (float(w), float(x), float(y), float(z)))


@dataclass(frozen=True)
class CameraRig:
    intrinsics: Intrinsics
    exo_kind: str
    exo: CameraExtrinsics
    jitter_max_deg: float = DEFAULT_JITTER_DEG
    ego_focal: Optional[float] = None  # defaults to intrinsics.focal

    def ego_intrinsics(self) -> Intrinsics:
        if self.ego_focal is None:
            return self.intrinsics
        return replace(self.intrinsics, focal=self.ego_focal)


@dataclass(frozen=True)
class ActorState:
    """Per-frame actor kinematics produced by simulate_actor."""

    positions: np.ndarray  # (T, 2)
    headings: np.ndarray  # (T,)
    heights: np.ndarray  # (T,)
    action: str

    def __len__(self) -> int:
        return len(self.positions)


# ---------------------------------------------------------------------------
# kinematics

def simulate_actor(script: ActionScript, scene: SceneSpec) -> ActorState:
    """Integrate the scripted motion inside the scene bounds.

    Deterministic given the scene seed. Positions reflect off the bounds;
    the per-frame action label is constant and equal to script.action.
    """
    script.validate()
    scene.validate()
    xmin, xmax, ymin, ymax = scene.bounds
    speed = script.resolved_speed()
    traj = script.trajectory
    T = script.duration

    positions = np.zeros((T, 2))
    headings = np.zeros(T)
    positions[0] = traj.start
    base_heading = traj.heading

    def facing(t: int, base: float) -> float:
        if traj.kind == "wander":
            return base + traj.wander_amp * math.sin(
                2.0 * math.pi * t / traj.wander_period + traj.wander_phase
            )
        return base

    headings[0] = facing(0, base_heading)
    strafe = math.pi / 2 if script.action == "strafing" else 0.0
    for t in range(1, T):
        move = facing(t - 1, base_heading) + strafe
        x = positions[t - 1, 0] + speed * math.cos(move)
        y = positions[t - 1, 1] + speed * math.sin(move)
        if x < xmin or x > xmax:
            x = min(max(2.0 * xmin - x if x < xmin else 2.0 * xmax - x, xmin), xmax)
            base_heading = math.pi - base_heading
        if y < ymin or y > ymax:
            y = min(max(2.0 * ymin - y if y < ymin else 2.0 * ymax - y, ymin), ymax)
            base_heading = -base_heading
        positions[t] = (x, y)
        headings[t] = facing(t, base_heading)

    heights = _height_profile(script)
    return ActorState(positions, headings, heights, script.action)


def _height_profile(script: ActionScript) -> np.ndarray:
    T = script.duration
    t = np.arange(T, dtype=np.float64)
    base = script.base_height
    if script.action == "jumping":
        period = min(JUMP_PERIOD, T)
        if period < 2:
            return np.full(T, base)
        s = (t % period) / (period - 1)
        return base + JUMP_HEIGHT * 4.0 * s * (1.0 - s)
    if script.action == "crouching":
        # settled crouch with a slow bob; always strictly below standing height
        return base * (CROUCH_FACTOR + 0.04 * np.sin(2.0 * np.pi * t / 40.0))
    # gait bob, frequency tied to stride so zero speed keeps the head still
    speed = script.resolved_speed()
    return base + 0.03 * np.sin(2.0 * math.pi * 1.8 * speed * t)


# ---------------------------------------------------------------------------
# cameras

def look_at(eye, target, up_hint=(0.0, 0.0, 1.0)) -> CameraExtrinsics:
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise DegenerateCamera("camera target coincides with its position")
    fwd = fwd / norm
    right = np.cross(fwd, np.asarray(up_hint, dtype=np.float64))
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    return CameraExtrinsics(eye, np.stack([right, down, fwd]))


def ego_camera(
    position_xy: np.ndarray,
    heading: float,
    height: float,
    jitter_max_deg: float,
    rng: Optional[np.random.Generator] = None,
) -> CameraExtrinsics:
    """Head-mounted camera: at the actor position lifted by the body height,
    looking along the heading, with an optional small random rotation."""
    eye = np.array([position_xy[0], position_xy[1], height])
    fwd = np.array([math.cos(heading), math.sin(heading), 0.0])
    cam = look_at(eye, eye + fwd)
    if jitter_max_deg > 0 and rng is not None:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = math.radians(rng.uniform(0.0, jitter_max_deg))
        r_jit = Rotation.from_rotvec(axis * angle).as_matrix()
        cam = CameraExtrinsics(cam.position, r_jit @ cam.r_w2c)
    return cam


def make_rig(
    scene: SceneSpec,
    exo_kind: str,
    image_size: int = DEFAULT_IMAGE_SIZE,
    jitter_max_deg: float = DEFAULT_JITTER_DEG,
) -> CameraRig:
    # the side camera sits close enough that the actor fills a useful part
    # of the frame everywhere in the arena
    xmin, xmax, ymin, ymax = scene.bounds
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    span = max(xmax - xmin, ymax - ymin)
    if exo_kind == "side":
        eye = (cx, ymin - 0.85 * span, 1.7)
        exo = look_at(eye, (cx, cy, 0.8))
        focal = 0.85 * image_size
    elif exo_kind == "top":
        eye = (cx, cy, 1.35 * span)
        exo = look_at(eye, (cx, cy, 0.0), up_hint=(0.0, 1.0, 0.0))
        focal = 1.1 * image_size
    else:
        raise SchemaError(f"unknown exo kind {exo_kind!r}")
    intr = Intrinsics(focal=focal, width=image_size, height=image_size)
    return CameraRig(
        intrinsics=intr,
        exo_kind=exo_kind,
        exo=exo,
        jitter_max_deg=jitter_max_deg,
        ego_focal=0.6 * image_size,
    )


def project_points(points: np.ndarray, cam: CameraExtrinsics, intr: Intrinsics) -> np.ndarray:
    """Project world points to pixel coordinates (u, v); z <= 0 gives NaN."""
    if intr.focal == 0:
        raise DegenerateCamera("zero focal length")
    pts = (np.atleast_2d(points) - cam.position) @ cam.r_w2c.T
    cx, cy = intr.principal_point()
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(pts[:, 2] > 0, intr.focal * pts[:, 0] / pts[:, 2] + cx, np.nan)
        v = np.where(pts[:, 2] > 0, intr.focal * pts[:, 1] / pts[:, 2] + cy, np.nan)
    return np.stack([u, v], axis=1)


# ---------------------------------------------------------------------------
# geometry -> triangles

_BOX_FACES = (
    ((0, 1, 2), (0, 2, 3)),  # -z
    ((4, 6, 5), (4, 7, 6)),  # +z
    ((0, 4, 5), (0, 5, 1)),  # -y
    ((3, 2, 6), (3, 6, 7)),  # +y
    ((0, 3, 7), (0, 7, 4)),  # -x
    ((1, 5, 6), (1, 6, 2)),  # +x
)


def _box_triangles(box: Box) -> tuple[np.ndarray, np.ndarray]:
    cx, cy, cz = box.center
    sx, sy, sz = (s / 2.0 for s in box.size)
    corners = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    )
    if box.yaw:
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        corners = corners @ rot.T
    corners = corners + np.array([cx, cy, cz])
    tris = np.array([corners[list(idx)] for face in _BOX_FACES for idx in face])
    colors = np.tile(np.asarray(box.color, dtype=np.float64), (len(tris), 1))
    return tris, colors


def _actor_boxes(x: float, y: float, heading: float, height: float, color) -> list[Box]:
    torso_h = 0.52 * height
    head_h = 0.2 * height
    head_color = tuple(min(255, int(c * 0.75 + 60)) for c in color)
    return [
        Box((x, y, 0.54 * height), (0.52, 0.34, torso_h), tuple(color), yaw=heading),
        Box((x, y, 0.9 * height), (0.28, 0.28, head_h), head_color, yaw=heading),
    ]


def _scene_triangles(scene: SceneSpec, actor: Optional[tuple] = None):
    tri_list = []
    col_list = []
    if scene.ground_color is not None:
        xmin, xmax, ymin, ymax = scene.bounds
        m = 60.0
        quad = np.array(
            [[xmin - m, ymin - m, 0.0], [xmax + m, ymin - m, 0.0],
             [xmax + m, ymax + m, 0.0], [xmin - m, ymax + m, 0.0]]
        )
        tri_list.append(np.array([quad[[0, 1, 2]], quad[[0, 2, 3]]]))
        col_list.append(np.tile(np.asarray(scene.ground_color, dtype=np.float64), (2, 1)))
    boxes = list(scene.obstacles)
    if actor is not None:
        x, y, heading, height = actor
        boxes.extend(_actor_boxes(x, y, heading, height, scene.actor_color))
    for box in boxes:
        tris, cols = _box_triangles(box)
        tri_list.append(tris)
        col_list.append(cols)
    if not tri_list:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    return np.concatenate(tri_list), np.concatenate(col_list)


def _shade(tris_world: np.ndarray, colors: np.ndarray) -> np.ndarray:
    n = np.cross(tris_world[:, 1] - tris_world[:, 0], tris_world[:, 2] - tris_world[:, 0])
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norms, out=np.zeros_like(n), where=norms > 1e-12)
    lambert = np.abs(n @ _LIGHT_DIR)
    return colors * (0.6 + 0.4 * lambert)[:, None]


# ---------------------------------------------------------------------------
# rasterizer

def _clip_near(tri_cam: np.ndarray, znear: float) -> list[np.ndarray]:
    """Clip one camera-space triangle against z >= znear; returns triangles."""
    poly = list(tri_cam)
    out = []
    for i, cur in enumerate(poly):
        prev = poly[i - 1]
        cur_in = cur[2] >= znear
        prev_in = prev[2] >= znear
        if cur_in != prev_in:
            t = (znear - prev[2]) / (cur[2] - prev[2])
            out.append(prev + t * (cur - prev))
        if cur_in:
            out.append(cur)
    return [np.stack([out[0], out[i], out[i + 1]]) for i in range(1, len(out) - 1)]


def render_view(
    scene: SceneSpec,
    cam: CameraExtrinsics,
    intr: Intrinsics,
    actor: Optional[tuple] = None,
    noise_rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Rasterize the scene (and optionally the actor, given as a tuple
    (x, y, heading, height)) into an HxWx3 uint8 frame."""
    if intr.focal == 0:
        raise DegenerateCamera("zero focal length")
    h, w = intr.height, intr.width
    cx, cy = intr.principal_point()
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = scene.sky_color
    inv_z = np.zeros((h, w))

    tris_world, colors = _scene_triangles(scene, actor)
    if len(tris_world):
        shaded = _shade(tris_world, colors)
        tris_cam = (tris_world - cam.position) @ cam.r_w2c.T
        for tri, color in zip(tris_cam, shaded):
            if (tri[:, 2] < NEAR_PLANE).all():
                continue
            for part in _clip_near(tri, NEAR_PLANE):
                _raster_triangle(img, inv_z, part, color, intr.focal, cx, cy)

    if noise_rng is not None and scene.pixel_noise > 0:
        img += noise_rng.normal(0.0, scene.pixel_noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _raster_triangle(img, inv_z_buf, tri_cam, color, focal, cx, cy) -> None:
    z = tri_cam[:, 2]
    u = focal * tri_cam[:, 0] / z + cx
    v = focal * tri_cam[:, 1] / z + cy
    h, w = inv_z_buf.shape
    x0 = max(int(math.ceil(u.min())), 0)
    x1 = min(int(math.floor(u.max())), w - 1)
    y0 = max(int(math.ceil(v.min())), 0)
    y1 = min(int(math.floor(v.max())), h - 1)
    if x0 > x1 or y0 > y1:
        return
    area = (u[1] - u[0]) * (v[2] - v[0]) - (u[2] - u[0]) * (v[1] - v[0])
    if abs(area) < 1e-12:
        return
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)[:, None]
    e0 = (u[2] - u[1]) * (ys - v[1]) - (v[2] - v[1]) * (xs - u[1])
    e1 = (u[0] - u[2]) * (ys - v[2]) - (v[0] - v[2]) * (xs - u[2])
    e2 = (u[1] - u[0]) * (ys - v[0]) - (v[1] - v[0]) * (xs - u[0])
    if area > 0:
        inside = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
    else:
        inside = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
    if not inside.any():
        return
    b0, b1, b2 = e0 / area, e1 / area, e2 / area
    inv_z_pix = b0 / z[0] + b1 / z[1] + b2 / z[2]
    sub = inv_z_buf[y0 : y1 + 1, x0 : x1 + 1]
    mask = inside & (inv_z_pix > sub)
    sub[mask] = inv_z_pix[mask]
    img[y0 : y1 + 1, x0 : x1 + 1][mask] = color


# ---------------------------------------------------------------------------
# scenes, scripts, datasets

_PALETTES = {
    "a": {
        "sky": [(168, 200, 235), (150, 190, 228), (182, 208, 230)],
        "ground": [(120, 135, 110), (128, 128, 120), (110, 130, 125)],
        "obstacles": [
            (200, 55, 55), (55, 90, 200), (220, 190, 60), (70, 170, 80),
            (180, 70, 180), (60, 180, 190), (230, 130, 50), (120, 120, 220),
        ],
        "noise": 0.0,
    },
    "b": {
        "sky": [(222, 205, 178), (210, 196, 182), (228, 214, 168)],
        "ground": [(146, 116, 86), (132, 110, 92), (156, 128, 80)],
        "obstacles": [
            (170, 140, 110), (110, 130, 150), (180, 165, 120), (120, 145, 110),
            (160, 120, 140), (105, 150, 145), (185, 150, 95), (140, 135, 160),
        ],
        "noise": 6.0,
    },
}


def random_scene(
    seed: int | np.random.SeedSequence,
    style: str = "a",
    bounds: tuple[float, float, float, float] = (-3.0, 3.0, -3.0, 3.0),
) -> SceneSpec:
    """Sample a scene layout: palette colors plus 3..6 box obstacles kept
    inside the bounds and clear of the region where actors start."""
    if style not in _PALETTES:
        raise SchemaError(f"unknown style {style!r}")
    pal = _PALETTES[style]
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = bounds
    n_obs = int(rng.integers(3, 7))
    obstacles = []
    order = rng.permutation(len(pal["obstacles"]))
    for i in range(n_obs):
        sx = float(rng.uniform(0.35, 1.1))
        sy = float(rng.uniform(0.35, 1.1))
        sz = float(rng.uniform(0.5, 1.9))
        margin = 0.5 * math.hypot(sx, sy) + 0.1
        for _ in range(50):
            cx = float(rng.uniform(xmin + margin, xmax - margin))
            cy = float(rng.uniform(ymin + margin, ymax - margin))
            if math.hypot(cx, cy) > 1.4:  # keep the spawn region open
                break
        color = pal["obstacles"][order[i % len(order)]]
        obstacles.append(Box((cx, cy, sz / 2.0), (sx, sy, sz), color, yaw=float(rng.uniform(0, math.pi))))
    seed_int = int(np.random.default_rng(seed).integers(0, 2**31 - 1))
    return SceneSpec(
        bounds=bounds,
        ground_color=tuple(pal["ground"][int(rng.integers(len(pal["ground"])))]),
        sky_color=tuple(pal["sky"][int(rng.integers(len(pal["sky"])))]),
        obstacles=tuple(obstacles),
        rng_seed=seed_int,
        pixel_noise=pal["noise"],
    )


def _collides(scene: SceneSpec, x: float, y: float, radius: float = 0.35) -> bool:
    for box in scene.obstacles:
        dx, dy = x - box.center[0], y - box.center[1]
        c, s = math.cos(-box.yaw), math.sin(-box.yaw)
        lx, ly = c * dx - s * dy, s * dx + c * dy
        if abs(lx) < box.size[0] / 2 + radius and abs(ly) < box.size[1] / 2 + radius:
            return True
    return False


def random_script(
    action: str,
    duration: int,
    scene: SceneSpec,
    seed: int | np.random.SeedSequence,
) -> ActionScript:
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = scene.bounds
    for _ in range(200):
        x = float(rng.uniform(xmin * 0.6, xmax * 0.6))
        y = float(rng.uniform(ymin * 0.6, ymax * 0.6))
        if not _collides(scene, x, y):
            break
    traj = Trajectory(
        start=(x, y),
        heading=float(rng.uniform(-math.pi, math.pi)),
        kind="wander",
        wander_amp=float(rng.uniform(0.6, 1.2)),
        wander_period=float(rng.uniform(35.0, 70.0)),
        wander_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
    )
    return ActionScript(action=action, duration=duration, trajectory=traj)


def generate_pair_sequence(
    scene: SceneSpec,
    script: ActionScript,
    exo_kind: str,
    ego_dir: Path,
    exo_dir: Path,
    seq_id: str,
    scene_id: str = "scene",
    actor_id: str = "actor",
    split: str = "train",
    rig: Optional[CameraRig] = None,
    image_size: int = DEFAULT_IMAGE_SIZE,
    jitter_max_deg: float = DEFAULT_JITTER_DEG,
    seed: Optional[int] = None,
) -> PairedSequence:
    """Render one aligned ego/exo pair sequence and write its PNG frames.

    Bit-identical outputs for identical (scene, script, seed); the returned
    PairedSequence carries per-frame labels and camera poses.
    """
    rig = rig or make_rig(scene, exo_kind, image_size, jitter_max_deg)
    state = simulate_actor(script, scene)
    seq_seed = scene.rng_seed if seed is None else seed
    jitter_rng = np.random.default_rng(np.random.SeedSequence([seq_seed, 1]))
    noise_ego = np.random.default_rng(np.random.SeedSequence([seq_seed, 2]))
    noise_exo = np.random.default_rng(np.random.SeedSequence([seq_seed, 3]))
    ego_intr = rig.ego_intrinsics()

    poses_ego = []
    poses_exo = []
    exo_pose = rig.exo.to_camera_pose()
    ego_dir = Path(ego_dir)
    exo_dir = Path(exo_dir)
    for t in range(len(state)):
        cam_ego = ego_camera(
            state.positions[t], state.headings[t], state.heights[t],
            rig.jitter_max_deg, jitter_rng,
        )
        frame_ego = render_view(scene, cam_ego, ego_intr, actor=None, noise_rng=noise_ego)
        actor = (state.positions[t, 0], state.positions[t, 1], state.headings[t], state.heights[t])
        frame_exo = render_view(scene, rig.exo, rig.intrinsics, actor=actor, noise_rng=noise_exo)
        data.save_frame(frame_ego, ego_dir / f"{t:06d}.png")
        data.save_frame(frame_exo, exo_dir / f"{t:06d}.png")
        poses_ego.append(cam_ego.to_camera_pose())
        poses_exo.append(exo_pose)

    return PairedSequence(
        id=seq_id,
        scene_id=scene_id,
        actor_id=actor_id,
        split=split,
        modality="synthetic",
        exo_kind=exo_kind,
        ego_dir=ego_dir,
        exo_dir=exo_dir,
        length=len(state),
        labels=(script.action,) * len(state),
        poses_ego=tuple(poses_ego),
        poses_exo=tuple(poses_exo),
        resolution=(rig.intrinsics.height, rig.intrinsics.width),
    )


def _split_for(index: int, total: int) -> str:
    if total >= 3:
        if index == total - 1:
            return "test"
        if index == total - 2:
            return "val"
        return "train"
    if total == 2:
        return "test" if index == 1 else "train"
    return "train"


def generate_dataset(
    out_dir: str | Path,
    scenes: int,
    seqs_per_scene: int,
    length: int,
    seed: int,
    exo_kind: str = "side",
    style: str = "a",
    image_size: int = DEFAULT_IMAGE_SIZE,
    jitter_max_deg: float = DEFAULT_JITTER_DEG,
    workers: int = 1,
) -> Manifest:
    """Generate a full dataset: ``scenes x seqs_per_scene`` sequences of the
    given length, a per-scene train/val/test split, and a manifest file."""
    out_dir = Path(out_dir)
    scene_seeds = np.random.SeedSequence(seed).spawn(scenes)
    jobs = []
    for si in range(scenes):
        scene = random_scene(scene_seeds[si].spawn(1)[0], style=style)
        seq_seeds = scene_seeds[si].spawn(seqs_per_scene + 1)[1:]
        for j in range(seqs_per_scene):
            action = SYNTHETIC_ACTIONS[j % len(SYNTHETIC_ACTIONS)]
            script = random_script(action, length, scene, seq_seeds[j])
            seq_id = f"scene{si:02d}_seq{j:02d}"
            jobs.append(
                dict(
                    scene=scene,
                    script=script,
                    exo_kind=exo_kind,
                    ego_dir=out_dir / "frames" / seq_id / "ego",
                    exo_dir=out_dir / "frames" / seq_id / "exo",
                    seq_id=seq_id,
                    scene_id=f"scene{si:02d}",
                    actor_id=f"actor{si:02d}{j:02d}",
                    split=_split_for(j, seqs_per_scene),
                    image_size=image_size,
                    jitter_max_deg=jitter_max_deg,
                    seed=int(seq_seeds[j].generate_state(1)[0] % (2**31 - 1)),
                )
            )

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # sequences are independent; the pool only parallelizes rendering
            sequences = list(pool.map(_generate_job, jobs))
    else:
        sequences = [_generate_job(job) for job in jobs]

    manifest = Manifest(
        modality="synthetic",
        exo_kind=exo_kind,
        sequences=tuple(sequences),
        root=out_dir,
    )
    manifest.validate()
    data.write_manifest(manifest, out_dir / "manifest.json")
    return manifest


def _generate_job(job: dict) -> PairedSequence:
    return generate_pair_sequence(**job)
