"""Analytic test scenes with exact plane geometry and exact poses.

Scenes are built from axis-aligned planes and boxes so every generated
point can be snapped exactly onto its surface; oracle tests then know the
true plane of every return.  Frames are produced by ray casting the pixel
grid (optionally jittered inside each pixel) from a moving sensor pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .io_formats import write_kitti_bin
from .motion import ImuSample, RigidTransform, save_imu_csv, save_poses
from .range_image import AngularResolution

MIN_RANGE = 0.2
MAX_RANGE = 120.0


@dataclass
class Scene:
    """Infinite planes (n . p = k) plus axis-aligned boxes."""

    name: str
    planes: List[Tuple[np.ndarray, float]] = field(default_factory=list)
    boxes: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "planes": [{"normal": list(map(float, n)), "k": float(k)} for n, k in self.planes],
            "boxes": [
                {"min": list(map(float, lo)), "max": list(map(float, hi))}
                for lo, hi in self.boxes
            ],
        }


def make_corridor(
    half_width: float = 4.0,
    half_length: float = 5.0,
    yaw: float = 0.4,
    pitch: float = 0.3,
    floor_k: float = -1.6,
    ceil_k: float = -1.7,
) -> Scene:
    """A closed planar corridor: side walls, end walls, floor and ceiling.

    The corridor is yawed against the sensor axes and the floor/ceiling
    are pitched, so every surface normal keeps a nonzero x component (a
    surface normal exactly perpendicular to the sensor x axis cannot be
    expressed by the codec's plane form and would fall back to residual
    coding; real mounts are never that aligned).
    """
    wall_n = np.array([np.sin(yaw), np.cos(yaw), 0.0])
    axis_n = np.array([np.cos(yaw), -np.sin(yaw), 0.0])
    floor_n = np.array([np.sin(pitch), 0.0, np.cos(pitch)])
    ceil_n = np.array([np.sin(pitch), 0.0, -np.cos(pitch)])
    return Scene(
        name="corridor",
        planes=[
            (wall_n, half_width),
            (-wall_n, half_width),
            (axis_n, half_length),
            (-axis_n, half_length),
            (floor_n, floor_k),
            (ceil_n, ceil_k),
        ],
    )


def make_corridor_boxes(n_boxes: int = 6, seed: int = 5, **corridor_kwargs) -> Scene:
    """Corridor with box obstacles on the floor (occlusion/disocclusion)."""
    base = make_corridor(**corridor_kwargs)
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(n_boxes):
        cx = rng.uniform(-3.5, 3.5)
        cy = rng.uniform(-2.5, 2.5)
        if abs(cx) < 1.2 and abs(cy) < 1.2:
            cx += 2.0
        sx, sy = rng.uniform(0.4, 1.0, 2)
        sz = rng.uniform(0.5, 1.4)
        boxes.append(
            (np.array([cx - sx / 2, cy - sy / 2, -1.7]),
             np.array([cx + sx / 2, cy + sy / 2, -1.7 + sz]))
        )
    return Scene(name="corridor_boxes", planes=base.planes, boxes=boxes)


def make_corner(wall_x: float = 8.0, wall_y: float = 8.0) -> Scene:
    """Two axis-aligned walls meeting in a corner.

    Points snap exactly onto these planes, which makes the scene the
    reference for exact-membership checks; the y wall's normal has no x
    component, so the encoder will residual-code it by design.
    """
    return Scene(
        name="corner",
        planes=[
            (np.array([1.0, 0.0, 0.0]), wall_x),
            (np.array([0.0, 1.0, 0.0]), wall_y),
        ],
    )


def make_ground_boxes(
    ground_k: float = -1.75,
    pitch: float = 0.06,
    n_boxes: int = 12,
    seed: int = 7,
    spread: float = 30.0,
) -> Scene:
    """A pitched ground plane scattered with boxes sitting on it."""
    rng = np.random.default_rng(seed)
    ground_n = np.array([np.sin(pitch), 0.0, np.cos(pitch)])
    boxes = []
    for _ in range(n_boxes):
        cx, cy = rng.uniform(-spread, spread, 2)
        if abs(cx) < 4.0 and abs(cy) < 4.0:
            cx += 8.0  # keep boxes off the sensor path
        sx, sy = rng.uniform(0.8, 3.5, 2)
        sz = rng.uniform(0.8, 2.5)
        ground_z = (ground_k - ground_n[0] * cx) / ground_n[2]
        lo = np.array([cx - sx / 2, cy - sy / 2, ground_z - 0.4])
        hi = np.array([cx + sx / 2, cy + sy / 2, ground_z + sz])
        boxes.append((lo, hi))
    return Scene(
        name="ground_boxes",
        planes=[(ground_n, ground_k)],
        boxes=boxes,
    )


def _ray_box(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Slab-method ray/AABB: (t_near, hit mask, entry axis index)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (lo[None, :] - origin[None, :]) * inv
    t2 = (hi[None, :] - origin[None, :]) * inv
    t_lo = np.fmin(t1, t2)
    t_hi = np.fmax(t1, t2)
    t_near = np.max(t_lo, axis=1)
    t_far = np.min(t_hi, axis=1)
    axis = np.argmax(t_lo, axis=1)
    hit = (t_near <= t_far) & (t_near > MIN_RANGE) & (t_near <= MAX_RANGE)
    return t_near, hit, axis


def cast_frame(
    scene: Scene,
    pose: RigidTransform,
    res: AngularResolution,
    w: int,
    h: int,
    phi_offset: float,
    jitter: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Ray cast one frame; returns points in the frame's own coordinates.

    jitter in [0, 1) spreads ray angles uniformly inside each pixel
    instead of using pixel centers.  Hit coordinates are snapped exactly
    onto their surface (planes and box faces are axis-aligned).
    """
    if jitter and rng is None:
        rng = np.random.default_rng(0)
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    uu = uu.reshape(-1).astype(np.float64)
    vv = vv.reshape(-1).astype(np.float64)
    if jitter:
        uu = uu + 0.5 + (rng.random(uu.size) - 0.5) * jitter
        vv = vv + 0.5 + (rng.random(vv.size) - 0.5) * jitter
    else:
        uu = uu + 0.5
        vv = vv + 0.5
    theta = uu * res.theta_r
    phi = phi_offset + vv * res.phi_r
    sp = np.sin(phi)
    d_frame = np.stack([sp * np.sin(theta), sp * np.cos(theta), np.cos(phi)], axis=1)
    d_world = d_frame @ pose.R.T
    origin = pose.T

    n_rays = d_world.shape[0]
    best_r = np.full(n_rays, np.inf)
    surf = np.full(n_rays, -1, dtype=np.int64)
    box_axis = np.zeros(n_rays, dtype=np.int64)
    box_face = np.zeros(n_rays)

    for pi, (n, k) in enumerate(scene.planes):
        den = d_world @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (k - origin @ n) / den
        ok = np.isfinite(r) & (r > MIN_RANGE) & (r <= MAX_RANGE) & (r < best_r)
        best_r[ok] = r[ok]
        surf[ok] = pi

    n_planes = len(scene.planes)
    for bi, (lo, hi) in enumerate(scene.boxes):
        t, hit, axis = _ray_box(origin, d_world, lo, hi)
        ok = hit & (t < best_r)
        best_r[ok] = t[ok]
        surf[ok] = n_planes + bi
        box_axis[ok] = axis[ok]
        going_up = d_world[np.arange(n_rays), axis] > 0
        box_face[ok] = np.where(going_up, lo[axis], hi[axis])[ok]

    hit = np.isfinite(best_r)
    pw = origin[None, :] + best_r[hit, None] * d_world[hit]
    sid = surf[hit]

    # Snap each hit exactly onto its surface by re-solving the dominant
    # coordinate from the plane equation (box faces are axis-aligned).
    for pi, (n, k) in enumerate(scene.planes):
        sel = sid == pi
        if not np.any(sel):
            continue
        ax = int(np.argmax(np.abs(n)))
        others = [i for i in range(3) if i != ax]
        pw[sel, ax] = (k - pw[np.ix_(sel, others)] @ n[others]) / n[ax]
    box_sel = sid >= n_planes
    if np.any(box_sel):
        rows = np.nonzero(box_sel)[0]
        pw[rows, box_axis[hit][box_sel]] = box_face[hit][box_sel]
    return (pw - origin[None, :]) @ pose.R


def straight_trajectory(
    n_frames: int,
    dt: float = 0.1,
    velocity: Sequence[float] = (0.0, 0.0, 0.0),
    accel: Sequence[float] = (0.0, 0.0, 0.0),
    yaw_rate: float = 0.0,
):
    """Poses, frame times and consistent IMU samples for c(t) = v t + a t^2 / 2."""
    v0 = np.asarray(velocity, dtype=np.float64)
    a = np.asarray(accel, dtype=np.float64)
    frame_times = [i * dt for i in range(n_frames)]
    poses = []
    for t in frame_times:
        c = v0 * t + 0.5 * a * t * t
        psi = yaw_rate * t
        cp, sp = np.cos(psi), np.sin(psi)
        r = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
        poses.append(RigidTransform(R=r, T=c))
    imu = []
    imu_dt = dt / 20.0
    t = 0.0
    t_end = frame_times[-1] if n_frames > 1 else dt
    while t <= t_end + imu_dt / 2:
        imu.append(ImuSample(t=t, accel=a.copy(), gyro=np.array([0.0, 0.0, yaw_rate])))
        t += imu_dt
    return poses, frame_times, imu, v0


def generate_sequence(
    scene: Scene,
    n_frames: int,
    res: AngularResolution,
    w: int,
    h: int,
    phi_offset: float,
    dt: float = 0.1,
    velocity: Sequence[float] = (0.0, 0.0, 0.0),
    accel: Sequence[float] = (0.0, 0.0, 0.0),
    yaw_rate: float = 0.0,
    jitter: float = 0.0,
    seed: int = 0,
):
    """Clouds (frame coordinates), poses, frame times, IMU samples, v0."""
    poses, frame_times, imu, v0 = straight_trajectory(
        n_frames, dt=dt, velocity=velocity, accel=accel, yaw_rate=yaw_rate
    )
    rng = np.random.default_rng(seed)
    clouds = [
        cast_frame(scene, pose, res, w, h, phi_offset, jitter=jitter, rng=rng)
        for pose in poses
    ]
    return clouds, poses, frame_times, imu, v0


def write_sequence(
    out_dir,
    scene: Scene,
    clouds,
    poses,
    frame_times,
    imu,
    v0,
    extra_meta: Optional[dict] = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, cloud in enumerate(clouds):
        write_kitti_bin(out / f"frame_{i:03d}.bin", cloud)
    save_poses(out / "poses.txt", poses)
    save_imu_csv(out / "imu.csv", imu)
    meta = {
        "scene": scene.describe(),
        "frame_times": list(map(float, frame_times)),
        "v0": list(map(float, v0)),
        "n_frames": len(clouds),
    }
    meta.update(extra_meta or {})
    with open(out / "scene.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
