"""Rigid motion: IMU dead reckoning, frame alignment, channel stacking.

Frame-to-frame motion is integrated from raw IMU samples with plain
forward Euler steps (velocity first, then displacement), matching the
first-order scheme the codec assumes.  Gravity is expected to be removed
from the accelerometer stream already.

Conventions, fixed once and used everywhere:

* ``build_rotation`` returns Rz(da) @ Ry(db) @ Rx(dg) with the row signs
  written out below; for positive integrated angles it maps coordinates
  from the earlier frame to the later frame.
* The per-segment step transform i -> i+1 is (R, -R @ dT) with dT the
  integrated displacement in frame-i coordinates.
* Key-frame alignment chains step transforms for frames before the key
  frame and inverts the chain for frames after it.
* Pose files hold frame -> world transforms, one row-major ``r11 .. r33
  t1 t2 t3`` line per frame.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError, ImuCoverageError
from .parallel import ordered_map
from .range_image import AngularResolution, RangeImage, project

log = logging.getLogger(__name__)

# f32 round-tripped rotations are orthonormal only to ~1e-7.
ORTHONORMAL_ATOL = 1e-6


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray  # (3,) m/s^2
    gyro: np.ndarray  # (3,) rad/s


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation R plus translation T; applies as p' = R @ p + T."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        if R.shape != (3, 3):
            raise ValueError("R must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHONORMAL_ATOL):
            raise ValueError("R is not orthonormal")
        if not np.isclose(np.linalg.det(R), 1.0, atol=ORTHONORMAL_ATOL):
            raise ValueError("R must be a proper rotation (det +1)")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(R=np.eye(3), T=np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(R=self.R @ other.R, T=self.R @ other.T + self.T)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(R=self.R.T, T=-(self.R.T @ self.T))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.T
        return m

    def round_f32(self) -> "RigidTransform":
        """Round to the float32 precision the bitstream stores."""
        return RigidTransform(
            R=self.R.astype(np.float32).astype(np.float64),
            T=self.T.astype(np.float32).astype(np.float64),
        )

    def is_identity(self, atol: float = 0.0) -> bool:
        return np.allclose(self.R, np.eye(3), atol=atol) and np.allclose(
            self.T, 0.0, atol=atol
        )

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.T, other.T)


def build_rotation(da: float, db: float, dg: float) -> np.ndarray:
    """Rotation matrix for integrated (yaw, pitch, roll)-style angles.

    Orthonormal to ~1e-15 by construction.
    """
    ca, sa = np.cos(da), np.sin(da)
    cb, sb = np.cos(db), np.sin(db)
    cg, sg = np.cos(dg), np.sin(dg)
    rz = np.array([[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, -sb], [0.0, 1.0, 0.0], [sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, sg], [0.0, -sg, cg]])
    return rz @ ry @ rx


def integrate_imu(
    samples: Sequence[ImuSample],
    t0: float,
    t1: float,
    v0: Optional[np.ndarray] = None,
):
    """Euler-integrate IMU samples over [t0, t1].

    Per step dt the velocity is updated first (v += a*dt) and then the
    displacement (x += v*dt); angles accumulate gyro*dt.  IMU values are
    held from the latest sample at or before each step (zero-order hold).

    Returns (delta_t (3,), delta_angles (3,), v1 (3,)).
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    v = np.zeros(3) if v0 is None else np.asarray(v0, dtype=np.float64).copy()
    disp = np.zeros(3)
    ang = np.zeros(3)
    if t1 == t0:
        return disp, ang, v
    if not samples:
        raise ImuCoverageError(f"no IMU samples cover [{t0}, {t1}]")
    times = [s.t for s in samples]
    if t0 < times[0] or t1 > times[-1]:
        raise ImuCoverageError(
            f"IMU span [{times[0]}, {times[-1]}] does not cover [{t0}, {t1}]"
        )

    dts = np.diff(times)
    nominal = float(np.median(dts)) if dts.size else 0.0

    # Integration grid: t0, interior sample times, t1.
    lo = bisect.bisect_right(times, t0)
    hi = bisect.bisect_left(times, t1)
    grid = [t0] + times[lo:hi] + [t1]
    for ta, tb in zip(grid[:-1], grid[1:]):
        dt = tb - ta
        if dt <= 0.0:
            continue
        if nominal > 0.0 and dt > 2.0 * nominal:
            log.warning("IMU gap %.4fs (> 2x nominal %.4fs) at t=%.4f", dt, nominal, ta)
        k = bisect.bisect_right(times, ta) - 1
        s = samples[k]
        v = v + s.accel * dt
        disp = disp + v * dt
        ang = ang + s.gyro * dt
    return disp, ang, v


def frame_transforms(
    imu: Sequence[ImuSample],
    frame_times: Sequence[float],
    k_index: Optional[int] = None,
    v0: Optional[np.ndarray] = None,
) -> List[RigidTransform]:
    """Per-frame transforms into the key frame's coordinate system.

    Segment motions are integrated between consecutive frames with the
    velocity carried along; the transform for a frame before the key frame
    chains the step transforms up to it, frames after the key frame use the
    inverted chain.  transforms[k_index] is exactly identity.
    """
    n = len(frame_times)
    if n == 0:
        return []
    if any(b <= a for a, b in zip(frame_times[:-1], frame_times[1:])):
        raise ValueError("frame_times must be strictly increasing")
    if k_index is None:
        k_index = n // 2
    if not (0 <= k_index < n):
        raise ValueError("k_index out of range")
    if n == 1:
        return [RigidTransform.identity()]

    steps: List[RigidTransform] = []
    v = np.zeros(3) if v0 is None else np.asarray(v0, dtype=np.float64)
    for ta, tb in zip(frame_times[:-1], frame_times[1:]):
        disp, ang, v = integrate_imu(imu, ta, tb, v)
        r = build_rotation(ang[0], ang[1], ang[2])
        steps.append(RigidTransform(R=r, T=-(r @ disp)))

    out: List[Optional[RigidTransform]] = [None] * n
    out[k_index] = RigidTransform.identity()
    for i in range(k_index - 1, -1, -1):
        out[i] = out[i + 1].compose(steps[i])
    for i in range(k_index + 1, n):
        out[i] = out[i - 1].compose(steps[i - 1].inverse())
    return out  # type: ignore[return-value]


def transform_cloud(cloud: np.ndarray, m: RigidTransform) -> np.ndarray:
    return m.apply(cloud)


def poses_to_transforms(
    poses: Sequence[RigidTransform], k_index: Optional[int] = None
) -> List[RigidTransform]:
    """Frame->key transforms from frame->world poses: G_k^-1 . G_i."""
    n = len(poses)
    if k_index is None:
        k_index = n // 2
    if not (0 <= k_index < n):
        raise ValueError("k_index out of range")
    inv_k = poses[k_index].inverse()
    out = [inv_k.compose(g) for g in poses]
    out[k_index] = RigidTransform.identity()
    return out


@dataclass
class FrameStack:
    """Motion-aligned range images of consecutive frames."""

    channels: List[RangeImage]
    transforms: List[RigidTransform]  # frame i -> key frame
    k_index: int
    collision_fractions: List[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.channels) != len(self.transforms):
            raise ValueError("one transform per channel required")
        ref = self.channels[self.k_index]
        for ch in self.channels:
            if (
                ch.width != ref.width
                or ch.height != ref.height
                or ch.res != ref.res
                or ch.phi_offset != ref.phi_offset
            ):
                raise ValueError("all channels must share projection parameters")
        if not self.transforms[self.k_index].is_identity(atol=1e-12):
            raise ValueError("key-frame transform must be identity")

    @property
    def n(self) -> int:
        return len(self.channels)


def build_stack(
    clouds: Sequence[np.ndarray],
    transforms: Sequence[RigidTransform],
    res: AngularResolution,
    w: int,
    h: int,
    phi_offset: float,
    k_index: Optional[int] = None,
    threads: int = 1,
) -> FrameStack:
    """Transform every frame into key-frame coordinates and project it."""
    if len(clouds) != len(transforms):
        raise ValueError("need one transform per cloud")
    if k_index is None:
        k_index = len(clouds) // 2

    def convert(i: int) -> RangeImage:
        return project(transforms[i].apply(clouds[i]), res, w, h, phi_offset)

    channels = ordered_map(convert, range(len(clouds)), threads)
    fractions = [ch.stats.collision_fraction for ch in channels]
    return FrameStack(
        channels=list(channels),
        transforms=list(transforms),
        k_index=k_index,
        collision_fractions=fractions,
    )


# ---------------------------------------------------------------------------
# On-disk formats: IMU CSV and pose files.
# ---------------------------------------------------------------------------

IMU_CSV_HEADER = "t,ax,ay,az,wx,wy,wz"


def load_imu_csv(path) -> List[ImuSample]:
    samples: List[ImuSample] = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != IMU_CSV_HEADER:
            raise DataError(f"{path}: expected header '{IMU_CSV_HEADER}', got '{header}'")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            samples.append(
                ImuSample(t=vals[0], accel=np.array(vals[1:4]), gyro=np.array(vals[4:7]))
            )
    if any(b.t <= a.t for a, b in zip(samples[:-1], samples[1:])):
        raise DataError(f"{path}: sample times must be strictly increasing")
    return samples


def save_imu_csv(path, samples: Sequence[ImuSample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(IMU_CSV_HEADER + "\n")
        for s in samples:
            vals = [s.t, *s.accel, *s.gyro]
            f.write(",".join(repr(float(v)) for v in vals) + "\n")


def load_poses(path) -> List[RigidTransform]:
    poses: List[RigidTransform] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 12:
                raise DataError(f"{path}:{lineno}: expected 12 floats, got {len(parts)}")
            try:
                vals = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            try:
                poses.append(RigidTransform(R=vals[:9].reshape(3, 3), T=vals[9:]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return poses


def save_poses(path, poses: Sequence[RigidTransform]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in poses:
            vals = list(p.R.reshape(9)) + list(p.T)
            f.write(" ".join(repr(float(v)) for v in vals) + "\n")
