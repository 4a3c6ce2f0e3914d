"""Spherical projection between point clouds and range images.

A point cloud here is a plain ``(N, 3)`` float64 array of Cartesian
coordinates in meters, LiDAR-centered.  The range image stores one range
sample per (azimuth, polar) cell:

    r     = sqrt(x^2 + y^2 + z^2)
    theta = atan2(x, y)  wrapped to [0, 2*pi)   -> column u = floor(theta / theta_r) mod w
    phi   = arccos(z / r)                       -> row    v = floor((phi - phi_offset) / phi_r)

Rows outside [0, h) are dropped (clamping would corrupt plane geometry).
When several points land in one pixel the smallest range wins, which makes
the projection independent of point order.  Invalid pixels store range 0
with valid=False, the usual no-return convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import BehindSensorError, NoIntersectionError, RangeExceededError

# 64-beam style defaults: 0.2 deg horizontal (1800 columns for a full scan),
# 0.4 deg vertical, first row at polar angle 1.48 rad.
DEFAULT_THETA_R = 2.0 * np.pi / 1800.0
DEFAULT_PHI_R = 0.00698
DEFAULT_PHI_OFFSET = 1.48

# Sanity cap for ray/plane reconstructions (rejects near-parallel blowups).
DEFAULT_R_MAX = 200.0

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class AngularResolution:
    """Horizontal/vertical angular step per pixel, radians."""

    theta_r: float = DEFAULT_THETA_R
    phi_r: float = DEFAULT_PHI_R

    def __post_init__(self):
        if not (self.theta_r > 0.0 and self.phi_r > 0.0):
            raise ValueError("angular resolutions must be positive")


@dataclass(frozen=True)
class PixelRay:
    """Unit direction through a pixel center."""

    direction: np.ndarray  # (3,) float64, unit norm


@dataclass(frozen=True)
class ProjectionStats:
    """Bookkeeping from one projection pass."""

    total_points: int = 0
    rejected_nonfinite: int = 0
    dropped_fov: int = 0
    collisions: int = 0

    @property
    def collision_fraction(self) -> float:
        kept = self.total_points - self.rejected_nonfinite - self.dropped_fov
        return self.collisions / kept if kept > 0 else 0.0


@dataclass(frozen=True)
class DecodeStats:
    """Diagnostics from plane-based range reconstruction."""

    failed_reconstructions: int = 0


@dataclass(frozen=True, eq=False)
class RangeImage:
    """W x H grid of range samples with a validity mask."""

    ranges: np.ndarray  # (h, w) float64, 0.0 where invalid
    valid: np.ndarray  # (h, w) bool
    res: AngularResolution
    phi_offset: float
    stats: Optional[object] = field(default=None, compare=False)

    def __post_init__(self):
        if self.ranges.shape != self.valid.shape or self.ranges.ndim != 2:
            raise ValueError("ranges/valid must be matching 2-D arrays")

    @property
    def height(self) -> int:
        return self.ranges.shape[0]

    @property
    def width(self) -> int:
        return self.ranges.shape[1]

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    def is_full_scan(self) -> bool:
        return self.width == int(round(TWO_PI / self.res.theta_r))

    def __eq__(self, other) -> bool:
        if not isinstance(other, RangeImage):
            return NotImplemented
        return (
            self.res == other.res
            and self.phi_offset == other.phi_offset
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.ranges, other.ranges)
        )


def empty_image(w: int, h: int, res: AngularResolution, phi_offset: float) -> RangeImage:
    return RangeImage(
        ranges=np.zeros((h, w), dtype=np.float64),
        valid=np.zeros((h, w), dtype=bool),
        res=res,
        phi_offset=phi_offset,
    )


_RAY_GRID_CACHE: dict = {}


def pixel_ray_grid(w: int, h: int, res: AngularResolution, phi_offset: float) -> np.ndarray:
    """Unit directions through all pixel centers, shape (h, w, 3), read-only.

    Cached per (w, h, res, phi_offset); the arrays are a few MB at scan
    resolution and are reused by encoder, decoder and tests.
    """
    key = (w, h, res.theta_r, res.phi_r, phi_offset)
    grid = _RAY_GRID_CACHE.get(key)
    if grid is None:
        theta = (np.arange(w, dtype=np.float64) + 0.5) * res.theta_r
        phi = phi_offset + (np.arange(h, dtype=np.float64) + 0.5) * res.phi_r
        sin_phi = np.sin(phi)[:, None]
        grid = np.empty((h, w, 3), dtype=np.float64)
        grid[:, :, 0] = sin_phi * np.sin(theta)[None, :]
        grid[:, :, 1] = sin_phi * np.cos(theta)[None, :]
        grid[:, :, 2] = np.repeat(np.cos(phi)[:, None], w, axis=1)
        grid.setflags(write=False)
        if len(_RAY_GRID_CACHE) > 16:
            _RAY_GRID_CACHE.clear()
        _RAY_GRID_CACHE[key] = grid
    return grid


def pixel_ray(u: int, v: int, res: AngularResolution, phi_offset: float) -> PixelRay:
    """Unit direction through the center of pixel (u, v)."""
    theta = (u + 0.5) * res.theta_r
    phi = phi_offset + (v + 0.5) * res.phi_r
    sp = np.sin(phi)
    return PixelRay(
        direction=np.array([sp * np.sin(theta), sp * np.cos(theta), np.cos(phi)])
    )


def project(
    cloud: np.ndarray,
    res: AngularResolution,
    w: int,
    h: int,
    phi_offset: float,
    return_indices: bool = False,
):
    """Project a point cloud into a (h, w) range image.

    Non-finite or zero-norm points are rejected and counted; points whose
    polar row falls outside [0, h) are dropped and counted.  Pixel
    collisions keep the nearest point.  With ``return_indices`` the index
    of the winning source point per pixel is returned as well (-1 where
    invalid).

    Returns a RangeImage (stats attached), plus the index map if requested.
    """
    if w < 1 or h < 1:
        raise ValueError("image dimensions must be >= 1")
    pts = np.ascontiguousarray(np.asarray(cloud, dtype=np.float64))
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("cloud must be an (N, 3) array")
    total = pts.shape[0]

    best = np.full(h * w, np.inf, dtype=np.float64)
    win = np.full(h * w, -1, dtype=np.int64)
    rejected, dropped, kept = _kernels.project_kernel(
        pts, res.theta_r, res.phi_r, phi_offset, w, h, best, win
    )

    img_m = np.isfinite(best).reshape(h, w)
    img_r = np.where(img_m.reshape(-1), best, 0.0).reshape(h, w)
    collisions = kept - int(np.count_nonzero(img_m))

    stats = ProjectionStats(
        total_points=total,
        rejected_nonfinite=int(rejected),
        dropped_fov=int(dropped),
        collisions=int(collisions),
    )
    img = RangeImage(ranges=img_r, valid=img_m, res=res, phi_offset=phi_offset, stats=stats)
    if return_indices:
        return img, win.reshape(h, w)
    return img


def unproject(img: RangeImage) -> np.ndarray:
    """One point per valid pixel, at range * pixel-center direction.

    Points come out in row-major pixel order.
    """
    grid = pixel_ray_grid(img.width, img.height, img.res, img.phi_offset)
    m = img.valid
    return img.ranges[m, None] * grid[m]


def reconstruct_from_plane(
    plane,
    u: int,
    v: int,
    res: AngularResolution,
    phi_offset: float,
    r_max: float = DEFAULT_R_MAX,
) -> float:
    """Range at which the pixel (u, v) center ray meets the plane.

    The plane is x + a*y + b*z - c = 0; the returned range satisfies that
    equation at the reconstructed point.  Raises NoIntersectionError for
    near-parallel rays, BehindSensorError for negative ranges, and
    RangeExceededError beyond the sanity cap.
    """
    d = pixel_ray(u, v, res, phi_offset).direction
    den = d[0] + plane.a * d[1] + plane.b * d[2]
    if abs(den) < 1e-12:
        raise NoIntersectionError(f"pixel ({u},{v}) ray parallel to plane")
    r_hat = plane.c / den
    if r_hat <= 0.0:
        raise BehindSensorError(f"pixel ({u},{v}) intersection behind sensor")
    if r_hat > r_max:
        raise RangeExceededError(f"pixel ({u},{v}) range {r_hat:.1f} beyond cap {r_max}")
    return float(r_hat)
