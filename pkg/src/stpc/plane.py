"""Plane fitting and testing against range-image pixels.

Planes use the form x + a*y + b*z - c = 0, so (1, a, b) is the (unnormalized)
normal and |c| / sqrt(1 + a^2 + b^2) the distance from the sensor to the
plane.  Planes whose true normal has a vanishing x component cannot be
written this way; the fit detects them through a condition estimate on the
normal matrix and reports DegenerateFitError so callers can fall back to
residual coding.

The fit residual used throughout is the range-direction error |r - r_hat|
along each sample's pixel ray, i.e. exactly the error a decoder will
reproduce, which makes the fit threshold a hard reconstruction bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateFitError, InsufficientSamplesError
from .range_image import DEFAULT_R_MAX, PixelRay

# Condition-estimate ceiling for the 3x3 normal matrix.
COND_LIMIT = 1e8


@dataclass(frozen=True)
class Plane:
    """Coefficients of x + a*y + b*z - c = 0."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b) and np.isfinite(self.c)):
            raise ValueError("plane coefficients must be finite")

    @property
    def normal(self) -> np.ndarray:
        return np.array([1.0, self.a, self.b])

    def distance_to_origin(self) -> float:
        return abs(self.c) / float(np.sqrt(1.0 + self.a**2 + self.b**2))


@dataclass(frozen=True)
class FitResult:
    plane: Plane
    max_residual: float
    fitted: bool


def _sample_arrays(samples):
    """Normalize samples to (dirs (N,3), ranges (N,)) float64 arrays.

    Accepts a (dirs, ranges) array pair or an iterable of
    (PixelRay-or-vector, range) tuples.
    """
    if (
        isinstance(samples, tuple)
        and len(samples) == 2
        and isinstance(samples[0], np.ndarray)
        and np.ndim(samples[1]) == 1
    ):
        dirs = np.asarray(samples[0], dtype=np.float64)
        ranges = np.asarray(samples[1], dtype=np.float64)
    else:
        dir_list = []
        rng_list = []
        for ray, r in samples:
            d = ray.direction if isinstance(ray, PixelRay) else np.asarray(ray)
            dir_list.append(np.asarray(d, dtype=np.float64))
            rng_list.append(float(r))
        dirs = (
            np.array(dir_list, dtype=np.float64)
            if dir_list
            else np.zeros((0, 3), dtype=np.float64)
        )
        ranges = np.array(rng_list, dtype=np.float64)
    if dirs.shape != (ranges.shape[0], 3):
        raise ValueError("samples must pair 3-vector directions with scalar ranges")
    return dirs, ranges


def fit_plane(samples) -> Plane:
    """Closed-form least squares over sum (x + a*y + b*z - c)^2.

    Samples are canonically ordered (lexicographic on direction then range)
    before the left-to-right moment accumulation, so any permutation of the
    same samples produces bit-identical coefficients.

    Raises InsufficientSamplesError below 3 samples and DegenerateFitError
    when the normal matrix is singular or has condition estimate > 1e8
    (collinear points, or planes with no x normal component).
    """
    dirs, ranges = _sample_arrays(samples)
    if ranges.shape[0] < 3:
        raise InsufficientSamplesError(f"need >= 3 samples, got {ranges.shape[0]}")
    order = np.lexsort((ranges, dirs[:, 2], dirs[:, 1], dirs[:, 0]))
    dirs = np.ascontiguousarray(dirs[order])
    ranges = np.ascontiguousarray(ranges[order])
    sums = _kernels.accumulate_moments(dirs[:, 0], dirs[:, 1], dirs[:, 2], ranges)
    a, b, c, ok = _kernels.plane_from_sums(*sums, COND_LIMIT)
    if not ok:
        raise DegenerateFitError("singular or ill-conditioned normal matrix")
    return Plane(float(a), float(b), float(c))


def predicted_ranges(plane: Plane, dirs: np.ndarray) -> np.ndarray:
    """Ray/plane intersection ranges; inf where the ray is parallel."""
    den = dirs[:, 0] + plane.a * dirs[:, 1] + plane.b * dirs[:, 2]
    out = np.full(den.shape, np.inf)
    ok = np.abs(den) >= _kernels.PARALLEL_EPS
    out[ok] = plane.c / den[ok]
    return out


def test_plane(plane: Plane, samples, tau: float, r_max: float = DEFAULT_R_MAX) -> FitResult:
    """Test every sample's range-direction residual against tau.

    A sample whose ray is parallel to the plane, or whose reconstruction
    falls outside (0, r_max], counts as an infinite residual (fails the
    test) rather than an error.  An empty sample set passes vacuously.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    dirs, ranges = _sample_arrays(samples)
    if ranges.shape[0] == 0:
        return FitResult(plane=plane, max_residual=0.0, fitted=True)
    r_hat = predicted_ranges(plane, dirs)
    usable = np.isfinite(r_hat) & (r_hat > 0.0) & (r_hat <= r_max)
    resid = np.where(usable, np.abs(ranges - r_hat), np.inf)
    max_residual = float(np.max(resid))
    return FitResult(plane=plane, max_residual=max_residual, fitted=bool(max_residual <= tau))


def refit_offset(plane: Plane, samples, tau: float, r_max: float = DEFAULT_R_MAX):
    """Re-fit only the plane offset, holding the normal (1, a, b) fixed.

    Returns (c_prime, fitted) where c_prime is the least-squares offset
    mean(r_i * (d_i . n)) and fitted reports whether the shifted plane
    passes tau on all samples.
    """
    dirs, ranges = _sample_arrays(samples)
    if ranges.shape[0] == 0:
        raise InsufficientSamplesError("offset refit needs at least one sample")
    den = dirs[:, 0] + plane.a * dirs[:, 1] + plane.b * dirs[:, 2]
    c_prime = float(np.mean(ranges * den))
    result = test_plane(Plane(plane.a, plane.b, c_prime), (dirs, ranges), tau, r_max)
    return c_prime, result.fitted
