"""Single-frame spatial encoding: per-row plane runs plus a residual map.

The range image is cut into fixed tiles (4x4 by default).  Within each
tile-row the encoder fits a plane to the first fittable tile and grows the
run one tile at a time to the right, refitting on the whole union at every
step and keeping the extension only while every valid pixel still
reconstructs within tau.  Tiles that cannot start a run keep their raw
range values in the residual map.  Every valid pixel ends up in exactly
one of the two representations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels
from .parallel import ordered_map
from .plane import COND_LIMIT, Plane
from .range_image import (
    DEFAULT_R_MAX,
    AngularResolution,
    DecodeStats,
    RangeImage,
    pixel_ray_grid,
)


@dataclass(frozen=True)
class TileGrid:
    """Fixed tiling of a w x h image; edge tiles may be partial."""

    tile_w: int
    tile_h: int
    width: int
    height: int

    def __post_init__(self):
        if min(self.tile_w, self.tile_h, self.width, self.height) < 1:
            raise ValueError("tile and image dimensions must be >= 1")

    @classmethod
    def for_image(cls, width: int, height: int, tile_w: int = 4, tile_h: int = 4):
        return cls(tile_w=tile_w, tile_h=tile_h, width=width, height=height)

    @property
    def tiles_x(self) -> int:
        return -(-self.width // self.tile_w)

    @property
    def tiles_y(self) -> int:
        return -(-self.height // self.tile_h)

    def row_bounds(self, tr: int):
        v0 = tr * self.tile_h
        return v0, min(v0 + self.tile_h, self.height)


@dataclass(frozen=True)
class PlaneRun:
    """Tiles [s, s+length) of one tile-row encoded by a single plane."""

    s: int
    length: int
    plane: Plane

    def __post_init__(self):
        if self.length < 1 or self.s < 0:
            raise ValueError("run must cover at least one tile")


@dataclass
class EncodedRow:
    row_id: int
    runs: List[PlaneRun] = field(default_factory=list)


class ResidualMap:
    """Sparse (u, v) -> raw range store for pixels no plane could encode.

    Pixels are kept sorted by (v, u); only valid pixels of unfit tiles
    belong here.
    """

    def __init__(self, us=None, vs=None, ranges=None):
        self.us = np.asarray(us if us is not None else [], dtype=np.int64)
        self.vs = np.asarray(vs if vs is not None else [], dtype=np.int64)
        self.ranges = np.asarray(ranges if ranges is not None else [], dtype=np.float64)
        if not (self.us.shape == self.vs.shape == self.ranges.shape):
            raise ValueError("residual arrays must have matching lengths")

    @classmethod
    def empty(cls):
        return cls()

    def __len__(self) -> int:
        return self.us.shape[0]

    def items(self):
        for u, v, r in zip(self.us, self.vs, self.ranges):
            yield (int(u), int(v)), float(r)

    def get(self, u: int, v: int, default=None):
        hit = np.nonzero((self.us == u) & (self.vs == v))[0]
        return float(self.ranges[hit[0]]) if hit.size else default

    def __eq__(self, other):
        if not isinstance(other, ResidualMap):
            return NotImplemented
        return (
            np.array_equal(self.us, other.us)
            and np.array_equal(self.vs, other.vs)
            and np.array_equal(self.ranges, other.ranges)
        )


def encode_rows_raw(
    ranges: np.ndarray,
    valid: np.ndarray,
    dirs: np.ndarray,
    grid: TileGrid,
    tau: float,
    r_max: float = DEFAULT_R_MAX,
    threads: int = 1,
):
    """Run the growth kernel over every tile-row.

    Returns one (s, length, abc, resid_tiles) tuple per tile-row, in row
    order regardless of thread count.  Shared by the single-frame encoder
    and both temporal passes.
    """
    tiles_x = grid.tiles_x

    def encode_one(tr: int):
        v0, v1 = grid.row_bounds(tr)
        run_s = np.zeros(tiles_x, dtype=np.int32)
        run_len = np.zeros(tiles_x, dtype=np.int32)
        run_abc = np.zeros((tiles_x, 3), dtype=np.float64)
        resid = np.zeros(tiles_x, dtype=bool)
        n = _kernels.encode_tile_row(
            ranges[v0:v1],
            valid[v0:v1],
            dirs[v0:v1],
            grid.tile_w,
            tau,
            r_max,
            COND_LIMIT,
            run_s,
            run_len,
            run_abc,
            resid,
        )
        return run_s[:n].copy(), run_len[:n].copy(), run_abc[:n].copy(), resid

    return ordered_map(encode_one, range(grid.tiles_y), threads)


def residual_pixels_for_tiles(
    valid: np.ndarray, grid: TileGrid, tr: int, resid_tiles: np.ndarray
):
    """(us, vs, ranges-index coords) of valid pixels inside flagged tiles."""
    v0, v1 = grid.row_bounds(tr)
    col_mask = np.repeat(resid_tiles, grid.tile_w)[: grid.width]
    pix = valid[v0:v1] & col_mask[None, :]
    vs, us = np.nonzero(pix)
    return us, vs + v0


def encode_spatial(
    img: RangeImage,
    grid: TileGrid,
    tau: float,
    r_max: float = DEFAULT_R_MAX,
    threads: int = 1,
):
    """Encode a range image into plane runs plus a residual map."""
    if (grid.width, grid.height) != (img.width, img.height):
        raise ValueError("grid does not match image dimensions")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    dirs = pixel_ray_grid(img.width, img.height, img.res, img.phi_offset)
    per_row = encode_rows_raw(img.ranges, img.valid, dirs, grid, tau, r_max, threads)

    rows: List[EncodedRow] = []
    res_us: List[np.ndarray] = []
    res_vs: List[np.ndarray] = []
    res_rr: List[np.ndarray] = []
    for tr, (s_arr, len_arr, abc, resid_tiles) in enumerate(per_row):
        if s_arr.size:
            runs = [
                PlaneRun(int(s), int(ln), Plane(float(a), float(b), float(c)))
                for s, ln, (a, b, c) in zip(s_arr, len_arr, abc)
            ]
            rows.append(EncodedRow(row_id=tr, runs=runs))
        if resid_tiles.any():
            us, vs = residual_pixels_for_tiles(img.valid, grid, tr, resid_tiles)
            if us.size:
                res_us.append(us)
                res_vs.append(vs)
                res_rr.append(img.ranges[vs, us])

    if res_us:
        residual = ResidualMap(
            np.concatenate(res_us), np.concatenate(res_vs), np.concatenate(res_rr)
        )
    else:
        residual = ResidualMap.empty()
    return rows, residual


def decode_spatial(
    rows: Sequence[EncodedRow],
    residual: ResidualMap,
    grid: TileGrid,
    res: AngularResolution,
    phi_offset: float,
    w: int,
    h: int,
    valid_mask: Optional[np.ndarray] = None,
    r_max: float = DEFAULT_R_MAX,
) -> RangeImage:
    """Rebuild a range image from plane runs and residual pixels.

    Run-covered pixels are ray-cast against their plane; residual pixels
    take their stored values; everything else stays invalid.  When the
    original validity mask is known it restricts reconstruction to pixels
    that actually held a return (without it, whole run spans are filled).
    Reconstruction failures leave their pixel invalid and are counted in
    the returned image's stats.
    """
    rng_out = np.zeros((h, w), dtype=np.float64)
    msk_out = np.zeros((h, w), dtype=bool)
    dirs = pixel_ray_grid(w, h, res, phi_offset)
    failed = 0
    for row in rows:
        v0, v1 = grid.row_bounds(row.row_id)
        for run in row.runs:
            u0 = run.s * grid.tile_w
            u1 = min((run.s + run.length) * grid.tile_w, w)
            if valid_mask is not None:
                allowed = np.ascontiguousarray(valid_mask[v0:v1, u0:u1])
            else:
                allowed = np.ones((v1 - v0, u1 - u0), dtype=bool)
            failed += _kernels.reconstruct_span(
                rng_out, msk_out, allowed, dirs, v0, u0, u1,
                run.plane.a, run.plane.b, run.plane.c, r_max,
            )
    if len(residual):
        rng_out[residual.vs, residual.us] = residual.ranges
        msk_out[residual.vs, residual.us] = True
    return RangeImage(
        ranges=rng_out,
        valid=msk_out,
        res=res,
        phi_offset=phi_offset,
        stats=DecodeStats(failed_reconstructions=failed),
    )
