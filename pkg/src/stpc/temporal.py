"""Streaming encoder: key-frame planes reused across aligned frames.

Pass 1 grows plane runs on the key channel exactly like the single-frame
encoder; each finalized run is then offered to every other channel with
the plane normal held fixed and only the offset refit (one scalar per
channel instead of three coefficients).  Channels whose refit fails over
the span fall through to pass 2, a per-channel spatial encode of whatever
the temporal pass did not cover.  Pass 3 collects the rest into
per-channel residual maps.  Per channel, the three mechanisms partition
the valid pixels exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import _kernels
from .motion import FrameStack, RigidTransform
from .parallel import ordered_map
from .plane import COND_LIMIT, Plane
from .range_image import (
    DEFAULT_R_MAX,
    AngularResolution,
    DecodeStats,
    RangeImage,
    pixel_ray_grid,
)
from .spatial import (
    EncodedRow,
    PlaneRun,
    ResidualMap,
    TileGrid,
    residual_pixels_for_tiles,
)


@dataclass
class TemporalRun:
    """A key-frame plane run plus per-channel offsets.

    offsets[ch] is the channel's refit offset c' or None where the channel
    failed the span test; offsets[k_index] always equals plane.c.
    """

    row_id: int
    s: int
    length: int
    plane: Plane
    offsets: List[Optional[float]]


@dataclass(eq=False)
class StreamEncoded:
    """Complete encoded form of a frame stack."""

    temporal_runs: List[TemporalRun]
    fallback_rows: List[List[EncodedRow]]  # per channel
    residuals: List[ResidualMap]  # per channel
    transforms: List[RigidTransform]  # frame -> key frame
    valid_masks: np.ndarray  # (n, h, w) bool
    k_index: int
    grid: TileGrid
    res: AngularResolution
    phi_offset: float

    @property
    def n(self) -> int:
        return len(self.transforms)

    def __eq__(self, other):
        if not isinstance(other, StreamEncoded):
            return NotImplemented
        return (
            self.k_index == other.k_index
            and self.grid == other.grid
            and self.res == other.res
            and self.phi_offset == other.phi_offset
            and self.temporal_runs == other.temporal_runs
            and self.fallback_rows == other.fallback_rows
            and self.residuals == other.residuals
            and self.transforms == other.transforms
            and np.array_equal(self.valid_masks, other.valid_masks)
        )


def _expand_tiles(tile_mask: np.ndarray, grid: TileGrid) -> np.ndarray:
    """Tile-level (tiles_y, tiles_x) mask -> pixel-level (h, w) mask."""
    rows = np.repeat(tile_mask, grid.tile_h, axis=0)[: grid.height]
    return np.repeat(rows, grid.tile_w, axis=1)[:, : grid.width]


def temporal_tile_cover(enc_or_runs, grid: TileGrid, n: int, ch: int) -> np.ndarray:
    """Tiles of channel ``ch`` covered by temporal runs with a present offset."""
    runs = enc_or_runs.temporal_runs if isinstance(enc_or_runs, StreamEncoded) else enc_or_runs
    cov = np.zeros((grid.tiles_y, grid.tiles_x), dtype=bool)
    for run in runs:
        if run.offsets[ch] is not None:
            cov[run.row_id, run.s : run.s + run.length] = True
    return cov


def encode_stream(
    stack: FrameStack,
    grid: TileGrid,
    tau: float,
    r_max: float = DEFAULT_R_MAX,
    threads: int = 1,
) -> StreamEncoded:
    """Encode a frame stack into temporal runs, fallback rows and residuals."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    k = stack.k_index
    n = stack.n
    kimg = stack.channels[k]
    if (grid.width, grid.height) != (kimg.width, kimg.height):
        raise ValueError("grid does not match stack dimensions")
    h, w = kimg.height, kimg.width
    dirs = pixel_ray_grid(w, h, kimg.res, kimg.phi_offset)
    ranges = [ch.ranges for ch in stack.channels]
    valids = [ch.valid for ch in stack.channels]
    tiles_x = grid.tiles_x

    # Pass 1: grow runs on the key channel, refit offsets on the others.
    def pass1_row(tr: int):
        v0, v1 = grid.row_bounds(tr)
        run_s = np.zeros(tiles_x, dtype=np.int32)
        run_len = np.zeros(tiles_x, dtype=np.int32)
        run_abc = np.zeros((tiles_x, 3), dtype=np.float64)
        resid = np.zeros(tiles_x, dtype=bool)
        n_runs = _kernels.encode_tile_row(
            ranges[k][v0:v1], valids[k][v0:v1], dirs[v0:v1],
            grid.tile_w, tau, r_max, COND_LIMIT,
            run_s, run_len, run_abc, resid,
        )
        run_s = run_s[:n_runs]
        run_len = run_len[:n_runs]
        run_abc = run_abc[:n_runs]
        channel_fits: Dict[int, tuple] = {}
        for ch in range(n):
            if ch == k or n_runs == 0:
                continue
            ok = np.zeros(n_runs, dtype=bool)
            c_out = np.zeros(n_runs, dtype=np.float64)
            _kernels.refit_spans(
                ranges[ch][v0:v1], valids[ch][v0:v1], dirs[v0:v1],
                grid.tile_w, run_s, run_len, run_abc, tau, r_max, ok, c_out,
            )
            channel_fits[ch] = (ok, c_out)
        return run_s, run_len, run_abc, resid, channel_fits

    pass1 = ordered_map(pass1_row, range(grid.tiles_y), threads)

    temporal_runs: List[TemporalRun] = []
    k_resid_rows: List[np.ndarray] = []
    for tr, (run_s, run_len, run_abc, resid, channel_fits) in enumerate(pass1):
        k_resid_rows.append(resid)
        for j in range(run_s.shape[0]):
            plane = Plane(float(run_abc[j, 0]), float(run_abc[j, 1]), float(run_abc[j, 2]))
            offsets: List[Optional[float]] = [None] * n
            offsets[k] = plane.c
            for ch, (ok, c_out) in channel_fits.items():
                if ok[j]:
                    offsets[ch] = float(c_out[j])
            temporal_runs.append(
                TemporalRun(
                    row_id=tr, s=int(run_s[j]), length=int(run_len[j]),
                    plane=plane, offsets=offsets,
                )
            )

    # Pass 2: spatially encode what the temporal pass left, channel by
    # channel.  The key channel is skipped: its leftover tiles already
    # failed the identical per-tile fit in pass 1 and would fail again.
    remaining: List[Optional[np.ndarray]] = [None] * n
    for ch in range(n):
        if ch == k:
            continue
        cov = temporal_tile_cover(temporal_runs, grid, n, ch)
        remaining[ch] = valids[ch] & ~_expand_tiles(cov, grid)

    p_channels = [ch for ch in range(n) if ch != k]
    jobs = [(ch, tr) for ch in p_channels for tr in range(grid.tiles_y)]

    def pass2_job(job):
        ch, tr = job
        v0, v1 = grid.row_bounds(tr)
        run_s = np.zeros(tiles_x, dtype=np.int32)
        run_len = np.zeros(tiles_x, dtype=np.int32)
        run_abc = np.zeros((tiles_x, 3), dtype=np.float64)
        resid = np.zeros(tiles_x, dtype=bool)
        n_runs = _kernels.encode_tile_row(
            ranges[ch][v0:v1], remaining[ch][v0:v1], dirs[v0:v1],
            grid.tile_w, tau, r_max, COND_LIMIT,
            run_s, run_len, run_abc, resid,
        )
        return run_s[:n_runs].copy(), run_len[:n_runs].copy(), run_abc[:n_runs].copy(), resid

    pass2 = ordered_map(pass2_job, jobs, threads)

    fallback_rows: List[List[EncodedRow]] = [[] for _ in range(n)]
    residuals: List[ResidualMap] = [ResidualMap.empty() for _ in range(n)]

    # Key-channel residual comes straight from pass-1 leftovers.
    us_parts, vs_parts, rr_parts = [], [], []
    for tr, resid in enumerate(k_resid_rows):
        if resid.any():
            us, vs = residual_pixels_for_tiles(valids[k], grid, tr, resid)
            if us.size:
                us_parts.append(us)
                vs_parts.append(vs)
                rr_parts.append(ranges[k][vs, us])
    residuals[k] = (
        ResidualMap(np.concatenate(us_parts), np.concatenate(vs_parts), np.concatenate(rr_parts))
        if us_parts
        else ResidualMap.empty()
    )

    for idx, (ch, tr) in enumerate(jobs):
        run_s, run_len, run_abc, resid = pass2[idx]
        if run_s.size:
            runs = [
                PlaneRun(int(s), int(ln), Plane(float(a), float(b), float(c)))
                for s, ln, (a, b, c) in zip(run_s, run_len, run_abc)
            ]
            fallback_rows[ch].append(EncodedRow(row_id=tr, runs=runs))
    for ch in p_channels:
        us_parts, vs_parts, rr_parts = [], [], []
        for idx, (ch2, tr) in enumerate(jobs):
            if ch2 != ch:
                continue
            resid = pass2[idx][3]
            if resid.any():
                us, vs = residual_pixels_for_tiles(remaining[ch], grid, tr, resid)
                if us.size:
                    us_parts.append(us)
                    vs_parts.append(vs)
                    rr_parts.append(ranges[ch][vs, us])
        residuals[ch] = (
            ResidualMap(np.concatenate(us_parts), np.concatenate(vs_parts), np.concatenate(rr_parts))
            if us_parts
            else ResidualMap.empty()
        )

    enc = StreamEncoded(
        temporal_runs=temporal_runs,
        fallback_rows=fallback_rows,
        residuals=residuals,
        transforms=list(stack.transforms),
        valid_masks=np.stack(valids),
        k_index=k,
        grid=grid,
        res=kimg.res,
        phi_offset=kimg.phi_offset,
    )
    counts = coverage_counts(enc)
    for ch, c in enumerate(counts):
        total = c["temporal"] + c["fallback"] + c["residual"]
        if total != c["valid"]:
            raise AssertionError(
                f"channel {ch}: coverage partition broken "
                f"({c['temporal']}+{c['fallback']}+{c['residual']} != {c['valid']})"
            )
    return enc


def coverage_counts(enc: StreamEncoded) -> List[Dict[str, int]]:
    """Per-channel pixel counts by mechanism; the three must sum to valid."""
    grid = enc.grid
    out = []
    for ch in range(enc.n):
        valid = enc.valid_masks[ch]
        t_cov = _expand_tiles(temporal_tile_cover(enc, grid, enc.n, ch), grid)
        temporal_px = int(np.count_nonzero(t_cov & valid))
        fb_tiles = np.zeros((grid.tiles_y, grid.tiles_x), dtype=bool)
        for row in enc.fallback_rows[ch]:
            for run in row.runs:
                fb_tiles[row.row_id, run.s : run.s + run.length] = True
        fallback_px = int(np.count_nonzero(_expand_tiles(fb_tiles, grid) & valid & ~t_cov))
        out.append(
            {
                "temporal": temporal_px,
                "fallback": fallback_px,
                "residual": len(enc.residuals[ch]),
                "valid": int(np.count_nonzero(valid)),
            }
        )
    return out


def decode_stream_images(
    enc: StreamEncoded, r_max: float = DEFAULT_R_MAX
) -> List[RangeImage]:
    """Rebuild every channel's range image in key-frame coordinates."""
    grid = enc.grid
    h, w = grid.height, grid.width
    dirs = pixel_ray_grid(w, h, enc.res, enc.phi_offset)
    images: List[RangeImage] = []
    for ch in range(enc.n):
        valid = enc.valid_masks[ch]
        rng_out = np.zeros((h, w), dtype=np.float64)
        msk_out = np.zeros((h, w), dtype=bool)
        failed = 0
        t_cov = _expand_tiles(temporal_tile_cover(enc, grid, enc.n, ch), grid)
        for run in enc.temporal_runs:
            c_ch = run.offsets[ch]
            if c_ch is None:
                continue
            v0, v1 = grid.row_bounds(run.row_id)
            u0 = run.s * grid.tile_w
            u1 = min((run.s + run.length) * grid.tile_w, w)
            allowed = np.ascontiguousarray(valid[v0:v1, u0:u1])
            failed += _kernels.reconstruct_span(
                rng_out, msk_out, allowed, dirs, v0, u0, u1,
                run.plane.a, run.plane.b, c_ch, r_max,
            )
        remaining = valid & ~t_cov
        for row in enc.fallback_rows[ch]:
            v0, v1 = grid.row_bounds(row.row_id)
            for run in row.runs:
                u0 = run.s * grid.tile_w
                u1 = min((run.s + run.length) * grid.tile_w, w)
                allowed = np.ascontiguousarray(remaining[v0:v1, u0:u1])
                failed += _kernels.reconstruct_span(
                    rng_out, msk_out, allowed, dirs, v0, u0, u1,
                    run.plane.a, run.plane.b, run.plane.c, r_max,
                )
        resid = enc.residuals[ch]
        if len(resid):
            rng_out[resid.vs, resid.us] = resid.ranges
            msk_out[resid.vs, resid.us] = True
        images.append(
            RangeImage(
                ranges=rng_out,
                valid=msk_out,
                res=enc.res,
                phi_offset=enc.phi_offset,
                stats=DecodeStats(failed_reconstructions=failed),
            )
        )
    return images


def decode_stream(enc: StreamEncoded, r_max: float = DEFAULT_R_MAX) -> List[np.ndarray]:
    """Decode to one point cloud per frame, back in each frame's own coordinates."""
    from .range_image import unproject

    clouds = []
    for ch, img in enumerate(decode_stream_images(enc, r_max)):
        pts = unproject(img)
        clouds.append(enc.transforms[ch].inverse().apply(pts))
    return clouds
