import numpy as np
import pytest

from stpc.range_image import RangeImage, pixel_ray_grid
from stpc.spatial import (
    EncodedRow,
    PlaneRun,
    ResidualMap,
    TileGrid,
    decode_spatial,
    encode_spatial,
)
from stpc.plane import Plane

from conftest import analytic_plane_image, sector_res


def _grid(img, tw=4, th=4):
    return TileGrid.for_image(img.width, img.height, tw, th)


def _noise_image(rng, w=40, h=12):
    res = sector_res(w, h)
    ranges = rng.uniform(2.0, 60.0, (h, w))
    return RangeImage(
        ranges=ranges, valid=np.ones((h, w), dtype=bool), res=res, phi_offset=1.3
    )


def two_wall_corner_image(w=96, h=16):
    """Two fittable walls meeting in a seam; returns (image, per-pixel
    analytic seam column, plane tuple list)."""
    res = sector_res(w, h, az_span=1.2, el_span=0.4)
    off = 1.35
    dirs = pixel_ray_grid(w, h, res, off)
    planes = [(0.55, 0.1, 7.0), (-0.55, 0.05, 4.0)]
    rs = []
    for a, b, c in planes:
        den = dirs[..., 0] + a * dirs[..., 1] + b * dirs[..., 2]
        with np.errstate(divide="ignore"):
            r = np.where(np.abs(den) > 1e-12, c / den, np.inf)
        rs.append(np.where(r > 0, r, np.inf))
    r_all = np.minimum(rs[0], rs[1])
    valid = np.isfinite(r_all) & (r_all < 120.0)
    img = RangeImage(
        ranges=np.where(valid, r_all, 0.0), valid=valid, res=res, phi_offset=off
    )
    which = (rs[1] < rs[0]).astype(int)
    return img, which, planes


def test_single_plane_rows_become_single_runs():
    img = analytic_plane_image(0.25, 0.35, 8.0, 64, 16, sector_res(64, 16), 1.3)
    assert img.valid.all()
    grid = _grid(img)
    rows, residual = encode_spatial(img, grid, tau=0.02)
    assert len(residual) == 0
    assert len(rows) == grid.tiles_y
    for row in rows:
        assert len(row.runs) == 1
        assert row.runs[0].s == 0
        assert row.runs[0].length == grid.tiles_x


def test_unfittable_noise_goes_all_residual(rng):
    img = _noise_image(rng)
    rows, residual = encode_spatial(img, _grid(img), tau=1e-6)
    assert rows == []
    assert len(residual) == img.valid_count


def test_corner_seam_boundaries_and_decode_error():
    img, which, planes = two_wall_corner_image()
    grid = _grid(img)
    tau = 0.02
    rows, residual = encode_spatial(img, grid, tau=tau)
    # Seam column per pixel row; boundaries of runs should land within one
    # tile of it.
    for row in rows:
        v0, v1 = grid.row_bounds(row.row_id)
        seam_cols = [np.argmax(which[v]) for v in range(v0, v1) if which[v].any()]
        if not seam_cols:
            continue
        seam_lo = min(seam_cols) // grid.tile_w
        seam_hi = max(seam_cols) // grid.tile_w
        for run in row.runs:
            end_tile = run.s + run.length - 1
            # Either the run stays on one side of the seam or it ends
            # within one tile of it.
            assert (
                end_tile <= seam_hi + 1 or run.s >= seam_lo - 1
            ), (row.row_id, run.s, run.length, seam_lo, seam_hi)
    dec = decode_spatial(
        rows, residual, grid, img.res, img.phi_offset, img.width, img.height,
        valid_mask=img.valid,
    )
    assert np.array_equal(dec.valid, img.valid)
    err = np.abs(dec.ranges[img.valid] - img.ranges[img.valid])
    assert err.max() <= tau


def test_coverage_partition_random_scenes(rng):
    for trial in range(10):
        img = analytic_plane_image(
            rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(4, 30),
            48, 12, sector_res(48, 12), 1.3, jitter=0.6, rng=rng,
        )
        # Punch invalid holes and a noise block.
        holes = rng.random(img.ranges.shape) < 0.1
        img.valid[holes] = False
        img.ranges[holes] = 0.0
        img.ranges[4:8, 8:16] = rng.uniform(1, 50, (4, 8))
        grid = _grid(img)
        rows, residual = encode_spatial(img, grid, tau=0.02)
        run_px = np.zeros(img.ranges.shape, dtype=bool)
        for row in rows:
            v0, v1 = grid.row_bounds(row.row_id)
            for run in row.runs:
                u0 = run.s * grid.tile_w
                u1 = min((run.s + run.length) * grid.tile_w, img.width)
                run_px[v0:v1, u0:u1] = True
        res_px = np.zeros_like(run_px)
        res_px[residual.vs, residual.us] = True
        # every valid pixel in exactly one mechanism, nothing invalid covered
        assert np.array_equal((run_px & img.valid) | res_px, img.valid)
        assert not np.any(res_px & run_px)


def test_residual_pixels_disjoint_from_runs(rng):
    img = _noise_image(rng, 32, 8)
    img.ranges[:4, :16] = analytic_plane_image(
        0.2, 0.1, 6.0, 16, 4, img.res, img.phi_offset
    ).ranges
    grid = _grid(img)
    rows, residual = encode_spatial(img, grid, tau=0.05)
    run_tiles = set()
    for row in rows:
        for run in row.runs:
            for t in range(run.s, run.s + run.length):
                run_tiles.add((row.row_id, t))
    for (u, v), _ in residual.items():
        assert (v // grid.tile_h, u // grid.tile_w) not in run_tiles


def test_decode_empty_is_all_invalid():
    res = sector_res(20, 8)
    dec = decode_spatial([], ResidualMap.empty(), TileGrid.for_image(20, 8), res, 1.3, 20, 8)
    assert not dec.valid.any()


def test_decode_single_run_exact():
    img = analytic_plane_image(0.25, 0.35, 8.0, 32, 4, sector_res(32, 4), 1.3)
    grid = _grid(img)
    rows, residual = encode_spatial(img, grid, tau=0.01)
    assert len(residual) == 0 and len(rows) == 1 and len(rows[0].runs) == 1
    dec = decode_spatial(
        rows, residual, grid, img.res, img.phi_offset, 32, 4, valid_mask=img.valid
    )
    np.testing.assert_allclose(dec.ranges, img.ranges, atol=1e-6)


def test_decode_respects_valid_mask():
    img = analytic_plane_image(0.25, 0.35, 8.0, 32, 8, sector_res(32, 8), 1.3)
    img.valid[2, 5] = False
    img.ranges[2, 5] = 0.0
    grid = _grid(img)
    rows, residual = encode_spatial(img, grid, tau=0.02)
    dec = decode_spatial(
        rows, residual, grid, img.res, img.phi_offset, 32, 8, valid_mask=img.valid
    )
    assert not dec.valid[2, 5]
    assert np.array_equal(dec.valid, img.valid)
    # Without the mask the whole span is painted.
    dec_nomask = decode_spatial(rows, residual, grid, img.res, img.phi_offset, 32, 8)
    assert dec_nomask.valid[2, 5]


def test_decode_counts_failed_reconstructions():
    # A plane behind the sensor cannot be reconstructed: covered pixels
    # stay invalid and the diagnostics counter reports every failure.
    res = sector_res(16, 4)
    grid = TileGrid.for_image(16, 4)
    rows = [EncodedRow(row_id=0, runs=[PlaneRun(0, 2, Plane(0.0, 0.0, -5.0))])]
    dec = decode_spatial(rows, ResidualMap.empty(), grid, res, 1.3, 16, 4)
    assert not dec.valid.any()
    assert dec.stats.failed_reconstructions == 4 * 8  # tile_h x span width


def test_monotone_error_bound_in_tau(rng):
    img = analytic_plane_image(
        0.3, -0.2, 10.0, 48, 12, sector_res(48, 12), 1.3, jitter=0.8, rng=rng
    )
    prev_resid_count = -1
    for tau in [0.05, 0.01, 0.002, 1e-9]:
        rows, residual = encode_spatial(img, _grid(img), tau=tau)
        dec = decode_spatial(
            rows, residual, _grid(img), img.res, img.phi_offset, 48, 12,
            valid_mask=img.valid,
        )
        run_px = dec.valid & ~_residual_mask(residual, img)
        err = np.abs(dec.ranges - img.ranges)[run_px]
        if err.size:
            assert err.max() <= tau
        # tau -> 0 degenerates toward all-residual
        assert len(residual) >= prev_resid_count or prev_resid_count < 0
        prev_resid_count = len(residual)
    assert prev_resid_count == img.valid_count


def _residual_mask(residual, img):
    m = np.zeros(img.ranges.shape, dtype=bool)
    if len(residual):
        m[residual.vs, residual.us] = True
    return m


def test_threads_do_not_change_output(rng):
    img = analytic_plane_image(
        0.3, -0.2, 10.0, 96, 24, sector_res(96, 24), 1.3, jitter=0.8, rng=rng
    )
    grid = _grid(img)
    base = encode_spatial(img, grid, tau=0.02, threads=1)
    for th in (2, 4):
        rows, residual = encode_spatial(img, grid, tau=0.02, threads=th)
        assert rows == base[0]
        assert residual == base[1]


def test_partial_edge_tiles_participate():
    # w = 10 with tile_w = 4 leaves a 2-wide edge tile; it still encodes.
    img = analytic_plane_image(0.25, 0.35, 8.0, 10, 6, sector_res(10, 6), 1.3)
    grid = TileGrid.for_image(10, 6, 4, 4)
    assert grid.tiles_x == 3
    rows, residual = encode_spatial(img, grid, tau=0.02)
    assert len(residual) == 0
    assert rows[0].runs[0].length == 3


def test_runs_stay_within_their_tile_row(rng):
    img = analytic_plane_image(
        0.3, -0.2, 10.0, 64, 16, sector_res(64, 16), 1.3, jitter=0.5, rng=rng
    )
    grid = _grid(img)
    rows, _ = encode_spatial(img, grid, tau=0.02)
    seen = set()
    for row in rows:
        assert 0 <= row.row_id < grid.tiles_y
        assert row.row_id not in seen
        seen.add(row.row_id)
        prev_end = 0
        for run in row.runs:
            assert run.s >= prev_end  # sorted and disjoint within the row
            prev_end = run.s + run.length
            assert prev_end <= grid.tiles_x


def test_grid_validation():
    with pytest.raises(ValueError):
        TileGrid.for_image(0, 5)
    img = analytic_plane_image(0.25, 0.35, 8.0, 10, 6, sector_res(10, 6), 1.3)
    with pytest.raises(ValueError):
        encode_spatial(img, TileGrid.for_image(12, 6), tau=0.02)
    with pytest.raises(ValueError):
        encode_spatial(img, TileGrid.for_image(10, 6), tau=-1.0)


def test_plane_run_validation():
    with pytest.raises(ValueError):
        PlaneRun(0, 0, Plane(0.0, 0.0, 5.0))
