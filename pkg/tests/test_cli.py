import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import stpc
from stpc.cli import main
from stpc.errors import DataError
from stpc.io_formats import (
    read_kitti_bin,
    read_ply_ascii,
    write_kitti_bin,
    write_ply_ascii,
)
from stpc.motion import RigidTransform, load_poses
from stpc.range_image import AngularResolution
from stpc.synth import Scene, cast_frame, make_corner

from conftest import sector_res


# ---------------------------------------------------------------------------
# synth scenes
# ---------------------------------------------------------------------------


def test_synth_zero_motion_identical_frames(tmp_path):
    out = tmp_path / "seq"
    rc = main([
        "synth", "corridor", "--frames", "2", "--out-dir", str(out),
        "--width", "200", "--height", "16",
    ])
    assert rc == 0
    a = read_kitti_bin(out / "frame_000.bin")
    b = read_kitti_bin(out / "frame_001.bin")
    np.testing.assert_array_equal(a, b)
    poses = load_poses(out / "poses.txt")
    assert all(p.is_identity() for p in poses)
    meta = json.loads((out / "scene.json").read_text())
    assert meta["n_frames"] == 2
    assert (out / "imu.csv").exists()


def test_ground_plane_points_exactly_on_plane():
    # Sensor 2 m above the z = 0 plane: every generated point satisfies
    # the plane equation with zero error.
    scene = Scene(name="ground", planes=[(np.array([0.0, 0.0, 1.0]), 0.0)])
    pose = RigidTransform(R=np.eye(3), T=np.array([0.0, 0.0, 2.0]))
    res = sector_res(64, 16, az_span=2 * np.pi, el_span=0.3)
    pts = cast_frame(scene, pose, res, 64, 16, 1.8)
    assert pts.shape[0] > 100
    world_z = pts[:, 2] + 2.0
    assert np.all(world_z == 0.0)


def test_corner_points_exactly_on_walls():
    scene = make_corner()
    pose = RigidTransform.identity()
    res = sector_res(128, 16, az_span=np.pi / 2, el_span=0.3)
    pts = cast_frame(scene, pose, res, 128, 16, 1.45)
    assert pts.shape[0] > 500
    dist = np.minimum(np.abs(pts[:, 0] - 8.0), np.abs(pts[:, 1] - 8.0))
    assert np.all(dist == 0.0)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def test_kitti_bin_single_point(tmp_path):
    path = tmp_path / "one.bin"
    np.array([1.0, 2.0, 3.0, 0.5], dtype=np.float32).tofile(path)
    pts = read_kitti_bin(path)
    assert pts.shape == (1, 3)
    np.testing.assert_array_equal(pts[0], [1.0, 2.0, 3.0])


def test_kitti_bin_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert read_kitti_bin(path).shape == (0, 3)


def test_kitti_bin_fixture_roundtrip(tmp_path, rng):
    pts = rng.uniform(-50, 50, (1000, 3)).astype(np.float32).astype(np.float64)
    path = tmp_path / "fixture.bin"
    write_kitti_bin(path, pts)
    np.testing.assert_array_equal(read_kitti_bin(path), pts)


def test_kitti_bin_trailing_bytes_error(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 20)
    with pytest.raises(DataError) as exc:
        read_kitti_bin(path)
    assert "offset 16" in str(exc.value)


def test_ply_roundtrip(tmp_path, rng):
    pts = rng.uniform(-10, 10, (57, 3))
    path = tmp_path / "c.ply"
    write_ply_ascii(path, pts)
    np.testing.assert_array_equal(read_ply_ascii(path), pts)


def test_ply_errors(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("not a ply\n")
    with pytest.raises(DataError):
        read_ply_ascii(p)
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\n"
                 "property float x\nproperty float y\nproperty float z\n"
                 "end_header\n1 2 3\n")
    with pytest.raises(DataError) as exc:
        read_ply_ascii(p)
    assert "vertex 1" in str(exc.value)


# ---------------------------------------------------------------------------
# end-to-end commands
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_seq(tmp_path_factory):
    out = tmp_path_factory.mktemp("seq")
    rc = main([
        "synth", "corridor", "--frames", "5", "--out-dir", str(out),
        "--velocity", "0.23,-0.1,0", "--width", "360", "--height", "32",
        "--theta-res", "0.0174533", "--n-boxes", "3",
    ])
    assert rc == 0
    return out


def test_encode_decode_metrics_loop(small_seq, tmp_path):
    blob = tmp_path / "out.stpc"
    rc = main([
        "encode", *(str(small_seq / f"frame_{i:03d}.bin") for i in range(3)),
        "--mode", "stream", "--poses", str(small_seq / "poses.txt"),
        "--out", str(blob), "--width", "360", "--height", "32",
        "--theta-res", "0.0174533", "--dump-config", str(tmp_path / "cfg.json"),
    ])
    assert rc == 0
    cfg = json.loads((tmp_path / "cfg.json").read_text())
    assert cfg["n_frames"] == 3 and cfg["mode"] == "stream"

    rc = main(["info", str(blob)])
    assert rc == 0

    out_dir = tmp_path / "dec"
    rc = main(["decode", str(blob), "--out-dir", str(out_dir), "--format", "kitti-bin"])
    assert rc == 0
    decoded = sorted(out_dir.glob("*.bin"))
    assert len(decoded) == 3

    rc = main(["metrics", str(small_seq / "frame_000.bin"), str(decoded[0])])
    assert rc == 0


def test_decode_error_exit_code(tmp_path):
    bad = tmp_path / "bad.stpc"
    bad.write_bytes(b"STPC" + b"\x00" * 100)
    rc = main(["decode", str(bad), "--out-dir", str(tmp_path / "x")])
    assert rc == 4
    rc = main(["info", str(bad)])
    assert rc == 4


def test_data_error_exit_code(tmp_path):
    rc = main([
        "encode", str(tmp_path / "missing.bin"), "--out", str(tmp_path / "o.stpc"),
    ])
    assert rc == 3


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["encode"])  # missing required arguments
    assert exc.value.code == 2
    rc = main(["encode", "a.bin", "b.bin", "--mode", "single", "--frames", "2",
               "--out", "x.stpc"])
    assert rc == 2


def test_bench_csv_and_single_mode_equivalence(small_seq, tmp_path):
    out_csv = tmp_path / "bench.csv"
    rc = main([
        "bench", str(small_seq), "--sweep-frames", "1,3", "--sweep-tau", "0.02",
        "--out", str(out_csv), "--width", "360", "--height", "32",
        "--theta-res", "0.0174533",
    ])
    assert rc == 0
    rows = list(csv.DictReader(out_csv.open()))
    assert [r["n_frames"] for r in rows] == ["1", "3"]
    # The n=1 sweep row must equal a direct single-frame encode.
    cfg = stpc.CodecConfig(
        mode="single", n_frames=1, w=360, h=32,
        res=AngularResolution(0.0174533, 0.00698), phi_offset=1.48,
    )
    cloud = read_kitti_bin(small_seq / "frame_000.bin")
    blob, rep = stpc.compress([cloud], cfg)
    assert float(rows[0]["rate"]) == pytest.approx(rep.compression_rate, abs=5e-4)
    for field in ("encode_fps", "decode_fps", "max_err", "rmse",
                  "frac_temporal", "frac_spatial", "frac_residual"):
        assert field in rows[0]


def test_blob_streaming_via_stdout_stdin(small_seq, tmp_path):
    # encode to stdout, decode from stdin, as a real pipeline would.
    enc = subprocess.run(
        [sys.executable, "-m", "stpc.cli", "encode",
         str(small_seq / "frame_000.bin"), "--out", "-",
         "--width", "360", "--height", "32", "--theta-res", "0.0174533"],
        capture_output=True, check=True,
    )
    assert enc.stdout[:4] == b"STPC"
    dec = subprocess.run(
        [sys.executable, "-m", "stpc.cli", "decode", "-",
         "--out-dir", str(tmp_path / "dec")],
        input=enc.stdout, capture_output=True, check=True,
    )
    assert (tmp_path / "dec" / "frame_000.ply").exists()
