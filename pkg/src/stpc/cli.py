"""Command-line interface: encode, decode, info, metrics, bench, synth.

Exit codes: 0 success, 2 usage error, 3 data error, 4 decode error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bitstream import (
    MODE_SINGLE,
    MODE_STREAM,
    CodecConfig,
    compress,
    decompress_full,
    deserialize,
)
from .errors import DataError, DecodeError
from .io_formats import read_cloud, write_cloud
from .metrics import MetricsReport, cloud_error
from .motion import load_imu_csv, load_poses
from .range_image import (
    DEFAULT_PHI_OFFSET,
    DEFAULT_PHI_R,
    DEFAULT_THETA_R,
    AngularResolution,
)
from .synth import (
    generate_sequence,
    make_corner,
    make_corridor,
    make_corridor_boxes,
    make_ground_boxes,
    write_sequence,
)
from .temporal import coverage_counts

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DECODE = 4


def _add_projection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=1800, help="range image columns")
    p.add_argument("--height", type=int, default=64, help="range image rows")
    p.add_argument("--theta-res", type=float, default=DEFAULT_THETA_R,
                   help="horizontal resolution, rad/pixel")
    p.add_argument("--phi-res", type=float, default=DEFAULT_PHI_R,
                   help="vertical resolution, rad/pixel")
    p.add_argument("--phi-offset", type=float, default=DEFAULT_PHI_OFFSET,
                   help="polar angle of row 0, rad")


def _config_from_args(args, mode: str, n_frames: int) -> CodecConfig:
    return CodecConfig(
        mode=mode,
        tau=args.tau,
        tile_w=args.tile[0],
        tile_h=args.tile[1],
        res=AngularResolution(args.theta_res, args.phi_res),
        phi_offset=args.phi_offset,
        w=args.width,
        h=args.height,
        n_frames=n_frames,
        range_quant=args.range_quant,
    )


def _parse_vec3(text: str) -> np.ndarray:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected vx,vy,vz")
    return np.array(parts)


def _read_blob(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    return Path(path).read_bytes()


def _cmd_encode(args) -> int:
    mode = args.mode
    inputs = list(args.inputs)
    n = args.frames if args.frames else (1 if mode == MODE_SINGLE else len(inputs))
    if mode == MODE_SINGLE and n != 1:
        print("error: single mode encodes exactly one frame", file=sys.stderr)
        return EXIT_USAGE
    if len(inputs) < n:
        print(f"error: need {n} input frames, got {len(inputs)}", file=sys.stderr)
        return EXIT_USAGE
    inputs = inputs[:n]
    cfg = _config_from_args(args, mode, n)
    if args.dump_config:
        dump = {
            "mode": cfg.mode, "tau": cfg.tau, "tile_w": cfg.tile_w, "tile_h": cfg.tile_h,
            "theta_r": cfg.res.theta_r, "phi_r": cfg.res.phi_r,
            "phi_offset": cfg.phi_offset, "w": cfg.w, "h": cfg.h,
            "n_frames": cfg.n_frames, "k_index": cfg.k_index,
            "range_quant": cfg.range_quant,
        }
        Path(args.dump_config).write_text(json.dumps(dump, indent=2))

    clouds = [read_cloud(p, args.format) for p in inputs]
    poses = load_poses(args.poses)[:n] if args.poses else None
    imu = load_imu_csv(args.imu) if args.imu else None
    frame_times = [i * args.frame_dt for i in range(n)]
    blob, report = compress(
        clouds, cfg, poses=poses, imu_samples=imu, frame_times=frame_times,
        v0=args.v0, threads=args.threads,
    )
    if args.out == "-":
        sys.stdout.buffer.write(blob)
    else:
        Path(args.out).write_bytes(blob)
    print(
        f"encoded {n} frame(s): {report.raw_bytes} -> {report.blob_bytes} bytes "
        f"({report.compression_rate:.1f}x), dropped {report.dropped_points} points",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_decode(args) -> int:
    blob = _read_blob(args.blob)
    clouds, report = decompress_full(blob)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "ply" if args.format == "ply" else "bin"
    for i, cloud in enumerate(clouds):
        write_cloud(out_dir / f"frame_{i:03d}.{ext}", cloud, args.format)
    print(
        f"decoded {len(clouds)} frame(s), {sum(report.point_counts)} points, "
        f"{report.failed_reconstructions} failed reconstructions",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_info(args) -> int:
    blob = _read_blob(args.blob)
    enc, cfg = deserialize(blob)
    print(f"blob: {len(blob)} bytes")
    print(f"mode: {cfg.mode}  frames: {cfg.n_frames}  k_index: {cfg.k_index}")
    print(f"image: {cfg.w}x{cfg.h}  tiles: {cfg.tile_w}x{cfg.tile_h}")
    print(f"tau: {cfg.tau}  range_quant: {cfg.range_quant}")
    print(f"resolution: theta_r={cfg.res.theta_r:.6f} phi_r={cfg.res.phi_r:.6f} "
          f"phi_offset={cfg.phi_offset:.4f}")
    print(f"temporal runs: {len(enc.temporal_runs)}")
    for ch, counts in enumerate(coverage_counts(enc)):
        print(
            f"channel {ch}: valid={counts['valid']} temporal={counts['temporal']} "
            f"fallback={counts['fallback']} residual={counts['residual']}"
        )
    return EXIT_OK


def _cmd_metrics(args) -> int:
    src = read_cloud(args.source, "auto")
    dec = read_cloud(args.decoded, "auto")
    max_err, rmse = cloud_error(src, dec)
    report = MetricsReport(
        max_err=max_err, rmse=rmse, dropped_points=src.shape[0] - dec.shape[0]
    )
    print(f"points: source={src.shape[0]} decoded={dec.shape[0]}")
    print(f"max_err: {report.max_err:.6f} m")
    print(f"rmse: {report.rmse:.6f} m")
    return EXIT_OK


def _bench_frames(seq_dir: Path):
    frames = sorted(seq_dir.glob("*.bin")) or sorted(seq_dir.glob("*.ply"))
    if not frames:
        raise DataError(f"{seq_dir}: no frame files (*.bin or *.ply)")
    return frames


def _cmd_bench(args) -> int:
    seq_dir = Path(args.sequence_dir)
    frame_paths = _bench_frames(seq_dir)
    sweep_frames = [int(s) for s in args.sweep_frames.split(",")]
    sweep_tau = [float(s) for s in args.sweep_tau.split(",")]
    sweep_threads = [int(s) for s in args.sweep_threads.split(",")]

    poses_path = seq_dir / "poses.txt"
    imu_path = seq_dir / "imu.csv"
    meta_path = seq_dir / "scene.json"
    all_poses = load_poses(poses_path) if poses_path.exists() else None
    imu = load_imu_csv(imu_path) if imu_path.exists() else None
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    frame_dt = args.frame_dt
    if meta.get("frame_times") and len(meta["frame_times"]) > 1:
        frame_dt = meta["frame_times"][1] - meta["frame_times"][0]
    v0 = np.array(meta["v0"]) if "v0" in meta else None

    rows = []
    for n in sweep_frames:
        if n > len(frame_paths):
            raise DataError(f"sweep needs {n} frames, directory has {len(frame_paths)}")
        clouds = [read_cloud(p, "auto") for p in frame_paths[:n]]
        for tau, threads in ((t, k) for t in sweep_tau for k in sweep_threads):
            cfg = CodecConfig(
                mode=MODE_SINGLE if n == 1 else MODE_STREAM,
                tau=tau,
                tile_w=args.tile[0], tile_h=args.tile[1],
                res=AngularResolution(args.theta_res, args.phi_res),
                phi_offset=args.phi_offset, w=args.width, h=args.height,
                n_frames=n, range_quant=args.range_quant,
            )
            t0 = time.perf_counter()
            blob, rep = compress(
                clouds, cfg,
                poses=all_poses[:n] if all_poses else None,
                imu_samples=imu if all_poses is None else None,
                frame_times=[i * frame_dt for i in range(n)],
                v0=v0, threads=threads,
            )
            enc_s = time.perf_counter() - t0
            t0 = time.perf_counter()
            dec_clouds, _ = decompress_full(blob)
            dec_s = time.perf_counter() - t0
            errs = [cloud_error(c, d) for c, d in zip(clouds, dec_clouds)]
            metrics = MetricsReport(
                compression_rate=rep.compression_rate,
                encode_fps=n / enc_s if enc_s > 0 else 0.0,
                decode_fps=n / dec_s if dec_s > 0 else 0.0,
                max_err=max(e[0] for e in errs),
                rmse=float(np.mean([e[1] for e in errs])),
                dropped_points=rep.dropped_points,
                timings={"encode_s": enc_s, "decode_s": dec_s},
            )
            rows.append({
                "n_frames": n,
                "tau": tau,
                "threads": threads,
                "rate": round(metrics.compression_rate, 3),
                "encode_fps": round(metrics.encode_fps, 3),
                "decode_fps": round(metrics.decode_fps, 3),
                "max_err": round(metrics.max_err, 6),
                "rmse": round(metrics.rmse, 6),
                "frac_temporal": round(rep.fractions["temporal"], 6),
                "frac_spatial": round(rep.fractions["spatial"], 6),
                "frac_residual": round(rep.fractions["residual"], 6),
                "dropped_points": metrics.dropped_points,
                "encode_s": round(enc_s, 6),
                "decode_s": round(dec_s, 6),
            })

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_synth(args) -> int:
    if args.scene == "corridor":
        if args.n_boxes:
            scene = make_corridor_boxes(n_boxes=args.n_boxes, seed=args.seed)
        else:
            scene = make_corridor()
    elif args.scene == "corner":
        scene = make_corner()
    else:
        scene = make_ground_boxes(n_boxes=args.n_boxes or 12, seed=args.seed)
    res = AngularResolution(args.theta_res, args.phi_res)
    clouds, poses, frame_times, imu, v0 = generate_sequence(
        scene, args.frames, res, args.width, args.height, args.phi_offset,
        dt=args.dt, velocity=args.velocity, accel=args.accel,
        yaw_rate=args.yaw_rate, jitter=args.jitter, seed=args.seed,
    )
    write_sequence(args.out_dir, scene, clouds, poses, frame_times, imu, v0)
    print(
        f"wrote {len(clouds)} frame(s) to {args.out_dir} "
        f"({sum(c.shape[0] for c in clouds)} points)",
        file=sys.stderr,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stpc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="compress point cloud frames to a blob")
    enc.add_argument("inputs", nargs="+", help="frame files (kitti .bin or ascii .ply)")
    enc.add_argument("--mode", choices=[MODE_SINGLE, MODE_STREAM], default=MODE_SINGLE)
    enc.add_argument("--tau", type=float, default=0.02, help="plane fit threshold, m")
    enc.add_argument("--tile", type=int, nargs=2, default=[4, 4], metavar=("W", "H"))
    enc.add_argument("--frames", type=int, default=0, help="frames to encode (0 = all)")
    enc.add_argument("--threads", type=int, default=1)
    enc.add_argument("--imu", help="IMU CSV (t,ax,ay,az,wx,wy,wz)")
    enc.add_argument("--poses", help="pose file (r11..r33 t1 t2 t3 per frame)")
    enc.add_argument("--v0", type=_parse_vec3, default=None, help="initial velocity vx,vy,vz")
    enc.add_argument("--frame-dt", type=float, default=0.1, help="frame period, s")
    enc.add_argument("--format", choices=["auto", "kitti-bin", "ply-ascii"], default="auto")
    enc.add_argument("--range-quant", type=float, default=0.005, help="residual LSB, m")
    enc.add_argument("--dump-config", help="write effective config as JSON")
    enc.add_argument("--out", required=True, help="output blob path ('-' = stdout)")
    _add_projection_flags(enc)
    enc.set_defaults(func=_cmd_encode)

    dec = sub.add_parser("decode", help="decompress a blob to point cloud files")
    dec.add_argument("blob", help="blob path ('-' = stdin)")
    dec.add_argument("--out-dir", required=True)
    dec.add_argument("--format", choices=["ply", "kitti-bin"], default="ply")
    dec.set_defaults(func=_cmd_decode)

    info = sub.add_parser("info", help="print blob header and coverage summary")
    info.add_argument("blob")
    info.set_defaults(func=_cmd_info)

    met = sub.add_parser("metrics", help="nearest-neighbor error of decoded vs source")
    met.add_argument("source")
    met.add_argument("decoded")
    met.set_defaults(func=_cmd_metrics)

    ben = sub.add_parser("bench", help="rate/speed/error sweep over a frame directory")
    ben.add_argument("sequence_dir")
    ben.add_argument("--sweep-frames", default="1,3,5,9")
    ben.add_argument("--sweep-tau", default="0.02")
    ben.add_argument("--sweep-threads", default="1")
    ben.add_argument("--tile", type=int, nargs=2, default=[4, 4], metavar=("W", "H"))
    ben.add_argument("--range-quant", type=float, default=0.005)
    ben.add_argument("--frame-dt", type=float, default=0.1)
    ben.add_argument("--out", help="CSV output path (default stdout)")
    _add_projection_flags(ben)
    ben.set_defaults(func=_cmd_bench)

    syn = sub.add_parser("synth", help="generate an analytic test sequence")
    syn.add_argument("scene", choices=["corridor", "corner", "ground_boxes"])
    syn.add_argument("--frames", type=int, default=1)
    syn.add_argument("--out-dir", required=True)
    syn.add_argument("--dt", type=float, default=0.1)
    syn.add_argument("--velocity", type=_parse_vec3, default=np.zeros(3))
    syn.add_argument("--accel", type=_parse_vec3, default=np.zeros(3))
    syn.add_argument("--yaw-rate", type=float, default=0.0)
    syn.add_argument("--jitter", type=float, default=0.0)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--n-boxes", type=int, default=0,
                     help="box count (corridor: adds obstacles; ground_boxes default 12)")
    _add_projection_flags(syn)
    syn.set_defaults(func=_cmd_synth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except DecodeError as exc:
        print(f"decode error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
