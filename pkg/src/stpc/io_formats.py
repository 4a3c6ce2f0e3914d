"""Point-cloud file formats: KITTI velodyne .bin and ASCII PLY."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def read_kitti_bin(path) -> np.ndarray:
    """Read consecutive float32 (x, y, z, intensity) records; intensity dropped."""
    raw = np.fromfile(path, dtype=np.float32)
    if raw.size % 4 != 0:
        offset = (raw.size // 4) * 16
        raise DataError(f"{path}: trailing {raw.nbytes - offset} bytes at offset {offset}")
    return raw.reshape(-1, 4)[:, :3].astype(np.float64)


def write_kitti_bin(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    out = np.zeros((pts.shape[0], 4), dtype=np.float32)
    out[:, :3] = pts
    out.tofile(path)


def read_ply_ascii(path) -> np.ndarray:
    """Minimal ASCII PLY reader: x/y/z vertex properties, extras ignored."""
    with open(path, "r", encoding="utf-8") as f:
        line = f.readline().strip()
        if line != "ply":
            raise DataError(f"{path}: not a PLY file (first line {line!r})")
        n_vertices = None
        columns = {}
        prop_idx = 0
        in_vertex_element = False
        for lineno_, line in enumerate(f, start=2):
            line = line.strip()
            if line.startswith("comment"):
                continue
            if line.startswith("format"):
                if "ascii" not in line:
                    raise DataError(f"{path}: only ascii PLY is supported")
                continue
            if line.startswith("element"):
                parts = line.split()
                in_vertex_element = len(parts) == 3 and parts[1] == "vertex"
                if in_vertex_element:
                    n_vertices = int(parts[2])
                    prop_idx = 0
                continue
            if line.startswith("property"):
                if in_vertex_element:
                    name = line.split()[-1]
                    columns[name] = prop_idx
                    prop_idx += 1
                continue
            if line == "end_header":
                break
        else:
            raise DataError(f"{path}: missing end_header")
        if n_vertices is None:
            raise DataError(f"{path}: no vertex element")
        for axis in ("x", "y", "z"):
            if axis not in columns:
                raise DataError(f"{path}: vertex element lacks property {axis}")
        pts = np.empty((n_vertices, 3), dtype=np.float64)
        for i in range(n_vertices):
            row = f.readline().split()
            if len(row) < prop_idx:
                raise DataError(f"{path}: vertex {i} truncated")
            try:
                pts[i, 0] = float(row[columns["x"]])
                pts[i, 1] = float(row[columns["y"]])
                pts[i, 2] = float(row[columns["z"]])
            except ValueError as exc:
                raise DataError(f"{path}: vertex {i}: {exc}") from exc
        return pts


def write_ply_ascii(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {pts.shape[0]}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for x, y, z in pts:
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_cloud(path, fmt: str = "auto") -> np.ndarray:
    name = str(path)
    if fmt == "auto":
        fmt = "ply-ascii" if name.endswith(".ply") else "kitti-bin"
    if fmt == "kitti-bin":
        return read_kitti_bin(path)
    if fmt == "ply-ascii":
        return read_ply_ascii(path)
    raise DataError(f"unknown format {fmt!r}")


def write_cloud(path, points: np.ndarray, fmt: str) -> None:
    if fmt in ("kitti-bin", "bin"):
        write_kitti_bin(path, points)
    elif fmt in ("ply-ascii", "ply"):
        write_ply_ascii(path, points)
    else:
        raise DataError(f"unknown format {fmt!r}")
