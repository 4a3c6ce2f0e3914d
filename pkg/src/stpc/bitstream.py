"""Blob serialization and the top-level compress/decompress drivers.

Blob layout (.stpc), all integers little-endian:

    offset  size  field
    0       4     magic "STPC"
    4       2     format version (1)
    6       2     reserved (0)
    8       8     raw payload length (bytes, before entropy coding)
    16      8     encoded payload length (bytes)
    24      4     CRC-32 of the encoded payload
    28      256   Huffman code lengths, one byte per symbol
    284     ...   entropy-coded payload

The payload is the concatenation of: config block; per-channel transform
block (12 x f32: rotation row-major then translation); per-channel
validity bitmaps (packbits, MSB-first, row-major); temporal-run section;
fallback-row section; residual section (pixel indices delta-coded as
LEB128 varints, ranges as u16 fixed-point multiples of range_quant with a
0xFFFF escape to raw f32).  Identical input and config produce identical
bytes regardless of worker count.
"""

from __future__ import annotations

import logging
import struct
import time
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import _kernels, huffman
from .errors import (
    ChecksumError,
    DataError,
    MalformedBlobError,
    TruncatedBlobError,
    UnknownVersionError,
)
from .motion import (
    ImuSample,
    RigidTransform,
    build_stack,
    frame_transforms,
    poses_to_transforms,
)
from .range_image import (
    DEFAULT_PHI_OFFSET,
    DEFAULT_PHI_R,
    DEFAULT_THETA_R,
    AngularResolution,
    unproject,
)
from .spatial import EncodedRow, PlaneRun, ResidualMap, TileGrid
from .temporal import (
    StreamEncoded,
    TemporalRun,
    coverage_counts,
    decode_stream_images,
    encode_stream,
)
from .plane import Plane

log = logging.getLogger(__name__)

MAGIC = b"STPC"
VERSION = 1
HEADER_TABLE_OFFSET = 28
HEADER_SIZE = HEADER_TABLE_OFFSET + 256

MODE_SINGLE = "single"
MODE_STREAM = "stream"
_MODE_CODES = {MODE_SINGLE: 0, MODE_STREAM: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

ESCAPE_U16 = 0xFFFF

# Defensive caps for fields a mutated header could inflate.
MAX_RAW_LEN = 1 << 30
MAX_PIXELS = 1 << 26
MAX_FRAMES = 4096


@dataclass(frozen=True)
class CodecConfig:
    """Everything the encoder needs and the decoder must agree on."""

    mode: str = MODE_SINGLE
    tau: float = 0.02
    tile_w: int = 4
    tile_h: int = 4
    res: AngularResolution = field(
        default_factory=lambda: AngularResolution(DEFAULT_THETA_R, DEFAULT_PHI_R)
    )
    phi_offset: float = DEFAULT_PHI_OFFSET
    w: int = 1800
    h: int = 64
    n_frames: int = 1
    k_index: Optional[int] = None
    range_quant: float = 0.005

    def __post_init__(self):
        if self.mode not in _MODE_CODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_SINGLE and self.n_frames != 1:
            raise ValueError("single-frame mode takes exactly one frame")
        if self.tau <= 0 or self.range_quant <= 0:
            raise ValueError("tau and range_quant must be positive")
        if min(self.tile_w, self.tile_h, self.w, self.h, self.n_frames) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.k_index is None:
            object.__setattr__(self, "k_index", self.n_frames // 2)
        if not (0 <= self.k_index < self.n_frames):
            raise ValueError("k_index out of range")
        if self.range_quant > self.tau / 2:
            log.warning(
                "range_quant %.4g above tau/2 (%.4g); residual error may dominate",
                self.range_quant,
                self.tau / 2,
            )

    def grid(self) -> TileGrid:
        return TileGrid.for_image(self.w, self.h, self.tile_w, self.tile_h)


@dataclass
class EncodeReport:
    raw_bytes: int
    blob_bytes: int
    compression_rate: float
    point_counts: List[int]
    dropped_points: int
    collision_fractions: List[float]
    coverage: List[Dict[str, int]]
    fractions: Dict[str, float]
    timings: Dict[str, float]


@dataclass
class DecodeReport:
    point_counts: List[int]
    failed_reconstructions: int
    timings: Dict[str, float]


# ---------------------------------------------------------------------------
# Payload writer
# ---------------------------------------------------------------------------


def _pack_config(cfg: CodecConfig) -> bytes:
    return struct.pack(
        "<Bd HH ddd II HH d",
        _MODE_CODES[cfg.mode],
        cfg.tau,
        cfg.tile_w,
        cfg.tile_h,
        cfg.res.theta_r,
        cfg.res.phi_r,
        cfg.phi_offset,
        cfg.w,
        cfg.h,
        cfg.n_frames,
        cfg.k_index,
        cfg.range_quant,
    )


_CONFIG_FMT = "<Bd HH ddd II HH d"
_CONFIG_SIZE = struct.calcsize(_CONFIG_FMT)


def _quantize_residual(ranges: np.ndarray, quant: float):
    """u16 fixed-point codes plus f32 escapes for out-of-range values."""
    q = np.rint(ranges / quant).astype(np.int64)
    esc = (q < 1) | (q >= ESCAPE_U16)
    codes = np.where(esc, ESCAPE_U16, q).astype(np.uint16)
    escapes = ranges[esc].astype(np.float32)
    return codes, escapes


def _varint_bytes(values: np.ndarray) -> bytes:
    if values.size == 0:
        return b""
    out = np.empty(values.size * 10, dtype=np.uint8)
    n = _kernels.varint_encode_kernel(values.astype(np.int64), out)
    return out[:n].tobytes()


def serialize(enc, cfg: CodecConfig) -> bytes:
    """Serialize an encoding to a compressed blob.

    Accepts a StreamEncoded, or a (rows, residual) pair from the
    single-frame encoder (wrapped as a one-channel stream; the wrapper
    needs cfg for projection parameters and an all-valid mask cannot be
    inferred, so pass a StreamEncoded whenever masks matter).
    """
    if not isinstance(enc, StreamEncoded):
        rows, residual = enc
        enc = wrap_spatial(rows, residual, cfg)
    n = enc.n
    if n != cfg.n_frames or enc.k_index != cfg.k_index:
        raise ValueError("encoding and config disagree on frame layout")
    grid = cfg.grid()
    if grid.tiles_x > 0xFFFF or grid.tiles_y > 0xFFFF:
        raise ValueError("tile grid exceeds the format's u16 indices")

    parts: List[bytes] = [_pack_config(cfg)]

    tr_block = np.empty((n, 12), dtype=np.float32)
    for i, t in enumerate(enc.transforms):
        tr_block[i, :9] = t.R.reshape(9)
        tr_block[i, 9:] = t.T
    parts.append(tr_block.astype("<f4").tobytes())

    for ch in range(n):
        parts.append(np.packbits(enc.valid_masks[ch].reshape(-1)).tobytes())

    mask_bytes = (n + 7) // 8
    parts.append(struct.pack("<I", len(enc.temporal_runs)))
    for run in enc.temporal_runs:
        parts.append(
            struct.pack(
                "<HHH fff",
                run.row_id,
                run.s,
                run.length,
                np.float32(run.plane.a),
                np.float32(run.plane.b),
                np.float32(run.plane.c),
            )
        )
        bits = bytearray(mask_bytes)
        extra: List[bytes] = []
        for ch, c_ch in enumerate(run.offsets):
            if c_ch is None:
                continue
            bits[ch >> 3] |= 1 << (ch & 7)
            if ch != enc.k_index:
                extra.append(struct.pack("<f", np.float32(c_ch)))
        parts.append(bytes(bits))
        parts.extend(extra)

    for ch in range(n):
        rows = enc.fallback_rows[ch]
        parts.append(struct.pack("<I", len(rows)))
        for row in rows:
            parts.append(struct.pack("<HH", row.row_id, len(row.runs)))
            for run in row.runs:
                parts.append(
                    struct.pack(
                        "<HH fff",
                        run.s,
                        run.length,
                        np.float32(run.plane.a),
                        np.float32(run.plane.b),
                        np.float32(run.plane.c),
                    )
                )

    for ch in range(n):
        resid = enc.residuals[ch]
        parts.append(struct.pack("<I", len(resid)))
        if len(resid):
            flat = resid.vs * cfg.w + resid.us
            deltas = np.empty_like(flat)
            deltas[0] = flat[0]
            deltas[1:] = np.diff(flat)
            parts.append(_varint_bytes(deltas))
            codes, escapes = _quantize_residual(resid.ranges, cfg.range_quant)
            parts.append(codes.astype("<u2").tobytes())
            parts.append(struct.pack("<I", escapes.size))
            parts.append(escapes.astype("<f4").tobytes())

    payload = b"".join(parts)
    lengths, encoded = huffman.encode_bytes(payload)
    header = struct.pack(
        "<4sHHQQI",
        MAGIC,
        VERSION,
        0,
        len(payload),
        len(encoded),
        zlib.crc32(encoded) & 0xFFFFFFFF,
    )
    return header + lengths.tobytes() + encoded


def wrap_spatial(rows: Sequence[EncodedRow], residual: ResidualMap, cfg: CodecConfig) -> StreamEncoded:
    """Lift a single-frame encoding into the one-channel stream container.

    The validity mask is reconstructed from coverage, which is only exact
    when every pixel of every run span was valid; prefer encoding through
    compress()/encode_stream when masks matter.
    """
    grid = cfg.grid()
    mask = np.zeros((cfg.h, cfg.w), dtype=bool)
    for row in rows:
        v0, v1 = grid.row_bounds(row.row_id)
        for run in row.runs:
            u0 = run.s * grid.tile_w
            u1 = min((run.s + run.length) * grid.tile_w, cfg.w)
            mask[v0:v1, u0:u1] = True
    if len(residual):
        mask[residual.vs, residual.us] = True
    temporal_runs = [
        TemporalRun(row_id=row.row_id, s=run.s, length=run.length, plane=run.plane,
                    offsets=[run.plane.c])
        for row in rows
        for run in row.runs
    ]
    return StreamEncoded(
        temporal_runs=temporal_runs,
        fallback_rows=[[]],
        residuals=[residual],
        transforms=[RigidTransform.identity()],
        valid_masks=mask[None, :, :],
        k_index=0,
        grid=grid,
        res=cfg.res,
        phi_offset=cfg.phi_offset,
    )


# ---------------------------------------------------------------------------
# Payload reader
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedBlobError(
                f"payload ends at byte {len(self.buf)}, needed {self.pos + n}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype)


def _parse_config(r: _Reader) -> CodecConfig:
    vals = r.unpack(_CONFIG_FMT)
    (mode_code, tau, tile_w, tile_h, theta_r, phi_r, phi_offset,
     w, h, n_frames, k_index, range_quant) = vals
    if mode_code not in _MODE_NAMES:
        raise MalformedBlobError(f"unknown mode code {mode_code}")
    floats = (tau, theta_r, phi_r, phi_offset, range_quant)
    if not all(np.isfinite(f) for f in floats):
        raise MalformedBlobError("non-finite config field")
    if tau <= 0 or theta_r <= 0 or phi_r <= 0 or range_quant <= 0:
        raise MalformedBlobError("non-positive config field")
    if w < 1 or h < 1 or w * h > MAX_PIXELS:
        raise MalformedBlobError(f"image size {w}x{h} outside supported range")
    if n_frames < 1 or n_frames > MAX_FRAMES:
        raise MalformedBlobError(f"frame count {n_frames} outside supported range")
    if tile_w < 1 or tile_h < 1:
        raise MalformedBlobError("tile dimensions must be >= 1")
    if not (0 <= k_index < n_frames):
        raise MalformedBlobError("k_index out of range")
    mode = _MODE_NAMES[mode_code]
    if mode == MODE_SINGLE and n_frames != 1:
        raise MalformedBlobError("single-frame blob with multiple frames")
    try:
        return CodecConfig(
            mode=mode, tau=tau, tile_w=tile_w, tile_h=tile_h,
            res=AngularResolution(theta_r, phi_r), phi_offset=phi_offset,
            w=w, h=h, n_frames=n_frames, k_index=k_index, range_quant=range_quant,
        )
    except ValueError as exc:
        raise MalformedBlobError(str(exc)) from exc


def deserialize(blob: bytes) -> tuple[StreamEncoded, CodecConfig]:
    """Parse and verify a blob; exact inverse of serialize.

    Raises typed DecodeError subclasses: bad magic / version, truncation,
    checksum mismatch, or structural inconsistencies.  Never returns
    partially decoded output.
    """
    if len(blob) < HEADER_SIZE:
        raise TruncatedBlobError(f"blob of {len(blob)} bytes is shorter than the header")
    magic, version, _reserved, raw_len, enc_len, crc = struct.unpack_from(
        "<4sHHQQI", blob, 0
    )
    if magic != MAGIC:
        raise MalformedBlobError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnknownVersionError(f"format version {version} not supported")
    if raw_len > MAX_RAW_LEN:
        raise MalformedBlobError(f"raw payload length {raw_len} exceeds cap")
    lengths = np.frombuffer(blob, dtype=np.uint8, count=256, offset=HEADER_TABLE_OFFSET)
    if HEADER_SIZE + enc_len > len(blob):
        raise TruncatedBlobError("encoded payload extends past end of blob")
    encoded = blob[HEADER_SIZE : HEADER_SIZE + enc_len]
    if (zlib.crc32(encoded) & 0xFFFFFFFF) != crc:
        raise ChecksumError("payload CRC-32 mismatch")
    payload = huffman.decode_bytes(lengths, encoded, raw_len)

    r = _Reader(payload)
    cfg = _parse_config(r)
    n = cfg.n_frames
    grid = cfg.grid()
    tiles_x, tiles_y = grid.tiles_x, grid.tiles_y

    transforms = []
    block = r.array("<f4", 12 * n).astype(np.float64).reshape(n, 12)
    for i in range(n):
        try:
            transforms.append(RigidTransform(R=block[i, :9].reshape(3, 3), T=block[i, 9:]))
        except ValueError as exc:
            raise MalformedBlobError(f"transform {i}: {exc}") from exc

    n_mask_bytes = (cfg.w * cfg.h + 7) // 8
    masks = np.empty((n, cfg.h, cfg.w), dtype=bool)
    for ch in range(n):
        bits = np.unpackbits(r.array("<u1", n_mask_bytes))[: cfg.w * cfg.h]
        masks[ch] = bits.reshape(cfg.h, cfg.w).astype(bool)

    presence_bytes = (n + 7) // 8
    (n_runs,) = r.unpack("<I")
    temporal_runs: List[TemporalRun] = []
    for _ in range(n_runs):
        row_id, s, length, a, b, c = r.unpack("<HHH fff")
        if row_id >= tiles_y or length < 1 or s + length > tiles_x:
            raise MalformedBlobError("temporal run outside tile grid")
        bits = r.take(presence_bytes)
        offsets: List[Optional[float]] = [None] * n
        plane = Plane(float(a), float(b), float(c))
        for ch in range(n):
            if bits[ch >> 3] & (1 << (ch & 7)):
                if ch == cfg.k_index:
                    offsets[ch] = plane.c
                else:
                    (c_ch,) = r.unpack("<f")
                    offsets[ch] = float(c_ch)
        if offsets[cfg.k_index] is None:
            raise MalformedBlobError("temporal run missing key-frame offset")
        temporal_runs.append(
            TemporalRun(row_id=row_id, s=s, length=length, plane=plane, offsets=offsets)
        )

    fallback_rows: List[List[EncodedRow]] = []
    for ch in range(n):
        (n_rows,) = r.unpack("<I")
        if n_rows > tiles_y:
            raise MalformedBlobError("more fallback rows than tile rows")
        rows: List[EncodedRow] = []
        for _ in range(n_rows):
            row_id, n_row_runs = r.unpack("<HH")
            if row_id >= tiles_y or n_row_runs > tiles_x:
                raise MalformedBlobError("fallback row outside tile grid")
            runs = []
            for _ in range(n_row_runs):
                s, length, a, b, c = r.unpack("<HH fff")
                if length < 1 or s + length > tiles_x:
                    raise MalformedBlobError("fallback run outside tile grid")
                runs.append(PlaneRun(s, length, Plane(float(a), float(b), float(c))))
            rows.append(EncodedRow(row_id=row_id, runs=runs))
        fallback_rows.append(rows)

    residuals: List[ResidualMap] = []
    for ch in range(n):
        (count,) = r.unpack("<I")
        if count > cfg.w * cfg.h:
            raise MalformedBlobError("residual count exceeds pixel count")
        if count == 0:
            residuals.append(ResidualMap.empty())
            continue
        deltas = np.empty(count, dtype=np.int64)
        payload_arr = np.frombuffer(payload, dtype=np.uint8)
        end = _kernels.varint_decode_kernel(payload_arr, r.pos, count, deltas)
        if end < 0:
            raise TruncatedBlobError("residual index varints ran past payload")
        r.pos = end
        if deltas[0] < 0 or np.any(deltas[1:] < 1) or np.any(deltas > cfg.w * cfg.h):
            raise MalformedBlobError("residual pixel deltas out of range")
        flat = np.cumsum(deltas)
        if flat[-1] >= cfg.w * cfg.h:
            raise MalformedBlobError("residual pixel indices not strictly increasing")
        codes = r.array("<u2", count).astype(np.int64)
        (n_esc,) = r.unpack("<I")
        escapes = r.array("<f4", n_esc).astype(np.float64)
        esc_mask = codes == ESCAPE_U16
        if int(np.count_nonzero(esc_mask)) != n_esc:
            raise MalformedBlobError("escape count mismatch in residual section")
        ranges = codes.astype(np.float64) * cfg.range_quant
        ranges[esc_mask] = escapes
        residuals.append(ResidualMap(flat % cfg.w, flat // cfg.w, ranges))

    if r.pos != len(payload):
        raise MalformedBlobError(f"{len(payload) - r.pos} trailing payload bytes")

    enc = StreamEncoded(
        temporal_runs=temporal_runs,
        fallback_rows=fallback_rows,
        residuals=residuals,
        transforms=transforms,
        valid_masks=masks,
        k_index=cfg.k_index,
        grid=grid,
        res=cfg.res,
        phi_offset=cfg.phi_offset,
    )
    return enc, cfg


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def compress(
    clouds: Sequence[np.ndarray],
    cfg: CodecConfig,
    poses: Optional[Sequence[RigidTransform]] = None,
    imu_samples: Optional[Sequence[ImuSample]] = None,
    frame_times: Optional[Sequence[float]] = None,
    v0: Optional[np.ndarray] = None,
    threads: int = 1,
) -> tuple[bytes, EncodeReport]:
    """Full pipeline: align, stack, encode, serialize.

    Stream mode with more than one frame needs either per-frame poses or
    IMU samples plus frame times; transforms are rounded to the float32
    the blob stores before any geometry is touched, so encoder and decoder
    work with bit-identical alignment.
    """
    if len(clouds) != cfg.n_frames:
        raise DataError(f"config expects {cfg.n_frames} frames, got {len(clouds)}")
    timings: Dict[str, float] = {}

    t0 = time.perf_counter()
    if cfg.n_frames == 1:
        transforms = [RigidTransform.identity()]
    elif poses is not None:
        if len(poses) != cfg.n_frames:
            raise DataError("need one pose per frame")
        transforms = poses_to_transforms(poses, cfg.k_index)
    elif imu_samples is not None:
        if frame_times is None or len(frame_times) != cfg.n_frames:
            raise DataError("IMU alignment needs one frame time per frame")
        transforms = frame_transforms(imu_samples, frame_times, cfg.k_index, v0)
    else:
        raise DataError("stream mode needs poses or IMU samples")
    transforms = [t.round_f32() for t in transforms]
    timings["transforms"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stack = build_stack(
        clouds, transforms, cfg.res, cfg.w, cfg.h, cfg.phi_offset,
        k_index=cfg.k_index, threads=threads,
    )
    timings["projection"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    enc = encode_stream(stack, cfg.grid(), cfg.tau, threads=threads)
    timings["encode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    blob = serialize(enc, cfg)
    timings["serialize"] = time.perf_counter() - t0

    point_counts = [int(np.asarray(c).reshape(-1, 3).shape[0]) for c in clouds]
    raw_bytes = 12 * sum(point_counts)
    dropped = sum(
        ch.stats.rejected_nonfinite + ch.stats.dropped_fov + ch.stats.collisions
        for ch in stack.channels
    )
    coverage = coverage_counts(enc)
    total_valid = sum(c["valid"] for c in coverage) or 1
    fractions = {
        "temporal": sum(c["temporal"] for c in coverage) / total_valid,
        "spatial": sum(c["fallback"] for c in coverage) / total_valid,
        "residual": sum(c["residual"] for c in coverage) / total_valid,
    }
    report = EncodeReport(
        raw_bytes=raw_bytes,
        blob_bytes=len(blob),
        compression_rate=raw_bytes / len(blob) if len(blob) else 0.0,
        point_counts=point_counts,
        dropped_points=int(dropped),
        collision_fractions=stack.collision_fractions,
        coverage=coverage,
        fractions=fractions,
        timings=timings,
    )
    return blob, report


def decompress_full(blob: bytes) -> tuple[List[np.ndarray], DecodeReport]:
    timings: Dict[str, float] = {}
    t0 = time.perf_counter()
    enc, cfg = deserialize(blob)
    timings["deserialize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    images = decode_stream_images(enc)
    clouds = []
    failed = 0
    for ch, img in enumerate(images):
        failed += img.stats.failed_reconstructions
        pts = unproject(img)
        clouds.append(enc.transforms[ch].inverse().apply(pts))
    timings["reconstruct"] = time.perf_counter() - t0
    report = DecodeReport(
        point_counts=[c.shape[0] for c in clouds],
        failed_reconstructions=failed,
        timings=timings,
    )
    return clouds, report


def decompress(blob: bytes) -> List[np.ndarray]:
    """Decode a blob back to one point cloud per frame (native coordinates)."""
    clouds, _ = decompress_full(blob)
    return clouds
