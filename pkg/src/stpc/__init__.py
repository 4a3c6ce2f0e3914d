"""stpc: spatio-temporal LiDAR point-cloud codec.

Compresses single range-image frames by plane-fitting tile runs, and frame
sequences by reusing key-frame planes across motion-aligned channels.
"""

from .bitstream import (
    MODE_SINGLE,
    MODE_STREAM,
    CodecConfig,
    compress,
    decompress,
    decompress_full,
    deserialize,
    serialize,
)
from .motion import (
    FrameStack,
    ImuSample,
    RigidTransform,
    build_rotation,
    build_stack,
    frame_transforms,
    integrate_imu,
    poses_to_transforms,
    transform_cloud,
)
from .plane import FitResult, Plane, fit_plane, refit_offset, test_plane
from .range_image import (
    AngularResolution,
    PixelRay,
    RangeImage,
    pixel_ray,
    project,
    reconstruct_from_plane,
    unproject,
)
from .spatial import (
    EncodedRow,
    PlaneRun,
    ResidualMap,
    TileGrid,
    decode_spatial,
    encode_spatial,
)
from .temporal import (
    StreamEncoded,
    TemporalRun,
    coverage_counts,
    decode_stream,
    decode_stream_images,
    encode_stream,
)

__version__ = "0.1.0"

__all__ = [
    "AngularResolution",
    "CodecConfig",
    "EncodedRow",
    "FitResult",
    "FrameStack",
    "ImuSample",
    "MODE_SINGLE",
    "MODE_STREAM",
    "PixelRay",
    "Plane",
    "PlaneRun",
    "RangeImage",
    "ResidualMap",
    "RigidTransform",
    "StreamEncoded",
    "TemporalRun",
    "TileGrid",
    "build_rotation",
    "build_stack",
    "compress",
    "coverage_counts",
    "decode_spatial",
    "decode_stream",
    "decode_stream_images",
    "decompress",
    "decompress_full",
    "deserialize",
    "encode_spatial",
    "encode_stream",
    "fit_plane",
    "frame_transforms",
    "integrate_imu",
    "pixel_ray",
    "poses_to_transforms",
    "project",
    "reconstruct_from_plane",
    "refit_offset",
    "serialize",
    "test_plane",
    "transform_cloud",
    "unproject",
]
