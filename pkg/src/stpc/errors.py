"""Exception types shared across the codec."""


class CodecError(Exception):
    """Base class for all stpc errors."""


class DataError(CodecError):
    """Input data could not be read or is inconsistent (exit code 3)."""


class ImuCoverageError(DataError):
    """IMU samples do not cover a required time interval."""


class InsufficientSamplesError(CodecError):
    """Fewer samples than a fit requires."""


class DegenerateFitError(CodecError):
    """Normal matrix is singular or too ill-conditioned to trust."""


class ReconstructionError(CodecError):
    """Ray/plane reconstruction failed for a pixel."""


class NoIntersectionError(ReconstructionError):
    """Pixel ray is (numerically) parallel to the plane."""


class BehindSensorError(ReconstructionError):
    """Ray/plane intersection lies at negative range."""


class RangeExceededError(ReconstructionError):
    """Reconstructed range exceeds the sanity cap."""


class DecodeError(CodecError):
    """Compressed blob could not be decoded (exit code 4)."""


class TruncatedBlobError(DecodeError):
    """Blob ends before a section is complete."""


class ChecksumError(DecodeError):
    """Payload checksum mismatch."""


class UnknownVersionError(DecodeError):
    """Blob advertises a format version this build does not speak."""


class MalformedBlobError(DecodeError):
    """Blob structure is internally inconsistent."""
