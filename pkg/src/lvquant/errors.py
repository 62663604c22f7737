"""Exception hierarchy shared across the package.

Each class carries a short ``category`` string; the command line prints it as
the machine-readable part of its one-line error message.
"""


class LVQuantError(Exception):
    category = "error"
    exit_code = 1


class DimensionError(LVQuantError, ValueError):
    category = "dimension"


class UsageError(LVQuantError, RuntimeError):
    category = "usage"
    exit_code = 2


class GradientCheckError(LVQuantError, RuntimeError):
    category = "gradcheck"
    exit_code = 7


class GeometryError(LVQuantError, ValueError):
    category = "geometry"
    exit_code = 6


class InvalidContourError(GeometryError):
    category = "invalid-contour"


class DegenerateGeometryError(GeometryError):
    category = "degenerate-geometry"


class AmbiguousPhaseError(LVQuantError, ValueError):
    category = "ambiguous-phase"


class DatasetError(LVQuantError):
    category = "dataset"
    exit_code = 6


class BadMagicError(DatasetError):
    category = "bad-magic"


class SizeMismatchError(DatasetError):
    category = "size-mismatch"


class MissingFileError(DatasetError, FileNotFoundError):
    category = "missing-file"
    exit_code = 3


class ChecksumError(DatasetError):
    category = "checksum"


class CheckpointError(LVQuantError):
    category = "checkpoint"
    exit_code = 5


class FingerprintMismatchError(CheckpointError):
    category = "fingerprint"


class ConfigError(LVQuantError, ValueError):
    category = "config"
    exit_code = 4
