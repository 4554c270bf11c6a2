"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, IoError -> 3,
DataError -> 4.
"""


class AlsChangeError(Exception):
    """Base class for all package errors."""


class ConfigError(AlsChangeError):
    """Invalid or inconsistent configuration."""


class IoError(AlsChangeError):
    """Missing files, unreadable streams, unwritable outputs."""


class DataError(AlsChangeError):
    """Malformed or inconsistent data."""


# -- point cloud I/O ---------------------------------------------------------

class BadMagic(DataError):
    """Stream does not start with the expected signature."""


class UnsupportedFormat(DataError):
    """Point data record format outside the supported subset."""


class TruncatedStream(DataError):
    """Fewer point records than the header promised."""


class MalformedLine(DataError):
    def __init__(self, line_no, message=""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if message else f"line {line_no}")


class RangeError(DataError):
    """A field value is outside its documented range."""


# -- synthetic scenes --------------------------------------------------------

class PlacementFailure(AlsChangeError):
    """Could not place non-overlapping building footprints."""


class UnknownTarget(DataError):
    """Edit references a building id that does not exist."""


class OverlapError(DataError):
    """New building footprint intersects an existing one."""


# -- rasters and tensors -----------------------------------------------------

class NoValidData(DataError):
    """Operation requires at least one valid cell."""


class ShapeMismatch(DataError):
    """Tensor shapes do not agree."""


class SpecMismatch(DataError):
    """Two rasters do not share the same grid specification."""


class BadStride(ConfigError):
    """Tile stride outside [1, size]."""


class CoverageGap(DataError):
    """Patches do not cover the full grid."""


class OddDimension(DataError):
    """Spatial dimension must be even for 2x2 pooling."""


class DegenerateBatch(DataError):
    """Batch statistics undefined (fewer than 2 samples per channel)."""


class EmptyDataset(DataError):
    """Training requires non-empty train and validation sets."""


class BadConfig(ConfigError):
    """Model configuration violates an architectural constraint."""


class VersionMismatch(DataError):
    """Weights file version is not supported."""


class ChecksumMismatch(DataError):
    """Weights file payload failed its CRC check."""
