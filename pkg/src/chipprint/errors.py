"""Exception types shared across the package."""


class ChipprintError(Exception):
    """Base class for all package errors."""


class ParameterError(ChipprintError, ValueError):
    """Invalid argument: bad dims, nonpositive pitch, out-of-range weight."""


class GeometryError(ChipprintError, ValueError):
    """Degenerate scene geometry, e.g. light source on the surface."""


class DegenerateInputError(ChipprintError, ValueError):
    """Input carries no usable signal (constant image, empty sample set)."""


class AlignmentFailedError(ChipprintError, RuntimeError):
    """Registration could not lock onto the reference."""


class MaskError(ChipprintError, ValueError):
    """Region mask is empty or cannot support the requested extraction."""


class IncompatibleFingerprintsError(ChipprintError, ValueError):
    """Fingerprints cannot be compared (different point budget N)."""


class FormatError(ChipprintError, ValueError):
    """Serialized artifact does not parse or fails its integrity check."""
