"""Exception taxonomy shared across the engine.

Input problems raise a subclass of :class:`PromiError`; anything else
escaping the package is a bug. The service layer maps these onto HTTP 422
and the CLI onto exit code 2.
"""


class PromiError(Exception):
    """Base class for all errors raised by promi."""


class FormatError(PromiError):
    """File or payload does not conform to a documented byte/JSON layout."""


class DataError(PromiError):
    """Payload parsed but carries invalid values (NaN/Inf, out-of-range)."""


class ShapeError(PromiError):
    """Array rank or dimensions incompatible with the operation."""


class IoError(PromiError):
    """Filesystem read/write failure."""


class AnnotationError(PromiError):
    """Bounding box inconsistent with its image geometry."""


class DegenerateSupportError(PromiError):
    """Support batch is single-class (all foreground or all background)."""


class ManifestError(PromiError):
    """Benchmark manifest missing, malformed, or insufficient for sampling."""
