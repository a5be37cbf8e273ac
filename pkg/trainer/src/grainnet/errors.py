"""Exception hierarchy for the training stack."""


class GrainnetError(Exception):
    """Base class for every error this package raises deliberately."""


class FormatError(GrainnetError):
    """A file does not follow its documented on-disk layout."""


class ShapeError(GrainnetError):
    """Tensor or raster dimensions violate a contract."""


class DataError(GrainnetError):
    """A dataset directory is unusable (empty, inconsistent, incomplete)."""


class ProtocolError(GrainnetError):
    """A scorer batch directory violates the exchange protocol."""
