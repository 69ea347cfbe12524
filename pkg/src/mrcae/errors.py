"""Exception hierarchy shared across the package."""


class MrcaeError(Exception):
    """Base class for every error raised by mrcae."""


class ShapeError(MrcaeError, ValueError):
    pass


class ConfigError(MrcaeError, ValueError):
    pass


class GrowthError(MrcaeError):
    """Raised when a growth operation is not valid for the current topology."""


class TopologyError(MrcaeError, ValueError):
    """Encoding, checkpoint or data does not fit the model's topology."""


class TrainingError(MrcaeError, RuntimeError):
    pass


class FileFormatError(MrcaeError):
    """Base class for on-disk format problems."""


class BadMagicError(FileFormatError):
    pass


class VersionError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class ChecksumError(FileFormatError):
    pass
