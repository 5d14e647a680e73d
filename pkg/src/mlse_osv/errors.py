"""Exception hierarchy shared by every module in the package."""


class MLSEError(Exception):
    """Base class for all domain errors raised by this package."""


class ConfigurationError(MLSEError):
    pass


class DimensionError(MLSEError, ValueError):
    pass


class ConsistencyError(MLSEError):
    pass


class NumericError(MLSEError, FloatingPointError):
    pass


class ParameterError(MLSEError, ValueError):
    pass


class DataError(MLSEError, ValueError):
    pass


class ManifestParseError(DataError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ContainerError(MLSEError):
    """Base class for binary container load failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass
