"""Exception hierarchy shared by every layer of the package."""


class EWTError(Exception):
    """Base class for all package errors."""


class DimensionError(EWTError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(EWTError, ValueError):
    """A call violated an operation precondition that is not about shapes."""


class ConfigError(EWTError, ValueError):
    """A model or run configuration violates one of its constraints."""


class NonFiniteError(EWTError, FloatingPointError):
    """An operation produced NaN or infinity while debug checks were on."""


class LoadError(EWTError):
    """A weight file could not be loaded."""


class NameSetMismatchError(LoadError):
    pass


class ShapeMismatchError(LoadError):
    pass


class ChecksumError(LoadError):
    pass


class ImageFormatError(EWTError, ValueError):
    """Malformed or truncated PGM/PPM data.

    ``offset`` is the byte position where parsing stopped.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
