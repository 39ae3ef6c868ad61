"""Exception hierarchy. CLI exit codes are attached to the classes."""


class UVCError(Exception):
    exit_code = 1


class InputError(UVCError, ValueError):
    """Bad shapes, ranges or arguments supplied by the caller."""

    exit_code = 2


class ConfigurationError(InputError):
    pass


class DomainError(InputError):
    """Inputs are well-formed but the computation is undefined for them."""


class CodecUnavailableError(UVCError, EnvironmentError):
    """An external encoder binary could not be located."""

    exit_code = 3


class CodecError(UVCError, RuntimeError):
    def __init__(self, message, stderr=""):
        super().__init__(f"{message}\n{stderr}".rstrip())
        self.stderr = stderr


class IntegrityError(UVCError):
    """Stored data failed validation (hash, CRC, magic)."""

    exit_code = 4


class FormatError(IntegrityError):
    pass


class CorruptionError(IntegrityError):
    pass


class DecodeError(IntegrityError):
    pass


class NumericalError(UVCError, ArithmeticError):
    pass


class TrainingError(NumericalError):
    pass
