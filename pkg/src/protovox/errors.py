"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from ProtovoxError
so the CLI can map exception classes to distinct exit codes.
"""


class ProtovoxError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ProtovoxError):
    """Invalid configuration value; message names the violated field."""


class PreconditionError(ProtovoxError):
    """An operation's documented precondition does not hold."""


class LookupError_(ProtovoxError):
    """Unknown speaker id, condition index, or other key."""


class RangeError(ProtovoxError):
    """Index outside its documented range (e.g. prototype index)."""


class ShapeError(ProtovoxError):
    """Tensor/vector dimension mismatch."""


class InputError(ProtovoxError):
    """Malformed operation input (empty prompt, out-of-vocabulary target)."""


class ParseError(ProtovoxError):
    """Malformed file; message carries line/record context."""


class StateError(ProtovoxError):
    """Operation requires a model state it does not have (e.g. untrained)."""


class NumericError(ProtovoxError):
    """Non-finite loss or other numeric failure; aborts the run."""


class PairingError(ProtovoxError):
    """Paired evaluation inputs of mismatched length."""


class ReconstructionError(ProtovoxError):
    """Reconstruction produced no usable output (e.g. empty recognized text)."""


class IntegrityError(ProtovoxError):
    """Internal consistency violation (e.g. parameter in two groups)."""
