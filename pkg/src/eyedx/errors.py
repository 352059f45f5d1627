"""Exception types shared across the package.

The CLI maps these onto exit codes, so raising the right type matters more
than the message text: DataError means bad input, NumericError means the
computation itself went wrong (NaN loss, shape mismatch mid-training).
"""


class EyedxError(Exception):
    """Base class for package errors."""


class DataError(EyedxError):
    """Malformed or unusable input data, config, or file format."""


class NumericError(EyedxError):
    """Numeric failure during training or inference."""
