"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical routine failed (breakdown, NaN, self-check residual)."""


class FieldFileError(IOError):
    """A field container file is malformed, truncated, or unsupported."""
