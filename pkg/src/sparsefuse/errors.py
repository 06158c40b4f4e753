class ConfigurationError(ValueError):
    """Shapes, channel counts or config values that cannot work together."""


class DegenerateInputError(ValueError):
    """Input that is well-typed but carries too little data (e.g. empty masks)."""


class DataError(ValueError):
    """Malformed or physically invalid data (bad rasters, non-positive depth)."""


class NumericAbort(RuntimeError):
    """Training hit a non-finite loss or gradient."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump
