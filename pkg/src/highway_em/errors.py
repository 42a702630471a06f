"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or malformed shapes."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range or unknown."""


class DegenerateComponentError(RuntimeError):
    """One or more mixture components received (numerically) zero mass.

    Carries the offending component indices so the caller can decide whether
    to reinitialize the dead bases or abort.
    """

    def __init__(self, components, column_sums=None):
        self.components = list(components)
        self.column_sums = column_sums
        super().__init__(
            f"degenerate mixture component(s) {self.components}: "
            f"responsibility column sum below threshold"
        )


class ConsistencyError(ValueError):
    """A trace does not match the inputs/config it is claimed to come from."""


class DataFormatError(RuntimeError):
    """A container file is truncated, corrupt, or not a container at all."""


class UnsupportedVersionError(DataFormatError):
    """Container file has a version this build does not understand."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its placement constraints."""


class TrainingDivergedError(RuntimeError):
    """Non-finite values appeared during training; carries a diagnostic dump."""

    def __init__(self, message, dump=None):
        self.dump = dump or {}
        super().__init__(message)


class OracleError(RuntimeError):
    """The finite-difference oracle hit a non-finite loss evaluation."""


class DataError(ValueError):
    """Labels or features violate a dataset precondition."""
