"""Exception and warning types raised across the package."""


class OutOfRangeError(ValueError):
    """A resource quantity falls outside the tariff's tier table."""


class DegenerateTriangleError(ValueError):
    """A triangular membership function has zero support width."""


class NoRuleFiredWarning(UserWarning):
    """No rule fired for an input; the score fell back to the universe midpoint."""


class ConfigMismatchError(ValueError):
    """A negotiation config carries options that its case does not use."""


class ExhaustedError(ValueError):
    """The distinct-sample space cannot supply the requested dataset size."""


class BudgetExhausted(UserWarning):
    """Calibration ran out of budget before reaching the residual tolerance."""


class SchemaError(ValueError):
    """A dataset or pair file does not match its expected schema."""


class BadSpecError(ValueError):
    """A network specification is inconsistent."""


class DivergenceError(ArithmeticError):
    """Training loss became non-finite."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class ModelFileError(ValueError):
    """A saved model file is truncated, corrupt or otherwise unreadable."""


class VersionMismatchError(ModelFileError):
    """A saved model file was written by an incompatible format version."""
