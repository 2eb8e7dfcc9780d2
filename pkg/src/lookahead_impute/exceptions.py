"""Exception hierarchy.

Everything raised deliberately by the package derives from
:class:`LookAheadImputeError` so callers (and the CLI) can map failures
to exit codes without catching unrelated errors.
"""


class LookAheadImputeError(Exception):
    pass


class SymmetryError(LookAheadImputeError, ValueError):
    """Matrix expected to be symmetric is not."""

    def __init__(self, residual, tol):
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"matrix is not symmetric: max |M - M^T| = {residual:.3e} exceeds {tol:.3e}"
        )


class NotPSDError(LookAheadImputeError, ValueError):
    """Matrix has an eigenvalue below the allowed negative slack."""


class NotPDError(LookAheadImputeError, ValueError):
    """Matrix expected to be positive definite is not."""


class DimensionError(LookAheadImputeError, ValueError):
    pass


class SimplexError(LookAheadImputeError, ValueError):
    """Weight vector is not on the probability simplex."""


class DataError(LookAheadImputeError, ValueError):
    """Malformed panel data (CSV content, masks, splits)."""


class ObservabilityError(DataError):
    """An asset has no observed value inside a required time window."""

    def __init__(self, column, window, name=None):
        self.column = column
        self.window = window
        label = f"{column} ({name})" if name is not None else f"{column}"
        super().__init__(
            f"asset column {label} has no observed entry in rows [0, {window})"
        )


class IncompatibleBiasSetError(LookAheadImputeError, ValueError):
    """Mechanism and bias set pair has no tractable reformulation."""


class UnboundedBiasError(LookAheadImputeError, ValueError):
    """Support function of a polyhedral bias set is unbounded."""


class ConvergenceError(LookAheadImputeError, RuntimeError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ConfigError(LookAheadImputeError, ValueError):
    pass
