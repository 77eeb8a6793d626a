"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError -> 3,
OSError -> 4 (see cli.main).
"""


class HJBPortfolioError(Exception):
    """Base class for all package errors."""


class ConfigError(HJBPortfolioError):
    """Bad user input: config files, CSV layout, invalid parameter combinations."""


class MarketDataError(ConfigError):
    """Market CSV could not be parsed into a valid MarketSpec."""


class NumericError(HJBPortfolioError):
    """A numerical guard tripped (PD check, QP convergence, PDE bounds...)."""


class NotPositiveDefiniteError(NumericError):
    """Covariance matrix failed the positive-definiteness check."""

    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"covariance matrix is not positive definite: "
            f"smallest eigenvalue {min_eigenvalue:.6e} <= 1e-12"
        )


class QPConvergenceError(NumericError):
    """Active-set QP solver did not converge within the iteration budget."""


class PhiRangeError(NumericError):
    """A phi value left the tabulated domain of the alpha table."""


class MaxPrincipleError(NumericError):
    """PDE solution violated the discrete maximum-principle bounds."""


class SimulationError(NumericError):
    """Path simulation produced a non-finite state."""
