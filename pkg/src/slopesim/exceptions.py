"""Exception hierarchy shared across the package."""


class SlopesimError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SlopesimError):
    """A parameter is outside its mathematical domain (SD < 0, |rho| > 1, ...)."""


class InsufficientDataError(SlopesimError):
    """Too few subjects/observations for the requested computation."""


class RankDeficiencyError(SlopesimError):
    """A design matrix is (numerically) rank deficient.

    ``columns`` names the offending design columns so callers can report
    which regressors are collinear.
    """

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class InflationInfeasibleError(SlopesimError):
    """The empirical or fitted random-effect covariance is singular, so the
    re-inflation transform cannot be formed."""


class SchemaError(SlopesimError):
    """A CSV or config file violates the expected schema.

    ``line`` is the 1-based line number of the first offending record when
    known.
    """

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line
