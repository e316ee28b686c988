"""Exception types raised by fefkit."""


class FefError(Exception):
    """Base class for all fefkit errors."""


class DimensionError(FefError, ValueError):
    """Matrix or signal dimensions do not chain."""


class NumericFailure(FefError, ArithmeticError):
    """A computation produced non-finite values."""


class SimulationOverflow(NumericFailure):
    def __init__(self, sample, message=None):
        self.sample = sample
        super().__init__(message or f"simulation produced non-finite values at sample {sample}")


class NoStabilizingSolution(FefError):
    """A Riccati equation has no stabilizing solution (or the iteration failed to find it)."""


class IllConditionedRegression(FefError):
    def __init__(self, cond):
        self.cond = cond
        super().__init__(f"regressor matrix is rank deficient (condition number {cond:.3g}); "
                         "pass ridge > 0")


class ZeroFaultSubsystem(FefError):
    """Every fault Markov parameter is below the detection threshold."""


class AssumptionViolated(FefError):
    """The leading fault Markov parameter does not have full column rank."""


class RealizationDegenerate(FefError):
    def __init__(self, what, cond):
        self.cond = cond
        super().__init__(f"{what} is numerically singular (condition number {cond:.3g})")


class DesignFailed(FefError):
    def __init__(self, message, spectrum=None):
        self.spectrum = spectrum
        super().__init__(message)


class DivergenceError(FefError):
    def __init__(self, sample):
        self.sample = sample
        super().__init__(f"filter state diverged at sample {sample}")
