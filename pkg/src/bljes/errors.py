class NumericError(ArithmeticError):
    """A factorization or evaluation could not be repaired (non-finite values, jitter exhausted)."""


class DegenerateConditioningError(NumericError):
    """Conditioning on a coordinate whose total variance is zero."""


class SingularHessianError(NumericError):
    """The lower-level Hessian is not invertible at the inner optimum."""


class HyperparameterFitWarning(RuntimeWarning):
    """Marginal-likelihood fitting failed at every restart; the initial values were kept."""
