from typing import Optional


class SrbGradientError(Exception):
    """Base class for srb-gradient errors"""
    pass


class NumericalError(SrbGradientError):
    """Base class for failures inside the numerical kernels.

    Carries the trajectory step at which the failure happened, when known.
    """

    def __init__(self, message: str = "", step: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.step = step

    def with_step(self, step: int) -> "NumericalError":
        """Attach a step index unless an inner loop already did"""
        if self.step is None:
            self.step = step
        return self

    def __str__(self):
        if self.step is None:
            return self.message
        return f"{self.message} (step {self.step})"


class DegenerateBasis(NumericalError):
    """Unstable basis collapsed during QR (m too large or a tangency)"""
    pass


class SingularR(NumericalError):
    """R factor cannot be inverted"""
    pass


class NonFiniteState(NumericalError):
    """A tangent, curvature or integrand value became NaN or infinite"""
    pass


class SingularJacobian(NumericalError):
    """Jacobian determinant vanished along the orbit"""
    pass


class DerivativeSingularity(NumericalError):
    """Map derivative is unbounded at the evaluation point"""
    pass


class ZeroDerivative(NumericalError):
    """Scalar recursion hit a vanishing first derivative"""
    pass


class AmbiguousSpectrum(NumericalError):
    """A Lyapunov exponent is too close to zero to classify"""
    pass


class DimensionMismatch(NumericalError):
    """Operands have incompatible shapes"""
    pass


class EmptyRow(NumericalError):
    """Histogram row holds no visits"""
    pass


class ConfigError(SrbGradientError):
    """Base exception for configuration errors"""
    pass


class ConfigValidationError(ConfigError):
    """Raised when a config field is missing or has an invalid value"""
    pass


class UnknownMapError(ConfigError):
    """Raised for a map name that is not registered"""
    pass


class UnknownObservableError(ConfigError):
    """Raised for an observable name that is not registered"""
    pass
