"""Exception hierarchy shared by all modules."""


class InterpError(Exception):
    """Base class for library errors."""


class ModelError(InterpError, ValueError):
    """Malformed model input (bad schema, inconsistent shapes)."""


class NumericalError(InterpError):
    """A numerical step failed; carries an optional diagnostic dict."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SingularDensity(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class FormMismatch(NumericalError):
    """Operator-form and spectral-form errors disagree beyond tolerance."""


class GridMismatch(InterpError, ValueError):
    pass


class InfeasibleClass(InterpError, ValueError):
    pass


class UnsupportedClass(InterpError, NotImplementedError):
    pass


class Stalled(NumericalError):
    pass


class MinimalityLost(NumericalError):
    pass
