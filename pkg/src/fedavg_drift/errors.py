class NumericalError(RuntimeError):
    """Base class for numerical failures (CLI exit code 2)."""


class SingularProblemError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
