"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad shapes, invalid configuration values, or misuse of an API contract."""


class NumericError(ArithmeticError):
    """Non-finite values or domain violations inside a numeric operation."""


class TrainingDiverged(NumericError):
    """A loss term became non-finite during training.

    Carries enough context to point at the offending step.
    """

    def __init__(self, step: int, term: str, value: float):
        self.step = step
        self.term = term
        self.value = value
        super().__init__(
            f"non-finite value in '{term}' at step {step}: {value!r}"
        )
