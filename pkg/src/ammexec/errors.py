"""Exception and warning types shared across the package."""


class AmmExecError(Exception):
    """Base class for all package-specific errors."""


class ExpansionDomainError(AmmExecError, ValueError):
    """Trade is far too large for the first-order price expansion to be meaningful."""


class ExpansionAccuracyWarning(UserWarning):
    """Trade size stretches the first-order expansion; exact formulas remain available."""


class DriftConditionError(AmmExecError, ValueError):
    """Drift violates the positive-definiteness condition mu < 3*sigma^2/4 + 4*min(rates)."""


class ConcavityError(AmmExecError, ValueError):
    """A backward-recursion step produced a non-concave one-period objective."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(
            f"quadratic coefficient {value:.6g} is not positive at step {step}; "
            "the one-period objective is not concave for these parameters"
        )


class FitConvergenceError(AmmExecError, RuntimeError):
    """Kernel fit hit its iteration cap; carries the best result found so far."""

    def __init__(self, message: str, best_result):
        self.best_result = best_result
        super().__init__(message)


class ConfigError(AmmExecError, ValueError):
    """Scenario configuration failed validation; lists every violated field."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"invalid scenario configuration:\n{lines}")
