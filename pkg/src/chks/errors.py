"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class CHKSError(Exception):
    """Base class for all solver errors."""


def _cell(index):
    if index is None:
        return None
    return tuple(int(i) for i in index) if hasattr(index, "__len__") else int(index)


class DomainViolation(CHKSError, ValueError):
    """A singular potential was evaluated outside its open domain (-1, 1).

    ``value`` is the offending argument with the smallest margin and
    ``margin`` is ``1 - |value|`` (non-positive when raised).
    """

    def __init__(self, value: float, margin: float, index=None):
        self.value = float(value)
        self.margin = float(margin)
        self.index = index = _cell(index)
        where = "" if index is None else f" at cell {index}"
        super().__init__(
            f"potential argument {self.value:.17g} outside (-1, 1){where} "
            f"(margin 1-|r| = {self.margin:.3e})"
        )


class NegativeSigma(CHKSError, ValueError):
    """A nutrient value below the admissible floor reached a source term."""

    def __init__(self, value: float, index=None):
        self.value = float(value)
        self.index = index = _cell(index)
        where = "" if index is None else f" at cell {index}"
        super().__init__(f"negative nutrient concentration {self.value:.3e}{where}")


class RangeViolation(CHKSError, ValueError):
    """The truncated nutrient variable reached the saturation level n+1."""

    def __init__(self, value: float, n: int, index=None):
        self.value = float(value)
        self.n = n
        self.index = index = _cell(index)
        where = "" if index is None else f" at cell {index}"
        super().__init__(
            f"truncated variable {self.value:.17g} >= {n + 1} (n = {n}){where}"
        )


class LinearSolveFailure(CHKSError, RuntimeError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = -1):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")


class NewtonDivergence(CHKSError, RuntimeError):
    """Newton iteration failed; ``history`` holds the residual norms seen so far."""

    def __init__(self, message: str, history):
        self.history = list(history)
        last = self.history[-1] if self.history else float("nan")
        super().__init__(f"{message} after {len(self.history)} residual evaluations (last {last:.3e})")


class PositivityLoss(CHKSError, RuntimeError):
    def __init__(self, value: float, index=None):
        self.value = float(value)
        self.index = index = _cell(index)
        super().__init__(f"nutrient update went negative: min sigma = {self.value:.3e} at cell {index}")


class TimeStepError(CHKSError, RuntimeError):
    """The positivity step restriction could not be met within the halving budget."""


class StepFailure(CHKSError, RuntimeError):
    """A time step failed inside ``advance``.

    Carries the step index, the partial diagnostics series and the
    underlying cause.
    """

    def __init__(self, step: int, t: float, cause: Exception, series=None, state=None):
        self.step = step
        self.t = t
        self.cause = cause
        self.series = series
        self.state = state
        super().__init__(f"step {step} (t = {t:.6g}) failed: {cause}")


class ConfigError(CHKSError, ValueError):
    """Configuration could not be parsed or was rejected by validation."""
