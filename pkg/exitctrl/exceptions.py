"""Error hierarchy with CLI exit codes"""
from typing import Optional


class ExitCtrlError(Exception):
    """Base error; exit_code is what the CLI returns when it escapes a command"""
    exit_code = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# Configuration errors (exit 2)

class ConfigError(ExitCtrlError):
    """Invalid input document; `path` names the offending JSON path"""
    exit_code = 2

    def __init__(self, detail: str, path: str = ""):
        message = f"{path}: {detail}" if path else detail
        super().__init__(message)
        self.path = path


class SchemaError(ConfigError):
    pass


class DimensionMismatchError(ConfigError):
    pass


class UnknownCatalogEntryError(ConfigError):
    pass


class ExpressionTypeError(ConfigError):
    """A y/z/v node appears where the coefficient has no such argument"""


class DomainMembershipError(ConfigError):
    """A point lies outside the set an operation is defined on"""


# Numerical errors (exit 3)

class NumericalError(ExitCtrlError):
    exit_code = 3


class NonFiniteStateError(NumericalError):
    def __init__(self, path_index: int, step: int):
        super().__init__(f"non-finite state on path {path_index} at step {step}")
        self.path_index = path_index
        self.step = step


class RegressionSingularError(NumericalError):
    def __init__(self, step: int, rank: int, n_features: int):
        super().__init__(
            f"regression system singular at step {step} (rank {rank} < {n_features}); "
            "raise the ridge regularization"
        )
        self.step = step
        self.rank = rank


class NonMonotoneStencilError(NumericalError):
    def __init__(self, node: tuple, weight: float):
        super().__init__(
            f"non-monotone stencil at node {node} (neighbour weight {weight:.3g}); "
            "refine the grid or enable upwinding"
        )
        self.node = node
        self.weight = weight


class IterationCapError(NumericalError):
    def __init__(self, what: str, iterations: int, residual: float):
        super().__init__(f"{what} did not converge in {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class NonSmoothExpressionError(NumericalError):
    pass


# Check preconditions

class CheckRefusedError(ExitCtrlError):
    """Raised inside a check when its preconditions fail; reported as skipped"""

    def __init__(self, detail: str, measured: Optional[float] = None):
        super().__init__(detail)
        self.measured = measured
