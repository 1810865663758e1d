"""Backward regression solver for BSDEs with random terminal time"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exitctrl.exceptions import NumericalError, SchemaError
from exitctrl.expr import CoefficientExpr, EvalEnv, add, gradient, hessian, x as coord
from exitctrl.paths import PathBundle, Policy, StopRule, simulate
from exitctrl.problem import ControlProblem
from exitctrl.regression import regress
from exitctrl.schemas import RegressionConfig, SimConfig

logger = logging.getLogger(__name__)

DRIVER_KINDS = ("expression", "test_function", "frozen", "lower_bound")


def default_test_function(d: int) -> CoefficientExpr:
    """phi(x) = sum of x_i^4"""
    return add(*[coord(i) ** 4 for i in range(d)])


@dataclass(frozen=True)
class TestFunction:
    """Smooth phi(x) with explicit gradient and Hessian trees"""
    __test__ = False

    phi: CoefficientExpr
    grad: Tuple[CoefficientExpr, ...]
    hess: Tuple[Tuple[CoefficientExpr, ...], ...]

    @classmethod
    def from_expr(cls, phi: CoefficientExpr, d: int) -> "TestFunction":
        phi.check("terminal", d, path="phi")
        return cls(phi, gradient(phi, d), hessian(phi, d))

    @property
    def d(self) -> int:
        return len(self.grad)

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.phi.evaluate(EvalEnv(np.atleast_2d(x)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        env = EvalEnv(np.atleast_2d(x))
        return np.column_stack([g.evaluate(env) for g in self.grad])

    def hessian(self, x: np.ndarray) -> np.ndarray:
        env = EvalEnv(np.atleast_2d(x))
        rows = [np.column_stack([h.evaluate(env) for h in row]) for row in self.hess]
        return np.stack(rows, axis=1)

    def to_doc(self) -> Dict[str, Any]:
        return {"phi": self.phi.to_doc()}


@dataclass(frozen=True)
class Driver:
    """
    BSDE driver.

    expression evaluates a tree in (x, y, z, v). test_function is
    F(x, y, z, v) = L(x, v)phi(x) + f(x, y + phi(x), z + grad phi(x) sigma(x, v), v);
    frozen is the same F with x pinned to `point`; lower_bound is
    F0 - L0 |y| - L0 |z|. `shift` is added to every kind.
    """
    kind: str
    expr: Optional[CoefficientExpr] = None
    phi: Optional[TestFunction] = None
    point: Optional[Tuple[float, ...]] = None
    F0: float = 0.0
    L0: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in DRIVER_KINDS:
            raise SchemaError(f"unknown driver kind '{self.kind}'", "driver.kind")
        if self.kind == "expression" and self.expr is None:
            raise SchemaError("expression driver needs an expression", "driver.expr")
        if self.kind in ("test_function", "frozen") and self.phi is None:
            raise SchemaError(f"{self.kind} driver needs a test function", "driver.phi")
        if self.kind == "frozen" and self.point is None:
            raise SchemaError("frozen driver needs a point", "driver.point")
        if self.kind == "lower_bound" and self.L0 < 0:
            raise SchemaError("L0 must be nonnegative", "driver.L0")

    @classmethod
    def expression(cls, expr: CoefficientExpr) -> "Driver":
        return cls("expression", expr=expr)

    @classmethod
    def from_problem(cls, problem: ControlProblem) -> "Driver":
        return cls.expression(problem.f)

    @classmethod
    def test_function(cls, phi: TestFunction) -> "Driver":
        return cls("test_function", phi=phi)

    @classmethod
    def frozen(cls, phi: TestFunction, point) -> "Driver":
        return cls("frozen", phi=phi, point=tuple(float(c) for c in np.atleast_1d(point)))

    @classmethod
    def lower_bound(cls, F0: float, L0: float) -> "Driver":
        return cls("lower_bound", F0=float(F0), L0=float(L0))

    def shifted(self, c: float) -> "Driver":
        return replace(self, shift=self.shift + float(c))

    def _test_function_value(self, problem: ControlProblem, x, y, z, v) -> np.ndarray:
        phi = self.phi
        grad = phi.gradient(x)
        sigma = problem.diffusion(x, v)
        lphi = problem.generator(grad, phi.hessian(x), x, v)
        z_shift = z + np.einsum("ni,nim->nm", grad, sigma)
        return lphi + problem.driver(x, y + phi.value(x), z_shift, v)

    def evaluate(self, problem: ControlProblem, x: np.ndarray, y: np.ndarray, z: np.ndarray,
                 v: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.atleast_2d(x)
        n = x.shape[0]
        y = np.broadcast_to(np.asarray(y, dtype=float), (n,))
        z = np.asarray(z, dtype=float)
        if z.size == n * problem.m:
            z = z.reshape(n, problem.m)
        z = np.broadcast_to(z, (n, problem.m))
        if self.kind == "expression":
            v_arr = problem.controls_for(v, n)
            out = self.expr.evaluate(EvalEnv(x, v_arr, y, z))
        elif self.kind == "test_function":
            out = self._test_function_value(problem, x, y, z, v)
        elif self.kind == "frozen":
            pinned = np.broadcast_to(np.asarray(self.point), (n, problem.d))
            out = self._test_function_value(problem, pinned, y, z, v)
        else:
            out = self.F0 - self.L0 * np.abs(y) - self.L0 * np.linalg.norm(z, axis=1)
        return np.broadcast_to(out, (n,)) + self.shift

    def to_doc(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {"kind": self.kind, "shift": self.shift}
        if self.expr is not None:
            doc["expr"] = self.expr.to_doc()
        if self.phi is not None:
            doc["phi"] = self.phi.to_doc()
        if self.point is not None:
            doc["point"] = list(self.point)
        if self.kind == "lower_bound":
            doc.update(F0=self.F0, L0=self.L0)
        return doc


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    n_paths: int
    censored_fraction: float = 0.0
    label: str = ""

    def to_doc(self) -> Dict[str, Any]:
        return {"label": self.label, "value": self.value, "stderr": self.stderr,
                "n_paths": self.n_paths, "censored_fraction": self.censored_fraction}


@dataclass
class BsdeSolution:
    """
    Y and Z on the bundle's ragged rows.

    Rows at or after a path's stop step hold the terminal value and Z = 0.
    `pathwise` is the terminal value plus the driver integral along each
    path; its spread gives the standard error of y0.
    """
    bundle: PathBundle
    stop: np.ndarray
    terminal: np.ndarray
    flat_y: np.ndarray
    flat_z: np.ndarray
    y0: float
    stderr: float
    config: RegressionConfig
    pathwise: np.ndarray
    convention_applied: bool = True

    @property
    def censored_fraction(self) -> float:
        return self.bundle.censored_fraction

    def y_at(self, step: int) -> np.ndarray:
        return self.flat_y[self.bundle.rows_at(step)]

    def z_at(self, step: int) -> np.ndarray:
        z = self.flat_z[self.bundle.rows_at(step)]
        return np.where((step < self.stop)[:, None], z, 0.0)

    def estimate(self, label: str = "") -> CostEstimate:
        return CostEstimate(self.y0, self.stderr, self.bundle.n_paths, self.censored_fraction, label)

    def summary(self) -> Dict[str, Any]:
        return {
            "y0": self.y0,
            "stderr": self.stderr,
            "censored_fraction": self.censored_fraction,
            "n_paths": self.bundle.n_paths,
            "convention_applied": self.convention_applied,
            "config": self.config.model_dump(),
        }

    def solution_frame(self) -> pd.DataFrame:
        bundle = self.bundle
        counts = bundle.last_step + 1
        path_id = np.repeat(np.arange(bundle.n_paths), counts)
        step = np.arange(self.flat_y.size) - np.repeat(bundle.offsets[:-1], counts)
        keep = step <= self.stop[path_id]
        frame = pd.DataFrame({"path_id": path_id[keep], "step": step[keep], "y": self.flat_y[keep]})
        for j in range(self.flat_z.shape[1]):
            frame[f"z_{j}"] = self.flat_z[keep, j]
        return frame


def solve_bsde(
    problem: ControlProblem,
    bundle: PathBundle,
    terminal: Optional[CoefficientExpr] = None,
    driver: Optional[Driver] = None,
    config: Optional[RegressionConfig] = None,
    stop_rule: Optional[StopRule] = None,
    eta: Optional[np.ndarray] = None,
) -> BsdeSolution:
    """
    Backward induction on a simulated bundle.

    Args:
        problem: Problem the bundle was simulated under
        bundle: Simulated paths
        terminal: Terminal expression evaluated at the stopped state (default g)
        driver: Driver (default the problem's f)
        config: Regression basis (default by dimension)
        stop_rule: Optional Theta; paths stop at min(exit step, Theta step)
        eta: Optional per-path terminal values at the stop step, overriding `terminal`

    Returns:
        BsdeSolution with y0 the path average of Y at step 0
    """
    config = config or RegressionConfig.default_for(problem.d)
    driver = driver or Driver.from_problem(problem)
    dt = bundle.dt
    n_paths = bundle.n_paths
    starts = bundle.offsets[:-1]
    stop = stop_rule.steps(bundle) if stop_rule is not None else bundle.last_step.copy()

    if eta is not None:
        xi = np.asarray(eta, dtype=float).reshape(n_paths)
    else:
        points = bundle.flat_states[starts + stop].copy()
        projected = bundle.censored & (stop == bundle.last_step)
        if np.any(projected):
            logger.warning("terminal taken at the projected final state of %d censored paths", int(projected.sum()))
            points[projected] = problem.domain.closest_boundary_point(points[projected])
        xi = (terminal or problem.g).evaluate(EvalEnv(points))

    counts = bundle.last_step + 1
    path_of_row = np.repeat(np.arange(n_paths), counts)
    step_of_row = np.arange(bundle.flat_states.shape[0]) - np.repeat(starts, counts)
    flat_y = np.where(step_of_row >= stop[path_of_row], xi[path_of_row], np.nan)
    flat_z = np.zeros((flat_y.size, problem.m))

    y_next = xi.copy()
    pathwise = xi.copy()
    controls = bundle.controls.array
    for n in range(int(stop.max()) - 1, -1, -1):
        active = np.flatnonzero(n < stop)
        rows = starts[active] + n
        xs = bundle.flat_states[rows]
        target = y_next[active]
        cond = regress(xs, target, config, problem.domain, n)
        dB = bundle.flat_increments[rows]
        z = regress(xs, (target - cond)[:, None] * dB / dt, config, problem.domain, n)
        v = controls[bundle.flat_controls[rows]]
        y = cond
        for _ in range(config.picard_iterations):
            y = cond + driver.evaluate(problem, xs, y, z, v) * dt
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite Y at step {n}")
        flat_y[rows] = y
        flat_z[rows] = z
        y_next[active] = y
        pathwise[active] += driver.evaluate(problem, xs, y, z, v) * dt

    y_start = flat_y[starts]
    y0 = float(np.mean(y_start))
    stderr = float(np.std(pathwise, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    logger.debug("bsde solved over %d steps: y0=%.6g (stderr %.2g)", int(stop.max()), y0, stderr)
    return BsdeSolution(bundle, stop, xi, flat_y, flat_z, y0, stderr, config, pathwise)


def backward_semigroup(
    problem: ControlProblem,
    bundle: PathBundle,
    stop_rule: StopRule,
    eta: np.ndarray,
    config: Optional[RegressionConfig] = None,
    driver: Optional[Driver] = None,
) -> CostEstimate:
    """G_{tau ^ Theta}[eta]: Y at time 0 of the BSDE with terminal eta at tau ^ Theta"""
    solution = solve_bsde(problem, bundle, driver=driver, config=config, stop_rule=stop_rule, eta=eta)
    return solution.estimate("semigroup")


def cost(
    problem: ControlProblem,
    policy: Policy,
    x0,
    sim: SimConfig,
    config: Optional[RegressionConfig] = None,
    driver: Optional[Driver] = None,
) -> CostEstimate:
    """Recursive cost J(x0, policy): simulate, then solve with terminal g at exit"""
    bundle = simulate(problem, policy, x0, sim)
    return solve_bsde(problem, bundle, driver=driver, config=config).estimate(policy.label)


@dataclass
class ValueEstimate:
    value: float
    stderr: float
    best_index: int
    best_policy: Policy
    table: List[CostEstimate] = field(default_factory=list)

    def to_doc(self) -> Dict[str, Any]:
        return {
            "u_hat": self.value,
            "stderr": self.stderr,
            "best_index": self.best_index,
            "best_policy": self.best_policy.label,
            "candidates": [c.to_doc() for c in self.table],
        }


def candidate_policies(problem: ControlProblem, value_field=None) -> List[Policy]:
    """All constant policies over V_h, plus the feedback policy of a value field"""
    policies = [Policy.constant(problem.controls, i) for i in range(len(problem.controls))]
    if value_field is not None:
        from exitctrl.hjb import extract_policy

        policies.append(extract_policy(value_field, problem))
    return policies


def estimate_value(
    problem: ControlProblem,
    x0,
    policies: Optional[Sequence[Policy]] = None,
    sim: Optional[SimConfig] = None,
    config: Optional[RegressionConfig] = None,
    value_field=None,
) -> ValueEstimate:
    """
    Minimum of the cost over candidate policies.

    Every candidate is simulated with the same seed. Ties go to the lowest
    candidate index.
    """
    sim = sim or SimConfig()
    candidates = list(policies) if policies is not None else candidate_policies(problem, value_field)
    if not candidates:
        raise SchemaError("at least one candidate policy is required", "policies")
    table = [cost(problem, policy, x0, sim, config) for policy in candidates]
    best = int(np.argmin([c.value for c in table]))
    logger.info("value at %s: %.6g via %s", np.asarray(x0).tolist(), table[best].value, candidates[best].label)
    return ValueEstimate(table[best].value, table[best].stderr, best, candidates[best], table)
