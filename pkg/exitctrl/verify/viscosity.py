"""Short-horizon test-function chain behind the viscosity property"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from exitctrl.assumptions import lipschitz_of_test_driver
from exitctrl.bsde import CostEstimate, Driver, TestFunction, default_test_function, solve_bsde
from exitctrl.exceptions import CheckRefusedError
from exitctrl.expr import CoefficientExpr, is_polynomial
from exitctrl.paths import BOUNDARY_TOL, Policy, simulate
from exitctrl.problem import ControlProblem
from exitctrl.schemas import CheckReport, SimConfig
from exitctrl.verify.common import (
    CheckContext,
    combined_stderr,
    loglog_slope,
    make_report,
    skipped_report,
    with_violations,
)

logger = logging.getLogger(__name__)

SLOPE_THRESHOLD = 1.4
ODE_AGREEMENT = 1e-10
TIE_TOL = 1e-12


def lower_bound_solution(F0: float, L0: float, epsilon: float) -> float:
    """y(0) for y' = -F0 + L0 |y| on [0, epsilon] with y(epsilon) = 0"""
    if L0 == 0:
        return F0 * epsilon
    if F0 >= 0:
        return -(F0 / L0) * math.expm1(-L0 * epsilon)
    return (F0 / L0) * math.expm1(L0 * epsilon)


def lower_bound_solution_ode(F0: float, L0: float, epsilon: float) -> float:
    """Same quantity by DOP853 in reversed time"""
    sol = solve_ivp(lambda r, y: F0 - L0 * np.abs(y), (0.0, epsilon), [0.0],
                    method="DOP853", rtol=1e-13, atol=1e-14)
    return float(sol.y[0, -1])


@dataclass(eq=False)
class ViscosityTestBundle:
    """Estimates of the four chain quantities at one horizon epsilon"""
    epsilon: float
    phi: TestFunction
    x: np.ndarray
    F: Driver
    F0: float
    L0: float
    y1_0: CostEstimate
    y2_0: CostEstimate
    y3_0: CostEstimate
    y4_0: float
    y4_ode: float
    semigroup: CostEstimate
    phi_x: float
    stderr12: float
    dt: float
    policy_index: int = 0
    policy_override: bool = False

    @property
    def gap12(self) -> float:
        return abs(self.y1_0.value - self.y2_0.value)

    @property
    def gap34(self) -> float:
        return abs(self.y3_0.value - self.y4_0)

    @property
    def stderr34(self) -> float:
        return self.y3_0.stderr

    @property
    def ode_gap(self) -> float:
        return abs(self.y4_0 - self.y4_ode)

    @property
    def identity_gap(self) -> float:
        """|Y1 - (G[phi] - phi(x))|"""
        return abs(self.y1_0.value - (self.semigroup.value - self.phi_x))

    def row(self) -> Dict[str, float]:
        return {
            "epsilon": self.epsilon,
            "gap12": self.gap12,
            "gap34": self.gap34,
            "stderr12": self.stderr12,
            "stderr34": self.stderr34,
            "y1": self.y1_0.value,
            "y2": self.y2_0.value,
            "y3": self.y3_0.value,
            "y4": self.y4_0,
            "ode_gap": self.ode_gap,
            "identity_gap": self.identity_gap,
        }

    def to_doc(self) -> Dict[str, Any]:
        doc = self.row()
        doc.update(phi=self.phi.to_doc(), x=self.x.tolist(), F=self.F.to_doc(), F0=self.F0, L0=self.L0,
                   policy_index=self.policy_index, policy_override=self.policy_override,
                   stderrs={"y1": self.y1_0.stderr, "y2": self.y2_0.stderr,
                            "y3": self.y3_0.stderr, "semigroup": self.semigroup.stderr})
        return doc


def _resolve_inputs(ctx: CheckContext, x, phi):
    problem = ctx.problem
    point = np.asarray(x if x is not None else (ctx.verify.section5_point or ctx.x0), dtype=float).reshape(problem.d)
    if ctx.domain.signed_distance(point[None, :])[0] <= BOUNDARY_TOL:
        raise CheckRefusedError("the test point must lie in the open domain")
    if phi is None:
        doc = ctx.verify.section5_phi
        phi = CoefficientExpr.from_doc(doc, "verify.section5_phi") if doc is not None else default_test_function(problem.d)
    if not is_polynomial(phi):
        raise CheckRefusedError("the test function must be a polynomial")
    index = ctx.verify.section5_policy_index
    if index is not None and index >= len(problem.controls):
        raise CheckRefusedError(f"policy index {index} outside the control set")
    return point, TestFunction.from_expr(phi, problem.d), index


def infimal_control(problem: ControlProblem, F: Driver, point: np.ndarray) -> Tuple[float, int]:
    """F0 = min over V of F(x, 0, 0, v) and the lowest control index attaining it"""
    controls = problem.controls.array
    k = len(controls)
    values = F.evaluate(problem, np.repeat(point[None, :], k, axis=0), np.zeros(k), np.zeros((k, problem.m)), controls)
    best = float(np.min(values))
    index = int(np.argmax(values <= best + TIE_TOL * max(1.0, abs(best))))
    return best, index


def section5_bundles(ctx: CheckContext, x=None, phi: Optional[CoefficientExpr] = None,
                     epsilons: Optional[Sequence[float]] = None) -> List[ViscosityTestBundle]:
    """
    Solve the four chain BSDEs on one path bundle per horizon.

    Y1 has driver F and zero terminal at tau ^ epsilon, Y2 freezes x at the
    test point, Y3 uses F0 - L0|y| - L0|z| and Y4 is the deterministic
    solution of the matching ODE.
    """
    problem = ctx.problem
    verify = ctx.verify
    point, test_function, override = _resolve_inputs(ctx, x, phi)
    F = Driver.test_function(test_function)
    F0, index = infimal_control(problem, F, point)
    if override is not None:
        index = override
    policy = Policy.constant(problem.controls, index)
    L0 = problem.constants.L0
    if L0 is None:
        L0 = lipschitz_of_test_driver(lambda xs, ys, zs, vs: F.evaluate(problem, xs, ys, zs, vs), problem, ctx.probe)
    frozen = Driver.frozen(test_function, point)
    lower = Driver.lower_bound(F0, L0)
    phi_x = float(test_function.value(point[None, :])[0])

    bundles = []
    for eps in epsilons if epsilons is not None else verify.epsilons:
        sim = SimConfig(dt=eps / verify.section5_steps, t_max=eps, n_paths=verify.section5_paths,
                        master_seed=ctx.sim.master_seed, exit_correction=ctx.sim.exit_correction)
        bundle = simulate(problem, policy, point, sim)
        zero = np.zeros(bundle.n_paths)
        y1 = solve_bsde(problem, bundle, driver=F, config=ctx.regression, eta=zero)
        y2 = solve_bsde(problem, bundle, driver=frozen, config=ctx.regression, eta=zero)
        y3 = solve_bsde(problem, bundle, driver=lower, config=ctx.regression, eta=zero)
        stopped = bundle.flat_states[bundle.offsets[:-1] + bundle.last_step]
        semigroup = solve_bsde(problem, bundle, config=ctx.regression, eta=test_function.value(stopped))
        diff = y1.pathwise - y2.pathwise
        stderr12 = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
        bundles.append(ViscosityTestBundle(
            epsilon=float(eps), phi=test_function, x=point, F=F, F0=F0, L0=L0,
            y1_0=y1.estimate("y1"), y2_0=y2.estimate("y2"), y3_0=y3.estimate("y3"),
            y4_0=lower_bound_solution(F0, L0, eps), y4_ode=lower_bound_solution_ode(F0, L0, eps),
            semigroup=semigroup.estimate("semigroup"), phi_x=phi_x, stderr12=stderr12, dt=sim.dt,
            policy_index=index, policy_override=override is not None,
        ))
        logger.debug("epsilon %g: gap12 %.3e, gap34 %.3e", eps, bundles[-1].gap12, bundles[-1].gap34)
    return bundles


def check_section5_chain(ctx: CheckContext, x=None, phi: Optional[CoefficientExpr] = None,
                         epsilons: Optional[Sequence[float]] = None) -> CheckReport:
    """
    Epsilon scaling of |Y1 - Y2| and |Y3 - Y4|, with the chain identities asserted at every epsilon.

    Horizons whose standard error exceeds the gap are dropped from the
    corresponding fit and listed in the details.
    """
    verify = ctx.verify
    bundles = section5_bundles(ctx, x, phi, epsilons)
    rows = [b.row() for b in bundles]

    fit12 = [b for b in bundles if b.gap12 > 0 and b.stderr12 <= b.gap12]
    fit34 = [b for b in bundles if b.gap34 > 0 and b.stderr34 <= b.gap34]
    dropped = {
        "gap12": [b.epsilon for b in bundles if b not in fit12],
        "gap34": [b.epsilon for b in bundles if b not in fit34],
    }
    for which, eps in dropped.items():
        if eps:
            logger.warning("%s: epsilon %s dropped, stderr exceeds the gap", which, eps)
    details = {"rows": rows, "dropped": dropped, "bundles": [b.to_doc() for b in bundles]}
    if len(fit12) < 2 or len(fit34) < 2:
        return skipped_report("section5", "fewer than two horizons above the noise level", details=details)

    slope12 = loglog_slope([b.epsilon for b in fit12], [b.gap12 for b in fit12])
    slope34 = loglog_slope([b.epsilon for b in fit34], [b.gap34 for b in fit34])
    details.update(slope12=slope12, slope34=slope34)

    identity = max(
        b.identity_gap - (3.0 * combined_stderr(b.y1_0.stderr, b.semigroup.stderr) + verify.section5_bias_budget * b.dt)
        for b in bundles
    )
    ordering = max(
        b.y3_0.value - b.y2_0.value - 3.0 * combined_stderr(b.y3_0.stderr, b.y2_0.stderr) for b in bundles
    )
    ode = max(b.ode_gap for b in bundles) - ODE_AGREEMENT
    slope = min(slope12, slope34)
    report = make_report(
        "section5", slope, SLOPE_THRESHOLD,
        f"epsilon slopes {slope12:.3f} (|Y1-Y2|) and {slope34:.3f} (|Y3-Y4|)",
        higher_is_better=True,
        sample_sizes={"paths": verify.section5_paths, "epsilons": len(bundles)},
        seeds=ctx.seeds, details=details,
    )
    return with_violations(report, {"semigroup identity": identity, "Y3 <= Y2": ordering, "ODE agreement": ode})
