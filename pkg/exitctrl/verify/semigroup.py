"""Dynamic programming, comparison and stability checks on shared path bundles"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from exitctrl.assumptions import ProbeSample, draw_probe_sample
from exitctrl.bsde import Driver, backward_semigroup, candidate_policies, solve_bsde
from exitctrl.exceptions import CheckRefusedError
from exitctrl.expr import ONE, add, const, x as coord, y as y_expr
from exitctrl.paths import PathBundle, Policy, StopRule, simulate
from exitctrl.schemas import CheckReport
from exitctrl.utils.rng import CHECK_STREAM, probe_generator
from exitctrl.verify.common import (
    CheckContext,
    combined_stderr,
    loglog_slope,
    make_report,
    shrink_domain,
    skipped_report,
    with_violations,
)

logger = logging.getLogger(__name__)

CENSORING_LIMIT = 0.01
NOISE_FRACTION = 0.3


def _paired_stderr(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.asarray(a) - np.asarray(b)
    if diff.size < 2:
        return 0.0
    return float(np.std(diff, ddof=1) / math.sqrt(diff.size))


def stopped_terminal(ctx: CheckContext, bundle: PathBundle, stop: np.ndarray) -> np.ndarray:
    """g at the exit point for paths that left D before Theta, the reference u at X_Theta otherwise"""
    starts = bundle.offsets[:-1]
    points = bundle.flat_states[starts + stop]
    exited = (stop == bundle.last_step) & ~bundle.censored
    eta = ctx.value_field().interpolate(points)
    if np.any(exited):
        eta[exited] = ctx.problem.terminal(points[exited])
    return eta


def check_dpp(ctx: CheckContext, rule: StopRule, name: Optional[str] = None) -> CheckReport:
    """
    Compare the value at x0 with the best backward semigroup of the value at the stopped state.

    Every candidate policy is simulated once; the cost and the semigroup
    are solved on that same bundle. A deterministic Theta of 0 compares the
    reference value with the empty-interval semigroup.
    """
    name = name or f"dpp[{rule.kind}]"
    problem = ctx.problem
    field = ctx.value_field()
    policies = candidate_policies(problem, field)
    bundles = [simulate(problem, policy, ctx.x0, ctx.sim) for policy in policies]
    censored = max(b.censored_fraction for b in bundles)
    if censored > CENSORING_LIMIT:
        return skipped_report(name, f"{100 * censored:.2f}% of paths censored at t_max")

    rhs_table = [
        backward_semigroup(problem, b, rule, stopped_terminal(ctx, b, rule.steps(b)), ctx.regression)
        for b in bundles
    ]
    best_rhs = int(np.argmin([c.value for c in rhs_table]))
    rhs = rhs_table[best_rhs]

    if rule.kind == "time" and rule.time == 0:
        lhs_value = float(stopped_terminal(ctx, bundles[0], np.zeros(bundles[0].n_paths, dtype=int))[0])
        lhs_stderr = 0.0
        lhs_label = "reference"
    else:
        lhs_table = [solve_bsde(problem, b, config=ctx.regression).estimate(p.label)
                     for p, b in zip(policies, bundles)]
        best_lhs = int(np.argmin([c.value for c in lhs_table]))
        lhs_value, lhs_stderr = lhs_table[best_lhs].value, lhs_table[best_lhs].stderr
        lhs_label = policies[best_lhs].label

    gap = abs(lhs_value - rhs.value)
    tolerance = 3.0 * combined_stderr(lhs_stderr, rhs.stderr) + ctx.verify.bias_budget
    return make_report(
        name, gap, tolerance,
        f"|u(x0) - inf G[u(X_stop)]| = {gap:.4g} (lhs {lhs_value:.5g} via {lhs_label}, "
        f"rhs {rhs.value:.5g} via {policies[best_rhs].label})",
        sample_sizes={"paths": ctx.sim.n_paths, "candidates": len(policies)},
        seeds=ctx.seeds,
        details={
            "stop_rule": rule.to_doc(),
            "lhs": lhs_value,
            "rhs": rhs.value,
            "censored_fraction": censored,
            "candidates": [c.to_doc() for c in rhs_table],
        },
    )


def dpp_suite(ctx: CheckContext) -> List[CheckReport]:
    reports = [check_dpp(ctx, StopRule.at_time(theta), f"dpp[theta={theta:g}]") for theta in ctx.verify.dpp_thetas]
    fraction = ctx.verify.dpp_subdomain_fraction
    if fraction is not None:
        rule = StopRule.subdomain_exit(shrink_domain(ctx.domain, fraction))
        reports.append(check_dpp(ctx, rule, f"dpp[subdomain={fraction:g}]"))
    return reports


def _require_ordered(ctx: CheckContext, sample: ProbeSample, base: Driver, variant: Driver, what: str) -> None:
    lower = base.evaluate(ctx.problem, sample["x1"], sample["y1"], sample["z1"], sample["v"])
    upper = variant.evaluate(ctx.problem, sample["x1"], sample["y1"], sample["z1"], sample["v"])
    if np.any(upper < lower):
        raise CheckRefusedError(f"{what} variant is not ordered above the base on the probe sample")


def check_comparison(ctx: CheckContext, shifts: Optional[Sequence[float]] = None) -> CheckReport:
    """
    Drivers shifted up by positive constants must give larger y0 on a shared bundle.

    Every pair draws its own base driver f - a*y with a in [0, 1), which
    keeps the base in the monotone family of f. The constant-gap branch is
    asserted with zero tolerance. A terminal lifted by 0.3 must not lower
    y0 beyond 3 paired standard errors. Setting `invert_expectation`
    asserts the reverse ordering, which fails.
    """
    problem = ctx.problem
    verify = ctx.verify
    bundle = simulate(problem, Policy.constant(problem.controls, 0), ctx.x0, ctx.sim)
    base = solve_bsde(problem, bundle, config=ctx.regression)

    rng = probe_generator(ctx.probe.seed, stream=CHECK_STREAM)
    if shifts is None:
        shifts = rng.uniform(0.05, 1.0, verify.comparison_pairs)
    if any(c <= 0 for c in shifts):
        raise CheckRefusedError("driver shifts must be positive")
    coefficients = rng.uniform(0.0, 1.0, len(shifts))

    sample = draw_probe_sample(problem, ctx.probe)
    pairs = []
    for a, c in zip(coefficients, shifts):
        base_driver = Driver.expression(problem.f - const(float(a)) * y_expr())
        variant = base_driver.shifted(float(c))
        _require_ordered(ctx, sample, base_driver, variant, "driver")
        lower = solve_bsde(problem, bundle, driver=base_driver, config=ctx.regression)
        upper = solve_bsde(problem, bundle, driver=variant, config=ctx.regression)
        pairs.append({"y_coefficient": float(a), "shift": float(c), "y0": lower.y0, "y0_variant": upper.y0,
                      "gap": upper.y0 - lower.y0})
    gaps = np.array([p["gap"] for p in pairs])

    lifted = solve_bsde(problem, bundle, terminal=problem.g + 0.3, config=ctx.regression)
    terminal_gap = lifted.y0 - base.y0
    terminal_stderr = _paired_stderr(lifted.pathwise, base.pathwise)

    details = {"pairs": pairs, "terminal_gap": terminal_gap, "terminal_stderr": terminal_stderr}
    sizes = {"paths": bundle.n_paths, "pairs": len(pairs)}
    if verify.invert_expectation:
        report = make_report(
            "comparison", float(gaps.max()), 0.0,
            f"expected y0 to decrease under {len(pairs)} positive driver shifts; largest increase {gaps.max():.4g}",
            sample_sizes=sizes, seeds=ctx.seeds, details=details,
        )
    else:
        report = make_report(
            "comparison", float(gaps.min()), 0.0,
            f"smallest y0 increase over {len(pairs)} positive driver shifts: {gaps.min():.4g}",
            higher_is_better=True, sample_sizes=sizes, seeds=ctx.seeds, details=details,
        )
    return with_violations(report, {"terminal ordering": -(terminal_gap + 3.0 * terminal_stderr)})


def check_stability_trend(ctx: CheckContext, sizes: Optional[Sequence[float]] = None) -> CheckReport:
    """
    Squared y0 gaps must shrink quadratically in the perturbation size h.

    The perturbed data add h * (1 + |x|^2) to both the driver and the terminal.
    """
    problem = ctx.problem
    sizes = sorted(sizes or ctx.verify.stability_sizes, reverse=True)
    bundle = simulate(problem, Policy.constant(problem.controls, 0), ctx.x0, ctx.sim)
    base = solve_bsde(problem, bundle, config=ctx.regression)
    weight = add(ONE, *[coord(i) ** 2 for i in range(problem.d)])

    rows = []
    for h in sizes:
        bump = const(float(h)) * weight
        perturbed = solve_bsde(problem, bundle, terminal=problem.g + bump,
                               driver=Driver.expression(problem.f + bump), config=ctx.regression)
        gap = perturbed.y0 - base.y0
        rows.append({"h": float(h), "gap": gap, "squared_gap": gap * gap,
                     "stderr": _paired_stderr(perturbed.pathwise, base.pathwise)})
    details = {"rows": rows}

    smallest = rows[-1]
    if smallest["stderr"] > NOISE_FRACTION * abs(smallest["gap"]):
        return skipped_report("stability", f"noise dominates: stderr {smallest['stderr']:.3g} "
                              f"vs smallest gap {abs(smallest['gap']):.3g}", details=details)
    squared = np.array([r["squared_gap"] for r in rows])
    if np.any(squared <= 0):
        return skipped_report("stability", "a perturbation left y0 unchanged", details=details)

    slope = loglog_slope(sizes, squared)
    increase = float(np.max(np.diff(squared), initial=0.0))
    report = make_report(
        "stability", slope, 1.8,
        f"log-log slope of |dY(0)|^2 against h: {slope:.3f}",
        higher_is_better=True, sample_sizes={"paths": bundle.n_paths, "sizes": len(sizes)},
        seeds=ctx.seeds, details=details,
    )
    return with_violations(report, {"monotone decrease": increase})
