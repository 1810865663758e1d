"""Regularity checks: Hoelder fit, barrier supermartingale, exit moments, grid convergence"""
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from exitctrl.assumptions import search_barrier_exponent
from exitctrl.catalog import build_catalog_problem, exact_solution, exit_moment_blowup, exit_moment_closed_form
from exitctrl.exceptions import CheckRefusedError
from exitctrl.hjb import solve_hjb
from exitctrl.paths import (
    MomentConvergence,
    Policy,
    barrier_value,
    exit_moment,
    exit_time_summary,
    simulate,
)
from exitctrl.problem import ControlProblem
from exitctrl.schemas import CheckReport, GridConfig, SimConfig
from exitctrl.utils.rng import CHECK_STREAM, probe_generator
from exitctrl.verify.common import CheckContext, loglog_slope, make_report, skipped_report, with_violations

logger = logging.getLogger(__name__)

HOLDER_THRESHOLD = 0.4
HOLDER_ANCHORS = 8
MIN_DECADES = 2.0
FLAT_DIFFERENCE = 1e-12
GRID_SLOPE = 1.8
BROWNIAN_BENCHMARKS = ("poisson1d", "semilinear1d")


# Hoelder exponent

def _pair_points(ctx: CheckContext, separations: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """HOLDER_ANCHORS pairs per separation, each pair inside the closed domain"""
    domain = ctx.domain
    rng = probe_generator(ctx.probe.seed, stream=CHECK_STREAM)
    groups = []
    for sep in separations:
        anchors = domain.sample_interior(rng, HOLDER_ANCHORS)
        direction = rng.standard_normal(anchors.shape)
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        partners = anchors + sep * direction
        flip = ~domain.contains(partners)
        partners[flip] = anchors[flip] - sep * direction[flip]
        keep = domain.contains(partners)
        groups.append((anchors[keep], partners[keep]))
    return groups


def check_holder(ctx: CheckContext, pairs: Optional[Sequence[Tuple[Sequence[float], Sequence[float]]]] = None) -> CheckReport:
    """
    Fit |u(x) - u(x')| <= C |x - x'|^h on the finite-difference value field.

    Without explicit pairs, separations are log-spaced between the
    configured bounds and each separation keeps the largest difference
    over a few random anchors.
    """
    verify = ctx.verify
    field = ctx.value_field()
    if pairs is not None:
        first = np.array([p[0] for p in pairs], dtype=float).reshape(len(pairs), -1)
        second = np.array([p[1] for p in pairs], dtype=float).reshape(len(pairs), -1)
        seps = np.linalg.norm(first - second, axis=1)
        du = np.abs(field.interpolate(first) - field.interpolate(second))
    else:
        grid_seps = np.geomspace(verify.holder_min_separation, verify.holder_max_separation, verify.holder_pairs)
        seps, du = [], []
        for sep, (a, b) in zip(grid_seps, _pair_points(ctx, grid_seps)):
            if a.shape[0]:
                seps.append(sep)
                du.append(float(np.max(np.abs(field.interpolate(a) - field.interpolate(b)))))
        seps, du = np.array(seps), np.array(du)

    positive = seps > 0
    seps, du = seps[positive], du[positive]
    if seps.size < 2:
        raise CheckRefusedError("fewer than two separated pairs")
    decades = math.log10(seps.max() / seps.min())
    if decades < MIN_DECADES:
        raise CheckRefusedError(f"separations span {decades:.2f} decades, need {MIN_DECADES:g}")

    details = {"pairs": [{"separation": float(s), "du": float(d)} for s, d in zip(seps, du)]}
    sizes = {"pairs": int(seps.size)}
    if np.all(du <= FLAT_DIFFERENCE):
        details["degenerate_fit"] = True
        return CheckReport(name="holder", status="pass", tolerance=HOLDER_THRESHOLD, sample_sizes=sizes,
                           seeds=[ctx.probe.seed], narrative="degenerate fit: u is constant on every pair",
                           details=details)

    fit = du > FLAT_DIFFERENCE
    exponent = loglog_slope(seps[fit], du[fit])
    constant = float(np.exp(np.mean(np.log(du[fit])) - exponent * np.mean(np.log(seps[fit]))))
    details.update(exponent=exponent, constant=constant, decades=decades)
    note = ctx.theta_note()
    return make_report(
        "holder", exponent, HOLDER_THRESHOLD,
        f"fitted |du| ~ {constant:.3g} |dx|^{exponent:.3f} over {decades:.1f} decades" + (f"; {note}" if note else ""),
        higher_is_better=True, sample_sizes=sizes, seeds=[ctx.probe.seed], details=details,
    )


# Barrier supermartingale

def _integrated_rate(theta: float, s: np.ndarray) -> np.ndarray:
    """Integral of exp(theta r / 2) over [0, s]"""
    if theta == 0:
        return s
    return (2.0 / theta) * np.expm1(0.5 * theta * s)


def check_supermartingale(ctx: CheckContext, theta: Optional[float] = None) -> CheckReport:
    """
    mu0 * int_0^{t^tau} e^{theta r/2} dr + w(X_{t^tau}) e^{theta (t^tau)/2} must not increase on average.

    Conditioning on the past is replaced by equal-count bins of w(X_s).
    With theta = 0 the mean exit time is also compared with w(x0)/mu0.
    """
    problem = ctx.problem
    verify = ctx.verify
    theta = verify.supermartingale_theta if theta is None else theta
    theta = 0.0 if theta is None else float(theta)
    k, mu0 = search_barrier_exponent(problem, theta, ctx.probe)
    if k is None:
        return skipped_report("supermartingale", f"no barrier exponent up to k = {ctx.probe.k_max:g} "
                              f"gives a positive margin at theta = {theta:g}")

    rho = problem.constants.rho or ctx.domain.rho
    dt = ctx.sim.dt
    steps = sorted({min(int(round(t / dt)), ctx.sim.n_steps) for t in verify.supermartingale_times})
    rows = []
    tau_excess = -math.inf
    n_paths = 0
    for index in range(len(problem.controls)):
        bundle = simulate(problem, Policy.constant(problem.controls, index), ctx.x0, ctx.sim)
        n_paths += bundle.n_paths

        def process(step: int) -> Tuple[np.ndarray, np.ndarray]:
            elapsed = np.minimum(step * dt, bundle.tau)
            w = barrier_value(ctx.domain, bundle.state_at(step), k, rho)[0]
            return mu0 * _integrated_rate(theta, elapsed) + w * np.exp(0.5 * theta * elapsed), w

        for s, t in zip(steps[:-1], steps[1:]):
            m_s, w_s = process(s)
            m_t, _ = process(t)
            order = np.argsort(w_s, kind="stable")
            for b, members in enumerate(np.array_split(order, verify.supermartingale_bins)):
                if members.size < 2:
                    continue
                increment = m_t[members] - m_s[members]
                mean = float(np.mean(increment))
                stderr = float(np.std(increment, ddof=1) / math.sqrt(members.size))
                rows.append({"policy": index, "s": s * dt, "t": t * dt, "bin": b,
                             "mean_increment": mean, "stderr": stderr, "excess": mean - 3.0 * stderr})

        if theta == 0:
            w0 = barrier_value(ctx.domain, ctx.x0, k, rho)[0]
            tau = exit_time_summary(bundle)
            tau_excess = max(tau_excess, tau.mean - 3.0 * tau.stderr - w0 / mu0)

    if not rows:
        raise CheckRefusedError("no populated bins; need at least two times on the grid")
    worst = max(r["excess"] for r in rows)
    details = {"k": k, "mu0": mu0, "theta": theta, "bins": rows}
    if theta == 0:
        details["exit_time_excess"] = tau_excess
    report = make_report(
        "supermartingale", worst, 0.0,
        f"largest binned increment above 3 stderr: {worst:.3g} (k = {k:g}, mu0 = {mu0:.3g})",
        sample_sizes={"paths": n_paths, "bins": verify.supermartingale_bins},
        seeds=ctx.seeds, details=details,
    )
    return with_violations(report, {"mean exit time bound": tau_excess})


# Exponential exit moments

def check_exit_moments(ctx: CheckContext, mus: Optional[Sequence[float]] = None) -> CheckReport:
    """E[exp(mu tau)] against the closed form on the 1-d Brownian benchmark; blow-up must be flagged"""
    if ctx.catalog not in BROWNIAN_BENCHMARKS:
        raise CheckRefusedError("closed-form exit moments exist for the 1-d Brownian benchmarks only")
    verify = ctx.verify
    radius, scale = ctx.params["R"], ctx.params["sigma_scale"]
    x0 = float(ctx.x0[0])
    config = SimConfig(dt=verify.moment_dt, t_max=verify.moment_horizon, n_paths=verify.moment_paths,
                       master_seed=ctx.sim.master_seed, exit_correction=ctx.sim.exit_correction)
    policy = Policy.constant(ctx.problem.controls, 0)
    short = simulate(ctx.problem, policy, ctx.x0, config)
    long = simulate(ctx.problem, policy, ctx.x0, config.model_copy(update={"t_max": 2.0 * config.t_max}))

    rows = []
    for mu in mus if mus is not None else verify.moment_mus:
        estimate = exit_moment(long, mu)
        exact = exit_moment_closed_form(mu, x0, radius, scale)
        rows.append({"mu": float(mu), "estimate": estimate.mean, "stderr": estimate.stderr, "exact": exact,
                     "excess": abs(estimate.mean - exact) - 3.0 * estimate.stderr})

    mu_b = verify.moment_blowup_mu
    blowup = MomentConvergence(mu_b, exit_moment(short, mu_b), exit_moment(long, mu_b), False)
    flagged = blowup.relative_change >= ctx.probe.mu_rel_change
    details = {
        "moments": rows,
        "blowup": {"mu": mu_b, "threshold": exit_moment_blowup(radius, scale),
                   "at_horizon": blowup.at_horizon.to_doc(), "at_double": blowup.at_double.to_doc(),
                   "relative_change": blowup.relative_change, "flagged": flagged},
    }
    worst = max((r["excess"] for r in rows), default=-math.inf)
    report = make_report(
        "moments", worst, verify.bias_budget,
        f"largest |E exp(mu tau) - closed form| beyond 3 stderr: {worst:.3g}; "
        f"mu = {mu_b:g} {'flagged' if flagged else 'not flagged'} as non-convergent",
        sample_sizes={"paths": config.n_paths}, seeds=ctx.seeds, details=details,
    )
    return with_violations(report, {"blow-up flag": ctx.probe.mu_rel_change - blowup.relative_change})


# Grid convergence

def check_grid_convergence(problem: ControlProblem, ladder: Sequence[int],
                           exact: Callable[[np.ndarray], np.ndarray],
                           config: Optional[GridConfig] = None) -> CheckReport:
    """Sup-norm error of the finite-difference solution over a node ladder; slope against dx >= 1.8"""
    config = config or GridConfig()
    rows = []
    for n in sorted(ladder):
        field = solve_hjb(problem, config.model_copy(update={"nodes": [n] * problem.d}))
        error = float(np.max(np.abs(field.u.ravel() - exact(field.nodes))))
        rows.append({"nodes": n, "dx": float(np.max(field.grid.spacing)), "sup_error": error})
        logger.debug("grid %d: sup error %.3e", n, error)
    errors = np.array([r["sup_error"] for r in rows])
    if np.any(errors <= 0):
        raise CheckRefusedError("the scheme reproduces the solution exactly; no convergence rate to measure")
    slope = loglog_slope([r["dx"] for r in rows], errors)
    return make_report(
        "grid", slope, GRID_SLOPE,
        f"sup-error slope {slope:.3f} against dx over {len(rows)} grids",
        higher_is_better=True, sample_sizes={"grids": len(rows)}, details={"rows": rows},
    )


def grid_suite(ctx: CheckContext) -> CheckReport:
    """Grid convergence on the semilinear benchmark, sized like the configured catalog entry"""
    params = {key: ctx.params[key] for key in ("R", "sigma_scale") if key in ctx.params}
    problem = build_catalog_problem("semilinear1d", params)
    return check_grid_convergence(problem, ctx.verify.grid_ladder, exact_solution("semilinear1d", params), ctx.grid)
