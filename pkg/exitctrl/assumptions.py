"""Sampling-based audit of the standing assumptions and constant derivation"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from exitctrl.exceptions import ConfigError
from exitctrl.problem import Constants, ControlProblem, admissible_theta_interval
from exitctrl.schemas import ProbeConfig
from exitctrl.utils.rng import BARRIER_STREAM, probe_generator

logger = logging.getLogger(__name__)

ASSUMPTION_ORDER = ("H1(i)", "H1(ii)", "H3(i)", "H3(ii)", "H3(iii)", "H4(1)", "H4(2)", "H5", "H6")


@dataclass
class AssumptionEntry:
    name: str
    status: str  # pass | fail | not-checkable
    estimate: Optional[float] = None
    declared: Optional[float] = None
    samples: int = 0
    witness: Optional[Dict[str, Any]] = None
    note: str = ""

    def to_doc(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "status": self.status,
            "estimate": self.estimate,
            "declared": self.declared,
            "samples": self.samples,
            "witness": self.witness,
            "note": self.note,
        }


@dataclass
class AssumptionReport:
    entries: Dict[str, AssumptionEntry] = field(default_factory=dict)

    def passed(self, *names: str) -> bool:
        """True when every entry whose name starts with one of `names` passes"""
        selected = [e for key, e in self.entries.items() if any(key.startswith(n) for n in names)]
        return all(e.status == "pass" for e in selected)

    def failures(self) -> List[AssumptionEntry]:
        return [e for e in self.entries.values() if e.status == "fail"]

    def to_doc(self) -> List[Dict[str, Any]]:
        return [self.entries[name].to_doc() for name in ASSUMPTION_ORDER if name in self.entries]


# Sample layout

class ProbeSample(dict):
    """Columns x1, x2 (n, d), v (n, k), y1, y2 (n,), z1, z2 (n, m)"""

    @property
    def n(self) -> int:
        return self["x1"].shape[0]

    def row(self, i: int) -> "ProbeSample":
        return ProbeSample({key: value[i:i + 1] for key, value in self.items()})


def draw_probe_sample(problem: ControlProblem, probe: ProbeConfig, n: Optional[int] = None) -> ProbeSample:
    """
    Draw n probe tuples from a single uniform array.

    Every tuple is a fixed function of one row, so the first n tuples are
    the same for any larger n (nested sample sets).
    """
    n = n or probe.sample_count
    dom = problem.domain
    w = dom.uniform_width
    m = problem.m
    width = 2 * w + 1 + 2 + 2 * m
    u = probe_generator(probe.seed).random((n, width))
    points = problem.controls.array
    v_index = np.minimum((u[:, 2 * w] * len(points)).astype(int), len(points) - 1)
    col = 2 * w + 1
    return ProbeSample(
        x1=dom.map_uniform(u[:, :w]),
        x2=dom.map_uniform(u[:, w:2 * w]),
        v=points[v_index],
        y1=probe.y_box * (2.0 * u[:, col] - 1.0),
        y2=probe.y_box * (2.0 * u[:, col + 1] - 1.0),
        z1=probe.z_box * (2.0 * u[:, col + 2:col + 2 + m] - 1.0),
        z2=probe.z_box * (2.0 * u[:, col + 2 + m:col + 2 + 2 * m] - 1.0),
    )


def _fro(s: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(s * s, axis=(1, 2)))


def _separated(a: np.ndarray, b: np.ndarray, floor: float) -> np.ndarray:
    gap = np.linalg.norm(np.atleast_2d(a - b), axis=1) if np.ndim(a) > 1 else np.abs(a - b)
    return np.where(gap >= floor, gap, np.nan)


# Quotients: each returns one value per sample (nan where undefined)

def _h1_lipschitz(p: ControlProblem, s: ProbeSample, floor: float) -> np.ndarray:
    gap = _separated(s["x1"], s["x2"], floor)
    db = np.linalg.norm(p.drift(s["x1"], s["v"]) - p.drift(s["x2"], s["v"]), axis=1)
    ds = _fro(p.diffusion(s["x1"], s["v"]) - p.diffusion(s["x2"], s["v"]))
    return (db + ds) / gap


def _h1_growth(p: ControlProblem, s: ProbeSample, floor: float) -> np.ndarray:
    size = np.linalg.norm(p.drift(s["x1"], s["v"]), axis=1) + _fro(p.diffusion(s["x1"], s["v"]))
    return size / (1.0 + np.linalg.norm(s["x1"], axis=1))


def _h3_growth(p: ControlProblem, s: ProbeSample, floor: float) -> np.ndarray:
    full = np.abs(p.driver(s["x1"], s["y1"], s["z1"], s["v"]))
    base = np.abs(p.driver(s["x1"], 0.0, s["z1"], s["v"]))
    return (full - base) / (1.0 + np.abs(s["y1"]))


def _h3_lipschitz(p: ControlProblem, s: ProbeSample, floor: float) -> np.ndarray:
    gap = np.linalg.norm(s["x1"] - s["x2"], axis=1) + np.linalg.norm(s["z1"] - s["z2"], axis=1)
    gap = np.where(gap >= floor, gap, np.nan)
    df = p.driver(s["x1"], s["y1"], s["z1"], s["v"]) - p.driver(s["x2"], s["y1"], s["z2"], s["v"])
    return np.abs(df) / gap


def _h3_monotone(p: ControlProblem, s: ProbeSample, floor: float) -> np.ndarray:
    dy = _separated(s["y1"], s["y2"], floor)
    df = p.driver(s["x1"], s["y1"], s["z1"], s["v"]) - p.driver(s["x1"], s["y2"], s["z1"], s["v"])
    return -(s["y1"] - s["y2"]) * df / dy ** 2


def _h4_ellipticity(p: ControlProblem, s: ProbeSample, floor: float) -> np.ndarray:
    return np.linalg.eigvalsh(p.covariance(s["x1"], s["v"]))[:, 0]


def _h6_lipschitz(p: ControlProblem, s: ProbeSample, floor: float) -> np.ndarray:
    dy = _separated(s["y1"], s["y2"], floor)
    df = p.driver(s["x1"], s["y1"], s["z1"], s["v"]) - p.driver(s["x1"], s["y2"], s["z1"], s["v"])
    return np.abs(df) / dy


# name -> (quotient, "max" (upper bound) or "min" (lower bound), constant, default bound)
QUOTIENTS: Dict[str, tuple] = {
    "H1(i)": (_h1_lipschitz, "max", "L", None),
    "H1(ii)": (_h1_growth, "max", "L", None),
    "H3(i)": (_h3_growth, "max", "L", None),
    "H3(ii)": (_h3_lipschitz, "max", "beta", None),
    "H3(iii)": (_h3_monotone, "min", "alpha", 0.0),
    "H4(1)": (_h4_ellipticity, "min", "lam", 0.0),
    "H6": (_h6_lipschitz, "max", "Ltilde", None),
}


def _violates(q: np.ndarray, direction: str, bound: Optional[float], rel_tol: float, strict_positive: bool) -> np.ndarray:
    if bound is None:
        return np.zeros(q.shape, dtype=bool)
    slack = rel_tol * abs(bound) + 1e-12
    with np.errstate(invalid="ignore"):
        if direction == "max":
            bad = q > bound + slack
        else:
            bad = q < bound - slack
            if strict_positive:
                bad |= q <= 1e-12
    return bad & ~np.isnan(q)


def _check_quotient(problem: ControlProblem, name: str, sample: ProbeSample, probe: ProbeConfig) -> AssumptionEntry:
    fn, direction, const_name, default = QUOTIENTS[name]
    declared = getattr(problem.constants, const_name)
    bound = declared if declared is not None else default
    q = fn(problem, sample, probe.min_separation)
    valid = ~np.isnan(q)
    if not np.any(valid):
        return AssumptionEntry(name, "not-checkable", declared=declared, samples=0,
                               note="no sample pairs above the separation floor")
    estimate = float(np.nanmax(q) if direction == "max" else np.nanmin(q))
    if name == "H4(1)":
        estimate = max(estimate, 0.0)
    bad = _violates(q, direction, bound, probe.rel_tol, name == "H4(1)")
    entry = AssumptionEntry(name, "pass", estimate=estimate, declared=declared, samples=int(valid.sum()))
    if np.any(bad):
        worst = np.where(bad, q, np.nan)
        i = int(np.nanargmax(worst) if direction == "max" else np.nanargmin(worst))
        row = sample.row(i)
        entry.status = "fail"
        entry.witness = {key: value[0].tolist() if np.ndim(value[0]) else float(value[0]) for key, value in row.items()}
        entry.witness["quotient"] = float(q[i])
        entry.witness["bound"] = bound
        logger.debug("%s violated: quotient %.6g vs bound %s", name, q[i], bound)
    return entry


def witness_reproduces(problem: ControlProblem, entry: AssumptionEntry, probe: ProbeConfig) -> bool:
    """Re-evaluate a failure witness and confirm it still violates the inequality"""
    if entry.status != "fail" or entry.witness is None or entry.name not in QUOTIENTS:
        return False
    fn, direction, _, _ = QUOTIENTS[entry.name]
    w = entry.witness
    sample = ProbeSample(
        x1=np.atleast_2d(w["x1"]), x2=np.atleast_2d(w["x2"]), v=np.atleast_2d(w["v"]),
        y1=np.atleast_1d(w["y1"]), y2=np.atleast_1d(w["y2"]),
        z1=np.atleast_2d(w["z1"]), z2=np.atleast_2d(w["z2"]),
    )
    q = fn(problem, sample, probe.min_separation)
    return bool(_violates(q, direction, w["bound"], probe.rel_tol, entry.name == "H4(1)")[0])


def _check_exterior_sphere(problem: ControlProblem, probe: ProbeConfig) -> AssumptionEntry:
    dom = problem.domain
    rho = problem.constants.rho or dom.rho
    n = min(probe.sample_count, 256)
    boundary = dom.sample_boundary(probe_generator(probe.seed), n)
    centers = boundary + rho * dom.outward_normal(boundary)
    # the closed sphere of radius rho around each centre must touch D only at its boundary point
    gap = np.abs(-dom.signed_distance(centers) - rho)
    entry = AssumptionEntry("H4(2)", "pass", estimate=float(rho), declared=problem.constants.rho,
                            samples=n, note=f"{dom.kind} domain")
    if dom.kind != "box" and problem.constants.rho is not None and problem.constants.rho > dom.rho * (1 + 1e-12):
        entry.status = "fail"
        entry.witness = {"boundary_point": boundary[0].tolist(), "bound": dom.rho}
    elif np.any(gap > 1e-9):
        i = int(np.argmax(gap))
        entry.status = "fail"
        entry.witness = {"boundary_point": boundary[i].tolist(), "distance_error": float(gap[i])}
    return entry


def _check_h5(constants: Constants) -> AssumptionEntry:
    gamma, mu = constants.gamma, constants.mu
    if gamma is None or mu is None:
        return AssumptionEntry("H5", "not-checkable", note="mu, alpha and beta must be known")
    status = "pass" if mu > gamma else "fail"
    witness = None if status == "pass" else {"mu": mu, "gamma": gamma}
    return AssumptionEntry("H5", status, estimate=mu - gamma, declared=mu, witness=witness)


def validate_assumptions(problem: ControlProblem, probe: Optional[ProbeConfig] = None) -> AssumptionReport:
    """
    Audit H1, H3, H4, H5 and H6 by sampling probe tuples.

    Args:
        problem: Control problem
        probe: Sampling configuration (seed, sample count, y/z boxes)

    Returns:
        AssumptionReport with one entry per assumption
    """
    probe = probe or ProbeConfig()
    sample = draw_probe_sample(problem, probe)
    report = AssumptionReport()
    for name in ASSUMPTION_ORDER:
        if name in QUOTIENTS:
            report.entries[name] = _check_quotient(problem, name, sample, probe)
        elif name == "H4(2)":
            report.entries[name] = _check_exterior_sphere(problem, probe)
        elif name == "H5":
            report.entries[name] = _check_h5(problem.constants)
    for entry in report.failures():
        logger.info("assumption %s fails (estimate %s, declared %s)", entry.name, entry.estimate, entry.declared)
    return report


def delta_quotients(problem: ControlProblem, sample: ProbeSample, floor: float) -> np.ndarray:
    """1/2 |sigma(x)-sigma(x')|^2 / |x-x'|^2 + (x-x').(b(x)-b(x')) / |x-x'|^2"""
    dx = sample["x1"] - sample["x2"]
    gap2 = np.sum(dx * dx, axis=1)
    gap2 = np.where(gap2 >= floor * floor, gap2, np.nan)
    ds = problem.diffusion(sample["x1"], sample["v"]) - problem.diffusion(sample["x2"], sample["v"])
    db = problem.drift(sample["x1"], sample["v"]) - problem.drift(sample["x2"], sample["v"])
    return (0.5 * np.sum(ds * ds, axis=(1, 2)) + np.sum(dx * db, axis=1)) / gap2


def estimate_delta(problem: ControlProblem, probe: ProbeConfig, n: Optional[int] = None) -> float:
    """Supremum of the delta quotient over the first n probe pairs"""
    sample = draw_probe_sample(problem, probe, n)
    q = delta_quotients(problem, sample, probe.min_separation)
    return float(np.nanmax(q))


def barrier_margin(problem: ControlProblem, k: float, theta: float, probe: Optional[ProbeConfig] = None) -> float:
    """
    Sampled minimum of -L(x,v)w(x,y) - (theta/2) w(x,y).

    Uses w(x,y) = exp(-k rho^2) - exp(-k |x - y~|^2) with the exterior
    centre y~ = y + rho n(y), over x in closure(D), y on the boundary and
    every control in V_h.
    """
    probe = probe or ProbeConfig()
    dom = problem.domain
    rho = problem.constants.rho or dom.rho
    rng = probe_generator(probe.seed, stream=BARRIER_STREAM)
    n = probe.barrier_samples
    xs = np.vstack([dom.sample_interior(rng, n), dom.sample_boundary(rng, n // 4 + 1)])
    ys = dom.sample_boundary(rng, n)
    centers = ys + rho * dom.outward_normal(ys)

    worst = np.inf
    for v_point in problem.controls.array:
        b = problem.drift(xs, v_point)
        a = problem.covariance(xs, v_point)
        tr_a = np.trace(a, axis1=1, axis2=2)
        diff = xs[:, None, :] - centers[None, :, :]  # (nx, ny, d)
        r2 = np.sum(diff * diff, axis=2)
        quad = np.einsum("xyi,xij,xyj->xy", diff, a, diff)
        lin = np.einsum("xi,xyi->xy", b, diff)
        decay = np.exp(-k * r2)
        minus_lw = decay * (2.0 * k * k * quad - k * tr_a[:, None] - 2.0 * k * lin)
        w = np.exp(-k * rho * rho) - decay
        worst = min(worst, float(np.min(minus_lw - 0.5 * theta * w)))
    return worst


def search_barrier_exponent(problem: ControlProblem, theta: float, probe: Optional[ProbeConfig] = None):
    """Double k from probe.k_start until the barrier margin is positive; (k, mu0) or (None, None)"""
    probe = probe or ProbeConfig()
    k = probe.k_start
    while k <= probe.k_max:
        margin = barrier_margin(problem, k, theta, probe)
        logger.debug("barrier margin at k=%g, theta=%g: %.4g", k, theta, margin)
        if margin > 0:
            return k, margin
        k *= 2.0
    return None, None


def lipschitz_of_test_driver(
    evaluate: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    problem: ControlProblem,
    probe: Optional[ProbeConfig] = None,
) -> float:
    """
    Empirical Lipschitz constant of a driver in (x, y, z), uniformly in v.

    Args:
        evaluate: driver(x, y, z, v) on arrays
        problem: Problem supplying the domain and control set
        probe: Sampling configuration

    Returns:
        max |F1 - F2| / (|x1 - x2| + |y1 - y2| + |z1 - z2|) over probe pairs
    """
    probe = probe or ProbeConfig()
    s = draw_probe_sample(problem, probe)
    gap = (np.linalg.norm(s["x1"] - s["x2"], axis=1) + np.abs(s["y1"] - s["y2"])
           + np.linalg.norm(s["z1"] - s["z2"], axis=1))
    gap = np.where(gap >= probe.min_separation, gap, np.nan)
    df = evaluate(s["x1"], s["y1"], s["z1"], s["v"]) - evaluate(s["x2"], s["y2"], s["z2"], s["v"])
    return float(np.nanmax(np.abs(df) / gap))


def derive_constants(problem: ControlProblem, probe: Optional[ProbeConfig] = None,
                     report: Optional[AssumptionReport] = None) -> Constants:
    """
    Fill in the constant zoo from declared values and sampling.

    gamma is exact from alpha and beta; delta is the sampled supremum of
    the forward-SDE coupling quotient; mu comes from the exit-moment probe
    when not declared; L0, when not declared, is the sampled Lipschitz
    constant of the driver F built on phi(x) = sum x_i^4; theta is the
    midpoint of (gamma, min(mu, -2[delta]+)) or flagged infeasible when
    that interval is empty.

    Raises:
        ConfigError: when H1 or H3 fail the audit
    """
    probe = probe or ProbeConfig()
    report = report or validate_assumptions(problem, probe)
    if not report.passed("H1", "H3"):
        failed = ", ".join(e.name for e in report.failures() if e.name.startswith(("H1", "H3")))
        raise ConfigError(f"assumptions {failed} fail; constants cannot be derived", "problem")

    declared = problem.constants
    entries = report.entries
    L = declared.L if declared.L is not None else max(
        entries[name].estimate or 0.0 for name in ("H1(i)", "H1(ii)", "H3(i)")
    )
    beta = declared.beta if declared.beta is not None else (entries["H3(ii)"].estimate or 0.0)
    alpha = declared.alpha if declared.alpha is not None else (entries["H3(iii)"].estimate or 0.0)
    lam = declared.lam
    if lam is None and (entries["H4(1)"].estimate or 0.0) > 0:
        lam = entries["H4(1)"].estimate
    ltilde = declared.Ltilde if declared.Ltilde is not None else entries["H6"].estimate
    rho = declared.rho or problem.domain.rho
    delta = estimate_delta(problem, probe)

    mu = declared.mu
    if mu is None:
        from exitctrl.paths import estimate_moment_exponent

        mu = estimate_moment_exponent(problem, probe)

    L0 = declared.L0
    if L0 is None:
        from exitctrl.bsde import Driver, TestFunction, default_test_function

        F = Driver.test_function(TestFunction.from_expr(default_test_function(problem.d), problem.d))
        L0 = lipschitz_of_test_driver(lambda xs, ys, zs, vs: F.evaluate(problem, xs, ys, zs, vs), problem, probe)

    constants = replace(declared, L=L, beta=beta, alpha=alpha, lam=lam, rho=rho,
                        Ltilde=ltilde, delta=delta, mu=mu, L0=L0)
    lo, hi = admissible_theta_interval(constants.gamma, mu, delta)
    feasible = bool(lo < hi and np.isfinite(hi))
    theta = 0.5 * (lo + hi) if feasible else None
    if not feasible:
        logger.warning("theta interval (%.4g, %.4g) is empty; regularity checks will be skipped", lo, hi)

    k, mu0 = search_barrier_exponent(problem, theta if feasible else 0.0, probe)
    if k is None:
        logger.warning("no barrier exponent up to k=%g gives a positive margin", probe.k_max)
    return replace(constants, theta=theta, theta_feasible=feasible, theta_interval=(lo, hi), k=k, mu0=mu0)
