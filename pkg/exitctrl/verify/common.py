"""Shared context and report helpers for the check harness"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from exitctrl.assumptions import estimate_delta
from exitctrl.catalog import CATALOG, resolve_params
from exitctrl.domain import Domain
from exitctrl.exceptions import CheckRefusedError, ConfigError
from exitctrl.hjb import ValueField, solve_hjb
from exitctrl.problem import ControlProblem, admissible_theta_interval, parse_problem_spec
from exitctrl.schemas import CheckReport, GridConfig, ProbeConfig, RegressionConfig, RunConfig, SimConfig, VerifyConfig

logger = logging.getLogger(__name__)


@dataclass
class CheckContext:
    """Problem, run configuration and lazily solved value field shared by the checks"""
    problem: ControlProblem
    config: RunConfig
    x0: np.ndarray
    catalog: Optional[str] = None
    params: Dict[str, float] = field(default_factory=dict)
    _field: Optional[ValueField] = field(default=None, repr=False)

    @classmethod
    def from_config(cls, config: RunConfig, problem: Optional[ControlProblem] = None) -> "CheckContext":
        problem = problem or parse_problem_spec(config.problem)
        x0 = np.asarray(config.x0 if config.x0 is not None else problem.domain.center, dtype=float)
        if x0.shape != (problem.d,):
            raise ConfigError(f"x0 has {x0.size} components, d is {problem.d}", "x0")
        catalog = config.problem.get("catalog")
        params = resolve_params(catalog, config.problem.get("params")) if catalog else {}
        return cls(problem, config, x0, catalog, params)

    @property
    def sim(self) -> SimConfig:
        return self.config.simulation

    @property
    def regression(self) -> RegressionConfig:
        return self.config.regression or RegressionConfig.default_for(self.problem.d)

    @property
    def grid(self) -> GridConfig:
        return self.config.grid

    @property
    def probe(self) -> ProbeConfig:
        return self.config.probe

    @property
    def verify(self) -> VerifyConfig:
        return self.config.verify

    @property
    def seeds(self) -> List[int]:
        return [self.sim.master_seed]

    @property
    def domain(self) -> Domain:
        return self.problem.domain

    def value_field(self) -> ValueField:
        if self._field is None:
            if self.problem.d > 2:
                raise CheckRefusedError(f"no finite-difference reference for d = {self.problem.d}")
            self._field = solve_hjb(self.problem, self.grid)
        return self._field

    def strongly_monotone(self) -> Optional[bool]:
        if self.catalog in CATALOG:
            return CATALOG[self.catalog].strongly_monotone(self.params)
        return None

    def theta_note(self) -> str:
        """Annotation for checks that rely on the regularity hypotheses"""
        consts = self.problem.constants
        delta = consts.delta if consts.delta is not None else estimate_delta(self.problem, self.probe)
        lo, hi = admissible_theta_interval(consts.gamma, consts.mu, delta)
        if self.strongly_monotone() is False or not lo < hi:
            return "theta interval empty; regularity hypotheses unverified"
        return ""


def make_report(
    name: str,
    measured: float,
    tolerance: float,
    narrative: str,
    higher_is_better: bool = False,
    sample_sizes: Optional[Dict[str, int]] = None,
    seeds: Sequence[int] = (),
    details: Optional[Dict[str, Any]] = None,
) -> CheckReport:
    """Pass/fail report; failures carry |measured - tolerance| as the margin"""
    ok = measured >= tolerance if higher_is_better else measured <= tolerance
    return CheckReport(
        name=name,
        status="pass" if ok else "fail",
        measured=float(measured),
        tolerance=float(tolerance),
        margin=None if ok else float(abs(measured - tolerance)),
        sample_sizes=sample_sizes or {},
        seeds=list(seeds),
        narrative=narrative,
        details=details or {},
    )


def skipped_report(name: str, reason: str, measured: Optional[float] = None,
                   details: Optional[Dict[str, Any]] = None) -> CheckReport:
    return CheckReport(name=name, status="skipped", reason=reason, measured=measured,
                       narrative=f"skipped: {reason}", details=details or {})


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise CheckRefusedError("need at least two points for a log-log fit")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def combined_stderr(*errors: float) -> float:
    return float(np.sqrt(np.sum(np.square(errors))))


def shrink_domain(domain: Domain, fraction: float) -> Domain:
    """Concentric copy of the domain scaled by `fraction`"""
    if domain.kind == "box":
        return Domain.box(domain.center, [h * fraction for h in domain.half_widths],
                          domain.exterior_radius * fraction)
    if domain.kind == "interval":
        return Domain.interval(domain.center[0], domain.radius * fraction)
    return Domain.ball(domain.center, domain.radius * fraction)


def with_violations(report: CheckReport, violations: Dict[str, float]) -> CheckReport:
    """Turn a passing report into a failure when secondary assertions were violated"""
    violated = {key: value for key, value in violations.items() if value > 0}
    if not violated or report.status != "pass":
        return report
    worst = max(violated, key=violated.get)
    return report.model_copy(update={
        "status": "fail",
        "margin": float(violated[worst]),
        "narrative": f"{report.narrative}; violated: {', '.join(sorted(violated))}",
    })
