"""Check harness: registry of checks and the suite runner"""
import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

from exitctrl.exceptions import CheckRefusedError, ConfigError
from exitctrl.schemas import CheckReport
from exitctrl.verify.common import CheckContext, skipped_report
from exitctrl.verify.crossval import cross_validate
from exitctrl.verify.regularity import (
    check_exit_moments,
    check_grid_convergence,
    check_holder,
    check_supermartingale,
    grid_suite,
)
from exitctrl.verify.semigroup import check_comparison, check_dpp, check_stability_trend, dpp_suite
from exitctrl.verify.viscosity import check_section5_chain

logger = logging.getLogger(__name__)

CheckFn = Callable[[CheckContext], Union[CheckReport, List[CheckReport]]]

# Reports merge in this order
SUITE: Tuple[Tuple[str, CheckFn], ...] = (
    ("dpp", dpp_suite),
    ("holder", check_holder),
    ("comparison", check_comparison),
    ("stability", check_stability_trend),
    ("supermartingale", check_supermartingale),
    ("section5", check_section5_chain),
    ("moments", check_exit_moments),
    ("grid", grid_suite),
    ("xval", cross_validate),
)
CHECK_NAMES = tuple(name for name, _ in SUITE)


def resolve_names(names: Optional[Sequence[str]]) -> List[str]:
    """Registry-ordered selection; None, empty or 'all' selects every check"""
    if not names or "all" in names:
        return list(CHECK_NAMES)
    unknown = sorted(set(names) - set(CHECK_NAMES))
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; known: {list(CHECK_NAMES)}", "verify.checks")
    return [name for name in CHECK_NAMES if name in names]


def run_suite(ctx: CheckContext, names: Optional[Sequence[str]] = None) -> List[CheckReport]:
    """Run the selected checks; refused preconditions become skipped reports"""
    selected = resolve_names(names)
    reports: List[CheckReport] = []
    for name, check in SUITE:
        if name not in selected:
            continue
        logger.info("running check %s", name)
        try:
            result = check(ctx)
        except CheckRefusedError as exc:
            logger.warning("check %s skipped: %s", name, exc.detail)
            result = skipped_report(name, exc.detail, exc.measured)
        reports.extend(result if isinstance(result, list) else [result])
    return reports


def suite_failed(reports: Sequence[CheckReport]) -> bool:
    return any(r.status == "fail" for r in reports)


__all__ = [
    "CHECK_NAMES",
    "CheckContext",
    "SUITE",
    "check_comparison",
    "check_dpp",
    "check_exit_moments",
    "check_grid_convergence",
    "check_holder",
    "check_section5_chain",
    "check_stability_trend",
    "check_supermartingale",
    "cross_validate",
    "resolve_names",
    "run_suite",
    "suite_failed",
]
