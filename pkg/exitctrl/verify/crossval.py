"""Agreement of the Monte Carlo value with the finite-difference solution"""
import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from exitctrl.bsde import estimate_value
from exitctrl.paths import BOUNDARY_TOL
from exitctrl.schemas import CheckReport
from exitctrl.verify.common import CheckContext, make_report, with_violations

logger = logging.getLogger(__name__)

PROBE_SPAN = 0.8


def default_probes(ctx: CheckContext) -> np.ndarray:
    """Evenly spaced points on the first axis within 80% of the half-width, plus one boundary point"""
    domain = ctx.domain
    center = np.asarray(domain.center, dtype=float)
    half_width = domain.half_widths[0]
    count = ctx.verify.xval_probe_count
    offsets = np.linspace(-PROBE_SPAN, PROBE_SPAN, count) if count > 1 else np.zeros(1)
    points = np.tile(center, (count + 1, 1))
    points[:count, 0] += offsets * half_width
    points[count, 0] += half_width
    return points


def cross_validate(ctx: CheckContext, probes: Optional[Sequence[Sequence[float]]] = None) -> CheckReport:
    """
    |estimate_value - u_FD| <= 3 stderr + c_bias (dx + sqrt(dt)) at every probe.

    Boundary probes must also reproduce g exactly on the grid side.
    """
    problem = ctx.problem
    field = ctx.value_field()
    if probes is None:
        probes = ctx.verify.xval_probes
    points = default_probes(ctx) if probes is None else np.asarray(probes, dtype=float).reshape(-1, problem.d)
    bias = ctx.verify.c_bias * (float(np.max(field.grid.spacing)) + math.sqrt(ctx.sim.dt))

    rows: List[dict] = []
    boundary_mismatch = 0.0
    for point in points:
        estimate = estimate_value(problem, point, sim=ctx.sim, config=ctx.regression, value_field=field)
        reference = float(field.interpolate(point[None, :])[0])
        on_boundary = abs(ctx.domain.signed_distance(point[None, :])[0]) <= BOUNDARY_TOL
        row = {
            "x": point.tolist(),
            "u_hat": estimate.value,
            "stderr": estimate.stderr,
            "u_fd": reference,
            "gap": abs(estimate.value - reference),
            "tolerance": 3.0 * estimate.stderr + bias,
            "policy": estimate.best_policy.label,
            "boundary": bool(on_boundary),
        }
        if on_boundary:
            g = float(problem.terminal(point[None, :])[0])
            row["g"] = g
            boundary_mismatch = max(boundary_mismatch, abs(reference - g))
        rows.append(row)

    worst = max(rows, key=lambda r: r["gap"] - r["tolerance"])
    note = ctx.theta_note()
    narrative = f"max gap {max(r['gap'] for r in rows):.4g} over {len(rows)} probes"
    if note:
        narrative += f"; {note}"
    report = make_report(
        "xval", worst["gap"], worst["tolerance"], narrative,
        sample_sizes={"paths": ctx.sim.n_paths, "probes": len(rows)},
        seeds=ctx.seeds,
        details={"probes": rows, "bias": bias, "theta_note": note},
    )
    return with_violations(report, {"boundary value": boundary_mismatch - BOUNDARY_TOL})
