"""Catalog of benchmark problems with closed-form references"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from exitctrl.domain import ControlSet, Domain
from exitctrl.exceptions import SchemaError, UnknownCatalogEntryError
from exitctrl.expr import ONE, ZERO, const, v, x, y
from exitctrl.problem import Constants, ControlProblem


@dataclass(frozen=True)
class CatalogEntry:
    builder: Callable[[Dict[str, float]], ControlProblem]
    defaults: Dict[str, float]
    # whether alpha > beta^2/2, the only regime with a nonempty theta interval
    strongly_monotone: Callable[[Dict[str, float]], bool]
    description: str


def _poisson1d(p: Dict[str, float]) -> ControlProblem:
    s, radius, source = p["sigma_scale"], p["R"], p["source"]
    return ControlProblem(
        b=(ZERO,),
        sigma=((const(s),),),
        f=const(source),
        g=ZERO,
        domain=Domain.interval(0.0, radius),
        controls=ControlSet(((0.0,),)),
        m=1,
        constants=Constants(L=abs(s), beta=0.0, alpha=0.0, lam=s * s, rho=radius, Ltilde=0.0),
        name="poisson1d",
    )


def _semilinear1d(p: Dict[str, float]) -> ControlProblem:
    s, radius, alpha, source = p["sigma_scale"], p["R"], p["alpha"], p["source"]
    return ControlProblem(
        b=(ZERO,),
        sigma=((const(s),),),
        f=const(-alpha) * y() + source,
        g=ZERO,
        domain=Domain.interval(0.0, radius),
        controls=ControlSet(((0.0,),)),
        m=1,
        constants=Constants(L=max(abs(s), abs(alpha)), beta=0.0, alpha=alpha, lam=s * s,
                            rho=radius, Ltilde=abs(alpha)),
        name="semilinear1d",
    )


def _controlled1d(p: Dict[str, float]) -> ControlProblem:
    s, radius, v_max, source = p["sigma_scale"], p["R"], p["v_max"], p["source"]
    return ControlProblem(
        b=(v(0),),
        sigma=((const(s),),),
        f=const(source),
        g=ZERO,
        domain=Domain.interval(0.0, radius),
        controls=ControlSet(((-v_max,), (v_max,))),
        m=1,
        constants=Constants(L=abs(s) + v_max, beta=0.0, alpha=0.0, lam=s * s, rho=radius, Ltilde=0.0),
        name="controlled1d",
    )


def _ou1d(p: Dict[str, float]) -> ControlProblem:
    s, radius, kappa, alpha = p["sigma_scale"], p["R"], p["kappa"], p["alpha"]
    return ControlProblem(
        b=(const(-kappa) * x(0),),
        sigma=((const(s),),),
        f=const(-alpha) * y() + ONE,
        g=ZERO,
        domain=Domain.interval(0.0, radius),
        controls=ControlSet(((0.0,),)),
        m=1,
        constants=Constants(L=max(abs(s), kappa, abs(alpha)), beta=0.0, alpha=alpha, lam=s * s,
                            rho=radius, Ltilde=abs(alpha)),
        name="ou1d",
    )


def _poisson_ball2d(p: Dict[str, float]) -> ControlProblem:
    s, radius, source = p["sigma_scale"], p["R"], p["source"]
    return ControlProblem(
        b=(ZERO, ZERO),
        sigma=((const(s), ZERO), (ZERO, const(s))),
        f=const(source),
        g=ZERO,
        domain=Domain.ball((0.0, 0.0), radius),
        controls=ControlSet(((0.0,),)),
        m=2,
        constants=Constants(L=abs(s), beta=0.0, alpha=0.0, lam=s * s, rho=radius, Ltilde=0.0),
        name="poisson_ball2d",
    )


SQRT2 = math.sqrt(2.0)

CATALOG: Dict[str, CatalogEntry] = {
    "poisson1d": CatalogEntry(
        _poisson1d, {"R": 1.0, "sigma_scale": SQRT2, "source": 1.0},
        lambda p: False,
        "Brownian exit from (-R, R); u solves a u'' + source = 0",
    ),
    "semilinear1d": CatalogEntry(
        _semilinear1d, {"R": 1.0, "sigma_scale": SQRT2, "alpha": 2.0, "source": 1.0},
        lambda p: p["alpha"] > 0,
        "driver -alpha*y + source; strongly monotone for alpha > 0",
    ),
    "controlled1d": CatalogEntry(
        _controlled1d, {"R": 1.0, "sigma_scale": SQRT2, "v_max": 1.0, "source": 1.0},
        lambda p: False,
        "drift b = v with V = {-v_max, v_max}; HJB a u'' - v_max |u'| + source = 0",
    ),
    "ou1d": CatalogEntry(
        _ou1d, {"R": 1.0, "sigma_scale": 1.0, "kappa": 1.0, "alpha": 1.0},
        lambda p: p["alpha"] > 0,
        "mean-reverting drift -kappa x, delta = -kappa",
    ),
    "poisson_ball2d": CatalogEntry(
        _poisson_ball2d, {"R": 1.0, "sigma_scale": SQRT2, "source": 1.0},
        lambda p: False,
        "planar Brownian exit from the disc of radius R",
    ),
}


def resolve_params(name: str, params: Optional[Dict[str, float]] = None) -> Dict[str, float]:
    if name not in CATALOG:
        raise UnknownCatalogEntryError(f"unknown catalog entry '{name}'; known: {sorted(CATALOG)}", "catalog")
    merged = dict(CATALOG[name].defaults)
    for key, value in (params or {}).items():
        if key not in merged:
            raise SchemaError(f"unknown parameter for '{name}'", f"params.{key}")
        merged[key] = float(value)
    for key in ("R", "sigma_scale"):
        if merged[key] <= 0:
            raise SchemaError("must be positive", f"params.{key}")
    return merged


def build_catalog_problem(name: str, params: Optional[Dict[str, float]] = None) -> ControlProblem:
    return CATALOG[name].builder(resolve_params(name, params))


def exact_solution(name: str, params: Optional[Dict[str, float]] = None) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """
    Closed-form value function of a catalog entry, where one is known.

    Args:
        name: Catalog entry name
        params: Entry parameters (defaults filled in)

    Returns:
        Vectorised u(points) for points of shape (n, d), or None
    """
    p = resolve_params(name, params)
    radius = p["R"]
    a = 0.5 * p["sigma_scale"] ** 2

    if name == "poisson1d":
        c = p["source"]
        return lambda pts: c * (radius ** 2 - np.atleast_2d(pts)[:, 0] ** 2) / (2.0 * a)

    if name == "semilinear1d":
        alpha, c = p["alpha"], p["source"]
        if alpha <= 0:
            return None
        r = math.sqrt(alpha / a)
        return lambda pts: (c / alpha) * (1.0 - np.cosh(r * np.atleast_2d(pts)[:, 0]) / math.cosh(r * radius))

    if name == "controlled1d":
        v_max, c = p["v_max"], p["source"]
        kappa = v_max / a

        def controlled(pts: np.ndarray) -> np.ndarray:
            dist = np.abs(np.atleast_2d(pts)[:, 0])
            return (c / v_max) * ((radius - dist) + (math.exp(-kappa * radius) - np.exp(-kappa * dist)) / kappa)

        return controlled

    if name == "poisson_ball2d":
        c = p["source"]
        return lambda pts: c * (radius ** 2 - np.sum(np.atleast_2d(pts) ** 2, axis=1)) / (4.0 * a)

    return None


def exit_moment_closed_form(mu: float, x0: float = 0.0, radius: float = 1.0, sigma_scale: float = SQRT2) -> float:
    """E[exp(mu tau)] for driftless 1-d Brownian exit from (-R, R); inf at or above the blow-up"""
    if mu == 0:
        return 1.0
    a = 0.5 * sigma_scale ** 2
    if mu < 0:
        r = math.sqrt(-mu / a)
        return math.cosh(r * x0) / math.cosh(r * radius)
    r = math.sqrt(mu / a)
    if r * radius >= math.pi / 2:
        return math.inf
    return math.cos(r * x0) / math.cos(r * radius)


def exit_moment_blowup(radius: float = 1.0, sigma_scale: float = SQRT2) -> float:
    """Smallest mu for which the exponential exit moment is infinite"""
    return (math.pi / (2.0 * radius)) ** 2 * 0.5 * sigma_scale ** 2
