"""Control problem definition, parsing and serialization"""
import json
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from exitctrl.domain import ControlSet, Domain
from exitctrl.exceptions import DimensionMismatchError, SchemaError
from exitctrl.expr import CoefficientExpr, EvalEnv
from exitctrl.schemas import ConstantsDoc, DomainDoc, ProblemDocument, validate_document
from exitctrl.utils.io import canonical_json


# Constants that a problem document may declare
DECLARED_CONSTANTS = ("L", "beta", "alpha", "mu", "lam", "rho", "L0", "Ltilde")


@dataclass(frozen=True)
class Constants:
    """
    Structural constants of a problem.

    gamma is always beta^2 - 2*alpha. theta is only ever set to a value in
    the admissible interval; when that interval is empty, theta stays None
    and theta_feasible is False.
    """
    L: Optional[float] = None
    beta: Optional[float] = None
    alpha: Optional[float] = None
    mu: Optional[float] = None
    theta: Optional[float] = None
    delta: Optional[float] = None
    lam: Optional[float] = None
    rho: Optional[float] = None
    mu0: Optional[float] = None
    L0: Optional[float] = None
    Ltilde: Optional[float] = None
    k: Optional[float] = None
    theta_feasible: Optional[bool] = None
    theta_interval: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.lam is not None and self.lam <= 0:
            raise SchemaError("lambda must be positive", "constants.lambda")
        if self.rho is not None and self.rho <= 0:
            raise SchemaError("rho must be positive", "constants.rho")
        if self.theta is not None and not theta_admissible(self.theta, self.gamma, self.mu, self.delta):
            lo, hi = admissible_theta_interval(self.gamma, self.mu, self.delta)
            raise SchemaError(f"theta {self.theta} outside admissible interval ({lo}, {hi})", "constants.theta")

    @property
    def gamma(self) -> Optional[float]:
        if self.alpha is None or self.beta is None:
            return None
        return self.beta ** 2 - 2.0 * self.alpha

    def declared_doc(self) -> Dict[str, float]:
        doc = {}
        for name in DECLARED_CONSTANTS:
            value = getattr(self, name)
            if value is not None:
                doc["lambda" if name == "lam" else name] = float(value)
        return doc

    def to_doc(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {}
        for item in fields(self):
            value = getattr(self, item.name)
            doc["lambda" if item.name == "lam" else item.name] = value
        doc["gamma"] = self.gamma
        return doc


def admissible_theta_interval(gamma: Optional[float], mu: Optional[float], delta: Optional[float]) -> Tuple[float, float]:
    """Open lower end gamma, upper end min(mu, -2*max(delta, 0))"""
    lo = -np.inf if gamma is None else float(gamma)
    hi = np.inf if mu is None else float(mu)
    if delta is not None:
        hi = min(hi, -2.0 * max(float(delta), 0.0))
    return lo, hi


def theta_admissible(theta: float, gamma: Optional[float], mu: Optional[float], delta: Optional[float]) -> bool:
    """gamma < theta <= mu and theta < -2*max(delta, 0)"""
    if gamma is not None and not theta > gamma:
        return False
    if mu is not None and not theta <= mu:
        return False
    return delta is None or theta < -2.0 * max(delta, 0.0)


@dataclass(frozen=True)
class ControlProblem:
    """Coefficients, domain, control set and declared constants"""
    b: Tuple[CoefficientExpr, ...]
    sigma: Tuple[Tuple[CoefficientExpr, ...], ...]
    f: CoefficientExpr
    g: CoefficientExpr
    domain: Domain
    controls: ControlSet
    m: int
    constants: Constants = Constants()
    name: str = "custom"

    def __post_init__(self):
        d, k, m = self.d, self.k, self.m
        if m < 1:
            raise DimensionMismatchError("brownian dimension must be positive", "dimension.m")
        if len(self.b) != d:
            raise DimensionMismatchError(f"b has {len(self.b)} components, domain has dimension {d}", "b")
        if len(self.sigma) != d:
            raise DimensionMismatchError(f"sigma has {len(self.sigma)} rows, expected {d}", "sigma")
        for i, row in enumerate(self.sigma):
            if len(row) != m:
                raise DimensionMismatchError(f"sigma row has {len(row)} columns, m is {m}", f"sigma[{i}]")
        for i, expr in enumerate(self.b):
            expr.check("state", d, k, m, f"b[{i}]")
        for i, row in enumerate(self.sigma):
            for j, expr in enumerate(row):
                expr.check("state", d, k, m, f"sigma[{i}][{j}]")
        self.f.check("driver", d, k, m, "f")
        self.g.check("terminal", d, k, m, "g")

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def k(self) -> int:
        return self.controls.k

    # Vectorised coefficient evaluation

    def controls_for(self, v: Optional[np.ndarray], n: int) -> np.ndarray:
        if v is None:
            v = self.controls.array[0]
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            v = np.broadcast_to(v, (n, self.k))
        return v

    def drift(self, x: np.ndarray, v: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.atleast_2d(x)
        env = EvalEnv(x, self.controls_for(v, x.shape[0]))
        return np.column_stack([e.evaluate(env) for e in self.b])

    def diffusion(self, x: np.ndarray, v: Optional[np.ndarray] = None) -> np.ndarray:
        """sigma(x, v) with shape (n, d, m)"""
        x = np.atleast_2d(x)
        env = EvalEnv(x, self.controls_for(v, x.shape[0]))
        rows = [np.stack([e.evaluate(env) for e in row], axis=-1) for row in self.sigma]
        return np.stack(rows, axis=1)

    def covariance(self, x: np.ndarray, v: Optional[np.ndarray] = None) -> np.ndarray:
        """a = sigma sigma^T with shape (n, d, d)"""
        s = self.diffusion(x, v)
        return np.einsum("nim,njm->nij", s, s)

    def driver(self, x: np.ndarray, y: np.ndarray, z: np.ndarray, v: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.atleast_2d(x)
        n = x.shape[0]
        y = np.broadcast_to(np.asarray(y, dtype=float), (n,))
        z = np.asarray(z, dtype=float)
        if z.ndim == 1 and z.size == n * self.m:
            z = z.reshape(n, self.m)
        z = np.broadcast_to(z, (n, self.m))
        return self.f.evaluate(EvalEnv(x, self.controls_for(v, n), y, z))

    def terminal(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.g.evaluate(EvalEnv(x))

    def generator(self, grad: np.ndarray, hess: np.ndarray, x: np.ndarray, v: Optional[np.ndarray] = None) -> np.ndarray:
        """L(x, v)phi = b . grad phi + 1/2 tr(a hess phi), given grad (n, d) and hess (n, d, d)"""
        b = self.drift(x, v)
        a = self.covariance(x, v)
        return np.einsum("ni,ni->n", b, grad) + 0.5 * np.einsum("nij,nij->n", a, hess)

    def with_constants(self, **updates) -> "ControlProblem":
        return replace(self, constants=replace(self.constants, **updates))

    def with_terminal(self, g: CoefficientExpr) -> "ControlProblem":
        return replace(self, g=g)

    def with_driver(self, f: CoefficientExpr) -> "ControlProblem":
        return replace(self, f=f)

    def with_domain(self, domain: Domain) -> "ControlProblem":
        return replace(self, domain=domain)


def _domain_from_doc(doc: DomainDoc) -> Domain:
    if doc.kind == "interval":
        if len(doc.center) != 1:
            raise DimensionMismatchError("interval domains are one-dimensional", "domain.center")
        return Domain.interval(doc.center[0], doc.radius)
    if doc.kind == "ball":
        return Domain.ball(doc.center, doc.radius)
    if len(doc.half_widths) != len(doc.center):
        raise DimensionMismatchError("box needs one half-width per axis", "domain.half_widths")
    return Domain.box(doc.center, doc.half_widths, doc.exterior_radius or 0.0)


def constants_from_doc(doc: ConstantsDoc) -> Constants:
    return Constants(**{name: getattr(doc, name) for name in DECLARED_CONSTANTS})


def parse_problem_spec(text: Union[str, bytes, Dict[str, Any]]) -> ControlProblem:
    """
    Parse a problem document (catalog entry or explicit expression trees).

    Args:
        text: JSON text or an already parsed document

    Returns:
        Validated ControlProblem

    Raises:
        SchemaError, DimensionMismatchError, UnknownCatalogEntryError,
        ExpressionTypeError: naming the offending JSON path
    """
    if isinstance(text, (str, bytes)):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", "$") from exc
    else:
        raw = text
    doc = validate_document(ProblemDocument, raw)
    declared = constants_from_doc(doc.constants)

    if doc.catalog is not None:
        from exitctrl.catalog import build_catalog_problem

        problem = build_catalog_problem(doc.catalog, doc.params)
        overrides = {k: v for k, v in vars(declared).items() if v is not None}
        if overrides:
            problem = replace(problem, constants=replace(problem.constants, **overrides))
        return replace(problem, name=doc.name or problem.name)

    dim = doc.dimension
    if len(doc.sigma) != dim.d:
        raise DimensionMismatchError(f"sigma has {len(doc.sigma)} rows, d is {dim.d}", "sigma")
    for i, row in enumerate(doc.sigma):
        if len(row) != dim.m:
            raise DimensionMismatchError(f"sigma row has {len(row)} columns, m is {dim.m}", f"sigma[{i}]")
    if len(doc.b) != dim.d:
        raise DimensionMismatchError(f"b has {len(doc.b)} components, d is {dim.d}", "b")

    domain = _domain_from_doc(doc.domain)
    if domain.d != dim.d:
        raise DimensionMismatchError(f"domain dimension {domain.d} differs from d = {dim.d}", "domain.center")
    controls = ControlSet.from_values(doc.controls.points)
    if controls.k != dim.k:
        raise DimensionMismatchError(f"control points have dimension {controls.k}, k is {dim.k}", "controls.points")

    b = tuple(CoefficientExpr.from_doc(e, f"b[{i}]") for i, e in enumerate(doc.b))
    sigma = tuple(
        tuple(CoefficientExpr.from_doc(e, f"sigma[{i}][{j}]") for j, e in enumerate(row))
        for i, row in enumerate(doc.sigma)
    )
    f = CoefficientExpr.from_doc(doc.f, "f")
    g = CoefficientExpr.from_doc(doc.g, "g")
    return ControlProblem(b, sigma, f, g, domain, controls, dim.m, declared, doc.name or "custom")


def serialize_problem(problem: ControlProblem) -> Dict[str, Any]:
    """Explicit-tree document; parse_problem_spec(serialize_problem(p)) == p"""
    return {
        "name": problem.name,
        "dimension": {"d": problem.d, "m": problem.m, "k": problem.k},
        "b": [e.to_doc() for e in problem.b],
        "sigma": [[e.to_doc() for e in row] for row in problem.sigma],
        "f": problem.f.to_doc(),
        "g": problem.g.to_doc(),
        "domain": problem.domain.to_doc(),
        "controls": problem.controls.to_doc(),
        "constants": problem.constants.declared_doc(),
    }


def problem_to_json(problem: ControlProblem) -> str:
    return canonical_json(serialize_problem(problem))

