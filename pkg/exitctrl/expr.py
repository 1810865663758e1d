"""Coefficient expression trees for b, sigma, f, g and test functions"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from exitctrl.exceptions import ExpressionTypeError, NonSmoothExpressionError, SchemaError


LEAF_OPS = ("const", "x", "v", "y", "z")
UNARY_OPS = ("neg", "abs", "exp", "sin", "cos", "tanh", "pow")
NARY_OPS = ("add", "mul", "min", "max")
ALL_OPS = LEAF_OPS + UNARY_OPS + NARY_OPS

# Which leaf kinds each coefficient may reference
CONTEXTS = {
    "state": {"x", "v"},             # b, sigma
    "terminal": {"x"},               # g, test functions
    "driver": {"x", "v", "y", "z"},  # f
}


@dataclass
class EvalEnv:
    """Vectorised arguments: x (n, d), v (n, k), y (n,), z (n, m)"""
    x: np.ndarray
    v: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class CoefficientExpr:
    """Immutable expression node; `value` holds the constant, index or exponent"""
    op: str
    args: Tuple["CoefficientExpr", ...] = ()
    value: float = 0.0

    def __post_init__(self):
        if self.op not in ALL_OPS:
            raise SchemaError(f"unknown expression op '{self.op}'")
        if self.op in LEAF_OPS and self.args:
            raise SchemaError(f"leaf op '{self.op}' takes no arguments")
        if self.op in UNARY_OPS and len(self.args) != 1:
            raise SchemaError(f"op '{self.op}' takes exactly one argument")
        if self.op in NARY_OPS and len(self.args) < 1:
            raise SchemaError(f"op '{self.op}' needs at least one argument")
        if self.op == "pow" and (self.value < 0 or self.value != int(self.value)):
            raise SchemaError("pow exponent must be a nonnegative integer")
        if self.op in ("x", "v", "z") and (self.value < 0 or self.value != int(self.value)):
            raise SchemaError(f"{self.op} index must be a nonnegative integer")

    @property
    def index(self) -> int:
        return int(self.value)

    # Operator sugar used by the catalog

    def __add__(self, other: "ExprLike") -> "CoefficientExpr":
        return add(self, as_expr(other))

    def __radd__(self, other: "ExprLike") -> "CoefficientExpr":
        return add(as_expr(other), self)

    def __sub__(self, other: "ExprLike") -> "CoefficientExpr":
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other: "ExprLike") -> "CoefficientExpr":
        return add(as_expr(other), neg(self))

    def __mul__(self, other: "ExprLike") -> "CoefficientExpr":
        return mul(self, as_expr(other))

    def __rmul__(self, other: "ExprLike") -> "CoefficientExpr":
        return mul(as_expr(other), self)

    def __neg__(self) -> "CoefficientExpr":
        return neg(self)

    def __pow__(self, n: int) -> "CoefficientExpr":
        return CoefficientExpr("pow", (self,), float(n))

    # Evaluation

    def evaluate(self, env: EvalEnv) -> np.ndarray:
        """Evaluate on n points at once; always returns shape (n,)"""
        op = self.op
        if op == "const":
            return np.full(env.n, self.value, dtype=float)
        if op == "x":
            return np.asarray(env.x[:, self.index], dtype=float)
        if op == "v":
            return np.asarray(env.v[:, self.index], dtype=float)
        if op == "y":
            return np.asarray(env.y, dtype=float).reshape(env.n)
        if op == "z":
            return np.asarray(env.z[:, self.index], dtype=float)

        values = [arg.evaluate(env) for arg in self.args]
        if op == "add":
            return np.sum(values, axis=0)
        if op == "mul":
            return np.prod(values, axis=0)
        if op == "min":
            return np.minimum.reduce(values)
        if op == "max":
            return np.maximum.reduce(values)

        a = values[0]
        if op == "neg":
            return -a
        if op == "abs":
            return np.abs(a)
        if op == "exp":
            return np.exp(a)
        if op == "sin":
            return np.sin(a)
        if op == "cos":
            return np.cos(a)
        if op == "tanh":
            return np.tanh(a)
        return np.power(a, self.index)

    def uses(self) -> set:
        """Leaf kinds referenced anywhere in the tree"""
        if self.op in LEAF_OPS:
            return {self.op} if self.op != "const" else set()
        kinds = set()
        for arg in self.args:
            kinds |= arg.uses()
        return kinds

    def check(self, context: str, d: int, k: int = 0, m: int = 0, path: str = "") -> None:
        """Validate leaf kinds against the context and index ranges"""
        allowed = CONTEXTS[context]
        if self.op in ("x", "v", "y", "z"):
            if self.op not in allowed:
                raise ExpressionTypeError(f"'{self.op}' node not allowed in {context} expression", path)
            bound = {"x": d, "v": k, "z": m}.get(self.op)
            if bound is not None and self.index >= bound:
                raise ExpressionTypeError(
                    f"{self.op}[{self.index}] out of range (dimension {bound})", path
                )
        for i, arg in enumerate(self.args):
            arg.check(context, d, k, m, f"{path}.args[{i}]")

    def derivative(self, i: int) -> "CoefficientExpr":
        """Symbolic partial derivative with respect to x[i]"""
        op = self.op
        if op in ("const", "v", "y", "z"):
            return ZERO
        if op == "x":
            return ONE if self.index == i else ZERO
        if op == "add":
            return add(*[arg.derivative(i) for arg in self.args])
        if op == "mul":
            terms = []
            for j, arg in enumerate(self.args):
                factors = list(self.args[:j]) + [arg.derivative(i)] + list(self.args[j + 1:])
                terms.append(mul(*factors))
            return add(*terms)
        if op in ("abs", "min", "max"):
            raise NonSmoothExpressionError(f"'{op}' node has no classical derivative")

        inner = self.args[0]
        du = inner.derivative(i)
        if op == "neg":
            return neg(du)
        if op == "exp":
            return mul(self, du)
        if op == "sin":
            return mul(CoefficientExpr("cos", (inner,)), du)
        if op == "cos":
            return neg(mul(CoefficientExpr("sin", (inner,)), du))
        if op == "tanh":
            return mul(add(ONE, neg(CoefficientExpr("pow", (self,), 2.0))), du)
        # pow
        n = self.index
        if n == 0:
            return ZERO
        lower = inner if n == 2 else CoefficientExpr("pow", (inner,), float(n - 1))
        return mul(const(float(n)), lower, du)

    # Documents

    def to_doc(self) -> dict:
        doc: Dict[str, object] = {"op": self.op}
        if self.op == "const":
            doc["value"] = float(self.value)
        elif self.op in ("x", "v", "z", "pow"):
            doc["value"] = self.index
        if self.args:
            doc["args"] = [arg.to_doc() for arg in self.args]
        return doc

    @classmethod
    def from_doc(cls, doc: object, path: str = "") -> "CoefficientExpr":
        """Parse a node document; bare numbers are accepted as constants"""
        if isinstance(doc, bool):
            raise SchemaError("expression must be a node object or number", path)
        if isinstance(doc, (int, float)):
            return const(float(doc))
        if not isinstance(doc, dict) or "op" not in doc:
            raise SchemaError("expression must be a node object with an 'op' field", path)
        unknown = set(doc) - {"op", "args", "value"}
        if unknown:
            raise SchemaError(f"unexpected keys {sorted(unknown)}", path)
        args_doc = doc.get("args", [])
        if not isinstance(args_doc, list):
            raise SchemaError("'args' must be a list", f"{path}.args")
        args = tuple(cls.from_doc(a, f"{path}.args[{i}]") for i, a in enumerate(args_doc))
        value = doc.get("value", 0.0)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError("'value' must be a number", f"{path}.value")
        try:
            return cls(str(doc["op"]), args, float(value))
        except SchemaError as exc:
            raise SchemaError(exc.detail, path) from exc


ExprLike = Union[CoefficientExpr, float, int]


def const(c: float) -> CoefficientExpr:
    return CoefficientExpr("const", (), float(c))


ZERO = const(0.0)
ONE = const(1.0)


def as_expr(e: ExprLike) -> CoefficientExpr:
    return e if isinstance(e, CoefficientExpr) else const(float(e))


def x(i: int) -> CoefficientExpr:
    return CoefficientExpr("x", (), float(i))


def v(j: int) -> CoefficientExpr:
    return CoefficientExpr("v", (), float(j))


def y() -> CoefficientExpr:
    return CoefficientExpr("y")


def z(j: int) -> CoefficientExpr:
    return CoefficientExpr("z", (), float(j))


def neg(e: CoefficientExpr) -> CoefficientExpr:
    if e.op == "const":
        return const(-e.value)
    return CoefficientExpr("neg", (e,))


def add(*terms: CoefficientExpr) -> CoefficientExpr:
    """Sum with constant folding; zero terms are dropped"""
    kept = [t for t in terms if not (t.op == "const" and t.value == 0.0)]
    if not kept:
        return ZERO
    if len(kept) == 1:
        return kept[0]
    if all(t.op == "const" for t in kept):
        return const(sum(t.value for t in kept))
    return CoefficientExpr("add", tuple(kept))


def mul(*factors: CoefficientExpr) -> CoefficientExpr:
    """Product with constant folding; any zero factor collapses to zero"""
    if any(f.op == "const" and f.value == 0.0 for f in factors):
        return ZERO
    kept = [f for f in factors if not (f.op == "const" and f.value == 1.0)]
    if not kept:
        return ONE
    if len(kept) == 1:
        return kept[0]
    if all(f.op == "const" for f in kept):
        return const(float(np.prod([f.value for f in kept])))
    return CoefficientExpr("mul", tuple(kept))


def unary(op: str, e: CoefficientExpr) -> CoefficientExpr:
    return CoefficientExpr(op, (e,))


def minimum(*args: CoefficientExpr) -> CoefficientExpr:
    return CoefficientExpr("min", tuple(args))


def maximum(*args: CoefficientExpr) -> CoefficientExpr:
    return CoefficientExpr("max", tuple(args))


def gradient(e: CoefficientExpr, d: int) -> Tuple[CoefficientExpr, ...]:
    return tuple(e.derivative(i) for i in range(d))


def hessian(e: CoefficientExpr, d: int) -> Tuple[Tuple[CoefficientExpr, ...], ...]:
    grad = gradient(e, d)
    return tuple(tuple(grad[i].derivative(j) for j in range(d)) for i in range(d))


def is_polynomial(e: CoefficientExpr) -> bool:
    """True when the tree only uses const/x/add/mul/neg/pow nodes"""
    if e.op in ("const", "x"):
        return True
    if e.op in ("add", "mul", "neg", "pow"):
        return all(is_polynomial(a) for a in e.args)
    return False
