"""Monotone finite-difference HJB solver with policy iteration"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from exitctrl.domain import ControlSet
from exitctrl.exceptions import (
    ConfigError,
    DomainMembershipError,
    IterationCapError,
    NonMonotoneStencilError,
    SchemaError,
)
from exitctrl.paths import Policy
from exitctrl.problem import ControlProblem
from exitctrl.schemas import GridConfig

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12
TIE_TOL = 1e-12
Y_STEP = 1e-6


@dataclass(frozen=True)
class Grid:
    """Tensor-product nodes covering the bounding box of D, C order"""
    axes: Tuple[np.ndarray, ...]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coords(self, flat: Optional[np.ndarray] = None) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        return pts if flat is None else pts[flat]

    def multi_index(self, flat: np.ndarray) -> np.ndarray:
        return np.column_stack(np.unravel_index(flat, self.shape))

    def shifted(self, flat: np.ndarray, offset: Tuple[int, ...]) -> np.ndarray:
        idx = self.multi_index(flat) + np.asarray(offset)
        return np.ravel_multi_index(tuple(idx.T), self.shape)

    def nearest(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.array([a[0] for a in self.axes])
        idx = np.rint((pts - lo) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.shape)


def build_grid(problem: ControlProblem, config: GridConfig) -> Grid:
    d = problem.d
    if d > 2:
        raise ConfigError(f"tensor-grid HJB solves support d <= 2, got d = {d}", "dimension.d")
    nodes = list(config.nodes)
    if len(nodes) == 1:
        nodes = nodes * d
    if len(nodes) != d:
        raise SchemaError(f"grid needs 1 or {d} node counts", "grid.nodes")
    lo, hi = problem.domain.bounding_box()
    return Grid(tuple(np.linspace(lo[i], hi[i], nodes[i]) for i in range(d)))


def _stencil_weights(problem: ControlProblem, grid: Grid, flat: np.ndarray, v_point: np.ndarray,
                     upwind: bool) -> Dict[Tuple[int, ...], np.ndarray]:
    """Off-centre weights of L_h(x, v) per neighbour offset; all must be nonnegative"""
    x = grid.coords(flat)
    h = grid.spacing
    b = problem.drift(x, v_point)
    a = problem.covariance(x, v_point)
    d = grid.d
    weights: Dict[Tuple[int, ...], np.ndarray] = {}

    def put(offset, w):
        weights[offset] = weights.get(offset, 0.0) + w

    for i in range(d):
        plus = tuple(1 if j == i else 0 for j in range(d))
        minus = tuple(-1 if j == i else 0 for j in range(d))
        diff = 0.5 * a[:, i, i] / h[i] ** 2
        put(plus, diff)
        put(minus, diff)
        if upwind:
            put(plus, np.maximum(b[:, i], 0.0) / h[i])
            put(minus, np.maximum(-b[:, i], 0.0) / h[i])
        else:
            put(plus, b[:, i] / (2.0 * h[i]))
            put(minus, -b[:, i] / (2.0 * h[i]))

    if d == 2:
        a12 = a[:, 0, 1]
        c = np.abs(a12) / (2.0 * h[0] * h[1])
        pos = a12 >= 0
        put((1, 1), np.where(pos, c, 0.0))
        put((-1, -1), np.where(pos, c, 0.0))
        put((1, -1), np.where(pos, 0.0, c))
        put((-1, 1), np.where(pos, 0.0, c))
        for offset in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            put(offset, -c)

    weights = {offset: np.broadcast_to(w, flat.shape) for offset, w in weights.items()}
    scale = max(1.0, float(np.max(np.abs(np.stack(list(weights.values()))))))
    for w in weights.values():
        if np.any(w < -1e-12 * scale):
            worst = int(np.argmin(w))
            raise NonMonotoneStencilError(tuple(float(c) for c in x[worst]), float(w[worst]))
    return weights


def assemble_operator(problem: ControlProblem, grid: Grid, flat: np.ndarray, v_point: np.ndarray,
                      upwind: bool = True) -> sp.csr_matrix:
    """Rows of L_h(., v) at nodes `flat`, columns over all grid nodes"""
    weights = _stencil_weights(problem, grid, flat, v_point, upwind)
    rows, cols, vals = [], [], []
    r = np.arange(flat.size)
    centre = np.zeros(flat.size)
    for offset, w in weights.items():
        rows.append(r)
        cols.append(grid.shifted(flat, offset))
        vals.append(w)
        centre -= w
    rows.append(r)
    cols.append(flat)
    vals.append(centre)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(flat.size, grid.size),
    )


def gradient_operators(grid: Grid, flat: np.ndarray) -> List[sp.csr_matrix]:
    """Central first differences at nodes `flat`, one matrix per axis"""
    ops = []
    r = np.arange(flat.size)
    for i in range(grid.d):
        plus = grid.shifted(flat, tuple(1 if j == i else 0 for j in range(grid.d)))
        minus = grid.shifted(flat, tuple(-1 if j == i else 0 for j in range(grid.d)))
        inv = 1.0 / (2.0 * grid.spacing[i])
        ops.append(sp.csr_matrix(
            (np.concatenate([np.full(flat.size, inv), np.full(flat.size, -inv)]),
             (np.concatenate([r, r]), np.concatenate([plus, minus]))),
            shape=(flat.size, grid.size),
        ))
    return ops


@dataclass
class ValueField:
    """Nodal HJB solution on a tensor grid"""
    grid: Grid
    u: np.ndarray
    policy: np.ndarray
    boundary: np.ndarray
    controls: ControlSet
    upwind: bool = True
    tolerance: float = 1e-9
    log: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.coords()

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary.ravel())

    @property
    def sup_residual(self) -> float:
        return self.log[-1]["residual"] if self.log else float("nan")

    @property
    def sweeps(self) -> int:
        return len(self.log)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.grid.d)
        interp = RegularGridInterpolator(self.grid.axes, self.u, method="linear", bounds_error=False, fill_value=None)
        return interp(pts)

    def policy_index_at(self, points: np.ndarray) -> np.ndarray:
        return self.policy.ravel()[self.grid.nearest(points)]

    def frame(self) -> pd.DataFrame:
        nodes = self.nodes
        frame = pd.DataFrame({f"x_{j}": nodes[:, j] for j in range(self.grid.d)})
        frame["u"] = self.u.ravel()
        frame["policy"] = self.policy.ravel()
        frame["boundary"] = self.boundary.ravel()
        return frame

    def summary(self) -> Dict[str, Any]:
        return {
            "nodes": list(self.grid.shape),
            "spacing": self.grid.spacing.tolist(),
            "sweeps": self.sweeps,
            "sup_residual": self.sup_residual,
            "u_min": float(np.min(self.u)),
            "u_max": float(np.max(self.u)),
            "upwind": self.upwind,
        }


class _FrozenSystem:
    """Per-control operators, diffusions and gradient stencils at the interior nodes"""

    def __init__(self, problem: ControlProblem, grid: Grid, interior: np.ndarray, upwind: bool):
        self.problem = problem
        self.interior = interior
        self.x = grid.coords(interior)
        self.controls = problem.controls.array
        self.ops = [assemble_operator(problem, grid, interior, v, upwind) for v in self.controls]
        self.sigmas = [problem.diffusion(self.x, v) for v in self.controls]
        self.grads = gradient_operators(grid, interior)

    def z_arg(self, u_full: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        grad = np.column_stack([g @ u_full for g in self.grads])
        return np.einsum("ni,nim->nm", grad, sigma)

    def hamiltonians(self, u_full: np.ndarray) -> np.ndarray:
        """(n_interior, K) values of L_h(v)u + f(x, u, grad u sigma(v), v)"""
        y = u_full[self.interior]
        cols = []
        for op, sigma, v in zip(self.ops, self.sigmas, self.controls):
            cols.append(op @ u_full + self.problem.driver(self.x, y, self.z_arg(u_full, sigma), v))
        return np.column_stack(cols)

    def select(self, policy: np.ndarray):
        op = sum(sp.diags((policy == j).astype(float)) @ A for j, A in enumerate(self.ops))
        sigma = np.stack(self.sigmas)[policy, np.arange(policy.size)]
        return sp.csr_matrix(op), sigma, self.controls[policy]


def _argmin_lowest(h: np.ndarray) -> np.ndarray:
    best = h.min(axis=1, keepdims=True)
    return np.argmax(h <= best + TIE_TOL * np.maximum(1.0, np.abs(best)), axis=1)


def _solve_frozen(system: _FrozenSystem, policy: np.ndarray, u_full: np.ndarray, boundary_idx: np.ndarray,
                  config: GridConfig) -> Tuple[np.ndarray, int, float]:
    """Damped fixed point for L_h u + f(x, u, grad u sigma, v) = 0 under a fixed policy"""
    problem = system.problem
    interior = system.interior
    op, sigma, v = system.select(policy)
    a_ii = op[:, interior]
    a_ib = op[:, boundary_idx]
    rhs_boundary = a_ib @ u_full[boundary_idx]
    u = u_full.copy()
    residual = np.inf
    for it in range(1, config.max_semilinear_iterations + 1):
        y = u[interior]
        z = system.z_arg(u, sigma)
        f = problem.driver(system.x, y, z, v)
        residual = float(np.max(np.abs(op @ u + f))) if interior.size else 0.0
        if residual <= config.tolerance:
            return u, it - 1, residual
        # implicit part of the y-dependence, kept nonpositive so the matrix stays an M-matrix
        slope = (problem.driver(system.x, y + Y_STEP, z, v) - problem.driver(system.x, y - Y_STEP, z, v)) / (2 * Y_STEP)
        slope = np.minimum(slope, 0.0)
        matrix = sp.csc_matrix(a_ii + sp.diags(slope))
        target = spsolve(matrix, -f + slope * y - rhs_boundary)
        step = config.damping * (target - y)
        u[interior] = y + step
        if np.max(np.abs(step)) <= 1e-15 * max(1.0, float(np.max(np.abs(y)))):
            y = u[interior]
            residual = float(np.max(np.abs(op @ u + problem.driver(system.x, y, system.z_arg(u, sigma), v))))
            return u, it, residual
    raise IterationCapError("semilinear fixed point", config.max_semilinear_iterations, residual)


def fill_boundary_policy(grid: Grid, interior: np.ndarray, policy: np.ndarray) -> np.ndarray:
    """Nodal policy; boundary nodes copy the choice of their closest interior node"""
    nodal = np.zeros(grid.size, dtype=np.int64)
    if interior.size == 0:
        return nodal
    nodal[interior] = policy
    outside = np.setdiff1d(np.arange(grid.size), interior)
    if outside.size:
        _, closest = cKDTree(grid.coords(interior)).query(grid.coords(outside))
        nodal[outside] = policy[closest]
    return nodal


def boundary_values(problem: ControlProblem, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Boundary mask and Dirichlet data g at the closest boundary point of every masked node"""
    nodes = grid.coords()
    mask = problem.domain.signed_distance(nodes) <= BOUNDARY_TOL
    values = np.zeros(grid.size)
    if np.any(mask):
        values[mask] = problem.terminal(problem.domain.closest_boundary_point(nodes[mask]))
    return mask, values


def solve_hjb(problem: ControlProblem, config: Optional[GridConfig] = None) -> ValueField:
    """
    Policy iteration on the monotone discretisation of
    inf_v { L(x, v)u + f(x, u, grad u sigma(x, v), v) } = 0, u = g on the boundary.

    Args:
        problem: Control problem with d <= 2
        config: Grid and iteration settings

    Returns:
        ValueField with residual per policy sweep in `log`

    Raises:
        NonMonotoneStencilError: a stencil weight is negative
        IterationCapError: policy or semilinear iteration cap exceeded
    """
    config = config or GridConfig()
    grid = build_grid(problem, config)
    mask, values = boundary_values(problem, grid)
    interior = np.flatnonzero(~mask)
    boundary_idx = np.flatnonzero(mask)
    system = _FrozenSystem(problem, grid, interior, config.upwind)

    u = values.copy()
    policy = np.zeros(interior.size, dtype=np.int64)
    log: List[Dict[str, Any]] = []
    for sweep in range(1, config.max_policy_iterations + 1):
        u, inner, _ = _solve_frozen(system, policy, u, boundary_idx, config)
        ham = system.hamiltonians(u)
        new_policy = _argmin_lowest(ham)
        residual = float(np.max(np.abs(ham.min(axis=1)))) if interior.size else 0.0
        changes = int(np.sum(new_policy != policy))
        log.append({"sweep": sweep, "residual": residual, "policy_changes": changes, "inner_iterations": inner})
        logger.debug("policy sweep %d: residual %.3g, %d changes, %d inner iterations", sweep, residual, changes, inner)
        policy = new_policy
        if changes == 0 and residual <= config.tolerance:
            break
    else:
        raise IterationCapError("policy iteration", config.max_policy_iterations, log[-1]["residual"])

    nodal_policy = fill_boundary_policy(grid, interior, policy)
    return ValueField(
        grid=grid,
        u=u.reshape(grid.shape),
        policy=nodal_policy.reshape(grid.shape),
        boundary=mask.reshape(grid.shape),
        controls=problem.controls,
        upwind=config.upwind,
        tolerance=config.tolerance,
        log=log,
    )


def nodal_hamiltonians(field: ValueField, problem: ControlProblem, x) -> np.ndarray:
    """Discrete Hamiltonian at one interior node for every control, shape (K,)"""
    point = np.atleast_2d(np.asarray(x, dtype=float))
    node = field.grid.nearest(point)
    if np.max(np.abs(field.grid.coords(node) - point)) > 1e-9 * float(np.min(field.grid.spacing)):
        raise DomainMembershipError(f"{point[0].tolist()} is not a grid node", "x")
    if field.boundary.ravel()[node[0]]:
        raise DomainMembershipError(f"{point[0].tolist()} is a boundary node", "x")
    system = _FrozenSystem(problem, field.grid, node, field.upwind)
    return system.hamiltonians(field.u.ravel())[0]


def hjb_residual(field: ValueField, problem: ControlProblem, x) -> float:
    """inf over V_h of L_h(x, v)u + f(x, u, grad_h u sigma(x, v), v) at an interior node"""
    return float(np.min(nodal_hamiltonians(field, problem, x)))


def extract_policy(field: ValueField, problem: ControlProblem) -> Policy:
    """Nearest-node feedback policy usable by paths.simulate"""
    if field.controls != problem.controls:
        raise SchemaError("value field was solved with a different control set", "controls")
    return Policy.feedback(problem.controls, field.policy_index_at, label="hjb_feedback")

