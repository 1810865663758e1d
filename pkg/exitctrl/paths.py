"""Controlled SDE simulation, first-exit detection and exit-time functionals"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from exitctrl.domain import ControlSet, Domain
from exitctrl.exceptions import DomainMembershipError, NonFiniteStateError, SchemaError
from exitctrl.problem import ControlProblem
from exitctrl.schemas import ProbeConfig, SimConfig
from exitctrl.utils.io import write_frame
from exitctrl.utils.rng import block_draws
from exitctrl.utils.workers import map_chunks

logger = logging.getLogger(__name__)

BLOCK = 256            # time steps per random block
CHUNK = 1024           # paths per work unit
BOUNDARY_TOL = 1e-12   # projection / boundary membership tolerance


@dataclass(frozen=True)
class Policy:
    """
    Implementable control policy.

    kinds: constant (one control index), open_loop (index per grid step,
    last entry repeats), feedback (state lookup, typically from a value
    field) and table (nearest of a list of state nodes).
    """
    kind: str
    controls: ControlSet
    index: int = 0
    schedule: Tuple[int, ...] = ()
    lookup: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False, repr=False)
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "open_loop", "feedback", "table"):
            raise SchemaError(f"unknown policy kind '{self.kind}'", "policy.kind")
        n = len(self.controls)
        if self.kind == "constant" and not 0 <= self.index < n:
            raise SchemaError(f"control index {self.index} out of range", "policy.index")
        if self.kind == "open_loop" and (not self.schedule or any(not 0 <= i < n for i in self.schedule)):
            raise SchemaError("open-loop schedule must be nonempty with valid indices", "policy.schedule")
        if self.kind in ("feedback", "table") and self.lookup is None:
            raise SchemaError(f"{self.kind} policy needs a lookup", "policy")

    @classmethod
    def constant(cls, controls: ControlSet, index: int = 0) -> "Policy":
        return cls("constant", controls, index=index, label=f"constant[{index}]")

    @classmethod
    def open_loop(cls, controls: ControlSet, schedule) -> "Policy":
        return cls("open_loop", controls, schedule=tuple(int(i) for i in schedule), label="open_loop")

    @classmethod
    def feedback(cls, controls: ControlSet, lookup: Callable[[np.ndarray], np.ndarray], label: str = "feedback") -> "Policy":
        return cls("feedback", controls, lookup=lookup, label=label)

    @classmethod
    def table(cls, controls: ControlSet, nodes: np.ndarray, indices: np.ndarray) -> "Policy":
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        indices = np.asarray(indices, dtype=int)
        if nodes.shape[0] != indices.shape[0]:
            raise SchemaError("table needs one control index per node", "policy.table")
        tree = cKDTree(nodes)

        def nearest(points: np.ndarray) -> np.ndarray:
            _, which = tree.query(np.atleast_2d(points))
            return indices[which]

        return cls("table", controls, lookup=nearest, label="table")

    def indices(self, step: int, x: np.ndarray) -> np.ndarray:
        """Control indices (n,) for states x (n, d) at grid step `step`"""
        n = np.atleast_2d(x).shape[0]
        if self.kind == "constant":
            return np.full(n, self.index, dtype=int)
        if self.kind == "open_loop":
            return np.full(n, self.schedule[min(step, len(self.schedule) - 1)], dtype=int)
        idx = np.asarray(self.lookup(x), dtype=int).reshape(n)
        if np.any((idx < 0) | (idx >= len(self.controls))):
            raise SchemaError("policy lookup returned an index outside the control set", "policy")
        return idx

    def evaluate(self, step: int, x: np.ndarray) -> np.ndarray:
        return self.controls.array[self.indices(step, x)]


@dataclass(frozen=True)
class ExitRecord:
    exit_step: Optional[int]   # None when censored
    tau: float
    exit_point: np.ndarray
    censored: bool


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    stderr: float
    n: int
    censored_fraction: float = 0.0

    def to_doc(self) -> Dict[str, float]:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n, "censored_fraction": self.censored_fraction}


def sample_moments(values: np.ndarray, censored_fraction: float = 0.0) -> MomentEstimate:
    values = np.asarray(values, dtype=float)
    n = values.size
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MomentEstimate(float(np.mean(values)), stderr, n, float(censored_fraction))


@dataclass
class PathBundle:
    """
    Simulated paths stored ragged: path i keeps steps 0..last_step[i].

    Later grid steps follow the frozen convention (state equals the exit
    point, increment zero) and are produced on demand by the accessors.
    Row r of the flat arrays holds the state at its step, the increment
    from that step to the next and the control index applied there.
    """
    grid: np.ndarray
    x0: np.ndarray
    master_seed: int
    exit_correction: str
    controls: ControlSet
    offsets: np.ndarray
    flat_states: np.ndarray
    flat_increments: np.ndarray
    flat_controls: np.ndarray
    last_step: np.ndarray
    tau: np.ndarray
    exit_point: np.ndarray
    censored: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.last_step.shape[0]

    @property
    def n_steps(self) -> int:
        return self.grid.shape[0] - 1

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def t_max(self) -> float:
        return float(self.grid[-1])

    @property
    def d(self) -> int:
        return self.flat_states.shape[1]

    @property
    def m(self) -> int:
        return self.flat_increments.shape[1]

    @property
    def max_step(self) -> int:
        """Largest stored step over all paths"""
        return int(self.last_step.max())

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.censored))

    @property
    def substream_ids(self) -> np.ndarray:
        """Path i draws from the Philox key (master_seed, i)"""
        return np.arange(self.n_paths)

    @property
    def exit_step(self) -> np.ndarray:
        """Exit step per path, -1 for censored paths"""
        return np.where(self.censored, -1, self.last_step)

    def rows_at(self, step: int) -> np.ndarray:
        return self.offsets[:-1] + np.minimum(step, self.last_step)

    def state_at(self, step: int) -> np.ndarray:
        return self.flat_states[self.rows_at(step)]

    def increments_at(self, step: int) -> np.ndarray:
        inc = self.flat_increments[self.rows_at(step)]
        return np.where((step < self.last_step)[:, None], inc, 0.0)

    def control_indices_at(self, step: int) -> np.ndarray:
        return self.flat_controls[self.rows_at(step)]

    def controls_at(self, step: int) -> np.ndarray:
        return self.controls.array[self.control_indices_at(step)]

    def active_at(self, step: int) -> np.ndarray:
        """Paths that have not stopped before stepping from `step`"""
        return step < self.last_step

    def path_states(self, i: int) -> np.ndarray:
        return self.flat_states[self.offsets[i]:self.offsets[i + 1]]

    def dense_states(self, max_step: Optional[int] = None) -> np.ndarray:
        """States (n_paths, max_step + 1, d) with frozen continuation"""
        top = self.max_step if max_step is None else max_step
        return np.stack([self.state_at(n) for n in range(top + 1)], axis=1)

    def exit_record(self, i: int) -> ExitRecord:
        censored = bool(self.censored[i])
        return ExitRecord(None if censored else int(self.last_step[i]), float(self.tau[i]),
                          self.exit_point[i].copy(), censored)

    @property
    def exits(self) -> List[ExitRecord]:
        return [self.exit_record(i) for i in range(self.n_paths)]

    def exit_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "path_id": np.arange(self.n_paths),
            "exit_step": self.exit_step,
            "tau": self.tau,
            "censored": self.censored,
        })
        for j in range(self.d):
            frame[f"exit_point_{j}"] = self.exit_point[:, j]
        return frame

    def export(self, path: Union[str, Path]) -> Path:
        return write_frame(path, self.exit_frame())

    def summary(self) -> Dict[str, Any]:
        tau = exit_time_summary(self)
        return {
            "n_paths": self.n_paths,
            "dt": self.dt,
            "t_max": self.t_max,
            "master_seed": self.master_seed,
            "exit_correction": self.exit_correction,
            "mean_tau": tau.mean,
            "stderr_tau": tau.stderr,
            "censored_fraction": self.censored_fraction,
            "max_step": self.max_step,
        }


# Exit detection

def crossing_probability(d1: np.ndarray, d2: np.ndarray, sigma2: np.ndarray, dt: float) -> np.ndarray:
    """Brownian-bridge probability of touching the boundary between two inside states"""
    d1 = np.maximum(d1, 0.0)
    d2 = np.maximum(d2, 0.0)
    sigma2 = np.asarray(sigma2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.exp(-2.0 * d1 * d2 / (sigma2 * dt))
    return np.where(sigma2 > 0, p, 0.0)


def normal_variance(domain: Domain, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """|n^T sigma|^2 with n the outward normal at the boundary point closest to x"""
    normal = domain.outward_normal(domain.closest_boundary_point(x))
    proj = np.einsum("ni,nim->nm", normal, sigma)
    return np.sum(proj * proj, axis=1)


def detect_exit(
    states: np.ndarray,
    domain: Domain,
    mode: str,
    dt: float,
    sigma2: Optional[np.ndarray] = None,
    uniforms: Optional[np.ndarray] = None,
) -> ExitRecord:
    """
    First exit of one path given its states on the grid.

    Args:
        states: States (S + 1, d) at grid steps 0..S
        domain: Domain D
        mode: "grid-crossing" or "bridge-corrected"
        dt: Time step
        sigma2: Normal diffusion variance per step (S,), bridge mode only
        uniforms: One uniform per step (S,), bridge mode only

    Returns:
        ExitRecord; censored with tau = S * dt when the path never leaves
    """
    states = np.atleast_2d(states)
    sd = domain.signed_distance(states)
    if sd[0] <= BOUNDARY_TOL:
        return ExitRecord(0, 0.0, domain.closest_boundary_point(states[:1])[0], False)
    bridge = mode == "bridge-corrected"
    if bridge and (sigma2 is None or uniforms is None):
        raise SchemaError("bridge-corrected detection needs sigma2 and uniforms", "mode")
    for n in range(len(states) - 1):
        d1, d2 = sd[n], sd[n + 1]
        out = d2 < 0
        hit = False
        if bridge and not out:
            hit = bool(uniforms[n] < crossing_probability(d1, d2, sigma2[n], dt))
        if out or hit:
            frac = d1 / (d1 + abs(d2)) if bridge and d1 + abs(d2) > 0 else 1.0
            point = domain.closest_boundary_point(states[n + 1:n + 2])[0]
            return ExitRecord(n + 1, (n + frac) * dt, point, False)
    return ExitRecord(None, (len(states) - 1) * dt, states[-1].copy(), True)


# Simulation

def _simulate_chunk(problem: ControlProblem, policy: Policy, x0: np.ndarray, config: SimConfig,
                    start: int, stop: int) -> Dict[str, np.ndarray]:
    P, d, m = stop - start, problem.d, problem.m
    N, dt = config.n_steps, config.dt
    sqdt = math.sqrt(dt)
    dom = problem.domain
    bridge = config.exit_correction == "bridge-corrected"
    controls = policy.controls.array

    x = np.tile(x0, (P, 1))
    last = np.full(P, N, dtype=np.int64)
    tau = np.full(P, N * dt)
    exit_point = x.copy()
    censored = np.ones(P, dtype=bool)
    alive = np.ones(P, dtype=bool)

    if dom.signed_distance(x0[None, :])[0] <= BOUNDARY_TOL:
        alive[:] = False
        last[:] = 0
        tau[:] = 0.0
        censored[:] = False

    states: List[np.ndarray] = [x.copy()]
    increments: List[np.ndarray] = []
    applied: List[np.ndarray] = []
    normals = uniforms = None
    n = 0
    while n < N and alive.any():
        j = n % BLOCK
        if j == 0:
            block = n // BLOCK
            normals = np.zeros((P, BLOCK, m))
            uniforms = np.ones((P, BLOCK))
            for i in np.flatnonzero(alive):
                normals[i], uniforms[i] = block_draws(config.master_seed, start + i, block, BLOCK, m)

        idx = np.flatnonzero(alive)
        xa = x[idx]
        v_idx = policy.indices(n, xa)
        va = controls[v_idx]
        dB = sqdt * normals[idx, j]
        sigma = problem.diffusion(xa, va)
        x_new = xa + problem.drift(xa, va) * dt + np.einsum("nij,nj->ni", sigma, dB)
        bad = ~np.all(np.isfinite(x_new), axis=1)
        if np.any(bad):
            raise NonFiniteStateError(int(start + idx[np.argmax(bad)]), n + 1)

        step_inc = np.zeros((P, m))
        step_inc[idx] = dB
        step_ctl = np.zeros(P, dtype=np.int64)
        step_ctl[idx] = v_idx
        increments.append(step_inc)
        applied.append(step_ctl)

        sd_old = dom.signed_distance(xa)
        sd_new = dom.signed_distance(x_new)
        exited = sd_new < 0
        frac = np.ones(idx.size)
        if bridge:
            p_hit = crossing_probability(sd_old, sd_new, normal_variance(dom, xa, sigma), dt)
            exited |= uniforms[idx, j] < p_hit
            denom = sd_old + np.abs(sd_new)
            frac = np.where(denom > 0, sd_old / np.where(denom > 0, denom, 1.0), 1.0)

        if np.any(exited):
            e = np.flatnonzero(exited)
            gi = idx[e]
            points = dom.closest_boundary_point(x_new[e])
            x_new[e] = points
            last[gi] = n + 1
            tau[gi] = (n + frac[e]) * dt
            exit_point[gi] = points
            censored[gi] = False
            alive[gi] = False
        x[idx] = x_new
        states.append(x.copy())
        n += 1

    exit_point[censored] = x[censored]
    increments.append(np.zeros((P, m)))
    applied.append(np.zeros(P, dtype=np.int64))
    keep = np.arange(len(states))[None, :] <= last[:, None]
    return {
        "states": np.stack(states, axis=1)[keep],
        "increments": np.stack(increments, axis=1)[keep],
        "controls": np.stack(applied, axis=1)[keep],
        "last": last,
        "tau": tau,
        "exit_point": exit_point,
        "censored": censored,
    }


def simulate(problem: ControlProblem, policy: Policy, x0, config: SimConfig,
             workers: Optional[int] = None) -> PathBundle:
    """
    Euler-Maruyama simulation with first-exit detection.

    Each path draws its increments from its own Philox substream, so the
    bundle is bit-identical for any worker count.

    Args:
        problem: Control problem
        policy: Control policy
        x0: Starting state in closure(D)
        config: Time grid, path count, seed and exit mode
        workers: Optional worker cap (default EXITCTRL_THREADS)

    Returns:
        PathBundle

    Raises:
        DomainMembershipError: x0 outside closure(D)
        NonFiniteStateError: an Euler step produced inf/nan
    """
    x0 = np.asarray(x0, dtype=float).reshape(problem.d)
    if not problem.domain.contains(x0[None, :], tol=BOUNDARY_TOL)[0]:
        raise DomainMembershipError(f"x0 = {x0.tolist()} lies outside the closed domain", "x0")
    if policy.controls != problem.controls:
        raise SchemaError("policy control set differs from the problem's", "policy")

    logger.debug("simulating %d paths, %d steps, mode %s", config.n_paths, config.n_steps, config.exit_correction)
    parts = map_chunks(
        lambda start, stop: _simulate_chunk(problem, policy, x0, config, start, stop),
        config.n_paths, CHUNK, workers,
    )
    last = np.concatenate([p["last"] for p in parts])
    offsets = np.zeros(last.size + 1, dtype=np.int64)
    np.cumsum(last + 1, out=offsets[1:])
    bundle = PathBundle(
        grid=config.dt * np.arange(config.n_steps + 1),
        x0=x0,
        master_seed=config.master_seed,
        exit_correction=config.exit_correction,
        controls=problem.controls,
        offsets=offsets,
        flat_states=np.concatenate([p["states"] for p in parts]),
        flat_increments=np.concatenate([p["increments"] for p in parts]),
        flat_controls=np.concatenate([p["controls"] for p in parts]),
        last_step=last,
        tau=np.concatenate([p["tau"] for p in parts]),
        exit_point=np.concatenate([p["exit_point"] for p in parts]),
        censored=np.concatenate([p["censored"] for p in parts]),
    )
    if bundle.censored_fraction > 0.01:
        logger.warning("%.2f%% of paths censored at t_max=%g", 100 * bundle.censored_fraction, config.t_max)
    return bundle


# Exit-time functionals

def exit_moment(bundle: PathBundle, mu: float) -> MomentEstimate:
    """Sample mean of exp(mu * tau); censored paths contribute exp(mu * t_max)"""
    if mu == 0:
        return MomentEstimate(1.0, 0.0, bundle.n_paths, bundle.censored_fraction)
    return sample_moments(np.exp(mu * bundle.tau), bundle.censored_fraction)


def exit_time_summary(bundle: PathBundle) -> MomentEstimate:
    return sample_moments(bundle.tau, bundle.censored_fraction)


@dataclass(frozen=True)
class MomentConvergence:
    mu: float
    at_horizon: MomentEstimate
    at_double: MomentEstimate
    converged: bool

    @property
    def relative_change(self) -> float:
        base = abs(self.at_horizon.mean) or 1.0
        return abs(self.at_double.mean - self.at_horizon.mean) / base


def moment_convergence(problem: ControlProblem, policy: Policy, x0, config: SimConfig, mu: float,
                       rel_change: float = 0.05) -> MomentConvergence:
    """
    Compare exp(mu tau) estimates at t_max and 2 t_max on shared seeds.

    Paths agree up to t_max, so the difference only comes from paths that
    were censored at t_max.
    """
    short = exit_moment(simulate(problem, policy, x0, config), mu)
    doubled = config.model_copy(update={"t_max": 2.0 * config.t_max})
    long = exit_moment(simulate(problem, policy, x0, doubled), mu)
    result = MomentConvergence(mu, short, long, False)
    converged = result.relative_change < rel_change
    if not converged:
        logger.info("exp(%g tau) moment not stable: %.4g -> %.4g", mu, short.mean, long.mean)
    return MomentConvergence(mu, short, long, converged)


def estimate_moment_exponent(problem: ControlProblem, probe: Optional[ProbeConfig] = None) -> float:
    """Largest mu on the probe ladder whose exit moment from the domain centre is stable, over constant policies"""
    probe = probe or ProbeConfig()
    config = SimConfig(dt=probe.mu_dt, t_max=probe.mu_horizon, n_paths=probe.mu_paths,
                       master_seed=probe.seed, exit_correction="bridge-corrected")
    center = np.asarray(problem.domain.center)
    best = math.inf
    for index in range(len(problem.controls)):
        policy = Policy.constant(problem.controls, index)
        short = simulate(problem, policy, center, config)
        long = simulate(problem, policy, center, config.model_copy(update={"t_max": 2.0 * config.t_max}))
        stable = 0.0
        for mu in sorted(probe.mu_ladder):
            a, b = exit_moment(short, mu).mean, exit_moment(long, mu).mean
            if abs(b - a) >= probe.mu_rel_change * abs(a):
                break
            stable = mu
        best = min(best, stable)
    logger.debug("estimated exit-moment exponent mu = %g", best)
    return float(best)


def coupled_distance(problem: ControlProblem, policy: Policy, x, x_prime, config: SimConfig,
                     stop_time: float, delta: float = 0.0) -> MomentEstimate:
    """
    |X^x - X^x'|^2 exp(-2 delta t~) at t~ = stop_time ^ tau_x ^ tau_x'.

    Both bundles use the same seed, so the two paths share increments.
    """
    first = simulate(problem, policy, x, config)
    second = simulate(problem, policy, x_prime, config)
    stop = np.minimum(np.minimum(first.last_step, second.last_step), int(round(stop_time / config.dt)))
    # the exit step stores the projected exit point; compare the pre-exit states instead
    exited = ((stop == first.last_step) & ~first.censored) | ((stop == second.last_step) & ~second.censored)
    stop = np.where(exited & (stop > 0), stop - 1, stop)
    rows1 = first.offsets[:-1] + stop
    rows2 = second.offsets[:-1] + stop
    gap = np.sum((first.flat_states[rows1] - second.flat_states[rows2]) ** 2, axis=1)
    return sample_moments(gap * np.exp(-2.0 * delta * stop * config.dt))


def barrier_value(domain: Domain, x, k: float, rho: Optional[float] = None):
    """
    w(x) = inf over boundary y of exp(-k rho^2) - exp(-k |x - y~|^2).

    Args:
        domain: Domain D
        x: Point(s) in closure(D), shape (d,) or (n, d)
        k: Barrier exponent (> 0)
        rho: Exterior sphere radius (default: the domain's)

    Returns:
        (w, y_star, y_tilde); scalars/vectors for a single point
    """
    if k <= 0:
        raise SchemaError("barrier exponent k must be positive", "k")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.ndim(x) == 1
    if not np.all(domain.contains(pts, tol=BOUNDARY_TOL)):
        raise DomainMembershipError("barrier is defined on the closed domain only", "x")
    rho = rho or domain.rho
    y_star = domain.closest_boundary_point(pts)
    y_tilde = y_star + rho * domain.outward_normal(y_star)
    r2 = np.sum((pts - y_tilde) ** 2, axis=1)
    w = np.maximum(math.exp(-k * rho * rho) - np.exp(-k * r2), 0.0)
    on_boundary = np.abs(domain.signed_distance(pts)) <= BOUNDARY_TOL
    w = np.where(on_boundary, 0.0, w)
    if single:
        return float(w[0]), y_star[0], y_tilde[0]
    return w, y_star, y_tilde


# Stopping rules for tau ^ Theta

@dataclass(frozen=True)
class StopRule:
    """Deterministic time (kind "time") or first exit of a sub-domain (kind "subdomain")"""
    kind: str
    time: float = 0.0
    subdomain: Optional[Domain] = None

    @classmethod
    def at_time(cls, time: float) -> "StopRule":
        if time < 0:
            raise SchemaError("stopping time must be nonnegative", "theta")
        return cls("time", time=float(time))

    @classmethod
    def subdomain_exit(cls, subdomain: Domain) -> "StopRule":
        return cls("subdomain", subdomain=subdomain)

    def steps(self, bundle: PathBundle) -> np.ndarray:
        """Effective terminal step min(exit step, Theta step) per path"""
        if self.kind == "time":
            theta_step = min(int(round(self.time / bundle.dt)), bundle.n_steps)
            return np.minimum(bundle.last_step, theta_step)
        stop = bundle.last_step.copy()
        pending = np.ones(bundle.n_paths, dtype=bool)
        for n in range(bundle.max_step + 1):
            outside = ~self.subdomain.contains(bundle.state_at(n)) & pending & (n < stop)
            stop[outside] = n
            pending &= ~outside
            if not np.any(pending & (n < stop)):
                break
        return stop

    def to_doc(self) -> Dict[str, Any]:
        if self.kind == "time":
            return {"kind": "time", "time": self.time}
        return {"kind": "subdomain", "domain": self.subdomain.to_doc()}
