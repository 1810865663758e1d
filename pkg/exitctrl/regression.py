"""Least-squares conditional expectations for the backward induction"""
import logging
from typing import Optional

import numpy as np
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.preprocessing import PolynomialFeatures

from exitctrl.domain import Domain
from exitctrl.exceptions import RegressionSingularError
from exitctrl.schemas import RegressionConfig

logger = logging.getLogger(__name__)

# A fit needs this many samples per basis function, otherwise the constant basis is used
MIN_SAMPLES_PER_FEATURE = 4
DEGENERATE_SPREAD = 1e-12


def _mean_fit(targets: np.ndarray) -> np.ndarray:
    return np.broadcast_to(targets.mean(axis=0), targets.shape).copy()


def basis_size(config: RegressionConfig, d: int) -> int:
    """Number of basis functions, constant included"""
    if config.basis == "piecewise":
        return config.cells ** d
    # C(d + p, p) monomials of total degree <= p
    size = 1
    for i in range(1, config.degree + 1):
        size = size * (d + i) // i
    return size


def _cell_index(states: np.ndarray, domain: Domain, cells: int) -> np.ndarray:
    lo, hi = domain.bounding_box()
    scaled = (states - lo) / (hi - lo)
    axis_idx = np.clip(np.floor(scaled * cells).astype(np.int64), 0, cells - 1)
    flat = np.zeros(states.shape[0], dtype=np.int64)
    for j in range(states.shape[1]):
        flat = flat * cells + axis_idx[:, j]
    return flat


def _piecewise_fit(states: np.ndarray, targets: np.ndarray, domain: Domain, cells: int) -> np.ndarray:
    idx = _cell_index(states, domain, cells)
    _, inverse, counts = np.unique(idx, return_inverse=True, return_counts=True)
    out = np.empty_like(targets)
    for col in range(targets.shape[1]):
        sums = np.bincount(inverse, weights=targets[:, col], minlength=counts.size)
        out[:, col] = (sums / counts)[inverse]
    return out


def _polynomial_fit(states: np.ndarray, targets: np.ndarray, config: RegressionConfig, step: Optional[int]) -> np.ndarray:
    spread = states.std(axis=0)
    scaled = (states - states.mean(axis=0)) / spread
    features = PolynomialFeatures(config.degree, include_bias=False).fit_transform(scaled)
    if config.ridge > 0:
        model = Ridge(alpha=config.ridge)
    else:
        model = LinearRegression()
    model.fit(features, targets)
    if config.ridge == 0 and model.rank_ < features.shape[1]:
        raise RegressionSingularError(-1 if step is None else step, int(model.rank_) + 1, features.shape[1] + 1)
    return model.predict(features).reshape(targets.shape)


def regress(states: np.ndarray, targets: np.ndarray, config: RegressionConfig, domain: Domain,
            step: Optional[int] = None) -> np.ndarray:
    """
    Fitted conditional expectation of targets given states, at the sample states.

    The intercept is never penalised, so fitted values average to the
    sample mean of the targets for every basis.

    Args:
        states: Regressors (n, d)
        targets: Responses (n,) or (n, q)
        config: Basis and regularisation
        domain: Domain whose bounding box defines the piecewise partition
        step: Grid step, reported by RegressionSingularError

    Returns:
        Fitted values with the shape of targets
    """
    targets = np.asarray(targets, dtype=float)
    vector = targets.ndim == 1
    t2 = targets.reshape(targets.shape[0], -1)
    n = states.shape[0]
    if n == 0:
        return targets.copy()

    size = basis_size(config, states.shape[1])
    degenerate = n < MIN_SAMPLES_PER_FEATURE * size or np.any(states.std(axis=0) <= DEGENERATE_SPREAD)
    if config.basis == "polynomial" and config.degree == 0:
        degenerate = True
    if degenerate:
        fitted = _mean_fit(t2)
    elif config.basis == "piecewise":
        fitted = _piecewise_fit(states, t2, domain, config.cells)
    else:
        fitted = _polynomial_fit(states, t2, config, step)
    return fitted[:, 0] if vector else fitted
