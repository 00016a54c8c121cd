"""Reference ISTA and FISTA with soft thresholding, plus lambda selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .let import soft_threshold
from .metrics import recon_snr_db
from .sensing import Measurement, SensingModel, Split

ISTA_LAMBDA_GRID = np.logspace(-5.0, -1.0, 10)
LETNET_LAMBDA_GRID = np.logspace(math.log10(0.05), math.log10(0.5), 5)


@dataclass(frozen=True)
class SolverConfig:
    lam: float
    max_iters: int = 100

    def __post_init__(self) -> None:
        if self.lam < 0 or not math.isfinite(self.lam):
            raise DomainError(f"lambda must be finite and non-negative, got {self.lam}")
        if self.max_iters < 0:
            raise DomainError("max_iters must be non-negative")

    def nu(self, model: SensingModel) -> float:
        return self.lam * model.eta


def _bias(model: SensingModel, meas: Measurement | np.ndarray) -> np.ndarray:
    return meas.b if isinstance(meas, Measurement) else np.asarray(meas, dtype=float)


def ista(
    model: SensingModel,
    meas: Measurement | np.ndarray,
    cfg: SolverConfig,
    keep_history: bool = True,
) -> np.ndarray:
    """Run ``x <- T_nu(W x + b)`` from ``x = 0``.

    ``meas`` may be a :class:`Measurement` or a bias array of shape (..., n).
    Returns all iterates stacked along axis 0, shape (T+1, ..., n), or only
    the last one when ``keep_history`` is false.
    """
    b = _bias(model, meas)
    nu = cfg.nu(model)
    x = np.zeros_like(b)
    hist = [x]
    for _ in range(cfg.max_iters):
        x = soft_threshold(nu, x @ model.W.T + b)
        if keep_history:
            hist.append(x)
    return np.stack(hist) if keep_history else x


def fista_alphas(T: int) -> np.ndarray:
    """``alpha_1 .. alpha_T`` of the FISTA recurrence (index 0 holds alpha_1)."""
    a = np.empty(max(T, 0))
    if T > 0:
        a[0] = 1.0
    for t in range(1, T):
        a[t] = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * a[t - 1] ** 2))
    return a


def fista(
    model: SensingModel,
    meas: Measurement | np.ndarray,
    cfg: SolverConfig,
    keep_history: bool = True,
    momentum: np.ndarray | None = None,
) -> np.ndarray:
    """FISTA from ``x^0 = x^{-1} = 0``.

    Step t forms ``z = x^{t-1} + m_t (x^{t-1} - x^{t-2})`` with
    ``m_t = (alpha_{t-1} - 1) / alpha_t`` (``m_1 = 0``).  Passing
    ``momentum`` (length ``max_iters``) overrides the schedule.
    """
    b = _bias(model, meas)
    nu = cfg.nu(model)
    T = cfg.max_iters
    if momentum is None:
        a = fista_alphas(T + 1)
        momentum = np.zeros(T)
        if T > 1:
            momentum[1:] = (a[:T - 1] - 1.0) / a[1:T]
    elif len(momentum) != T:
        raise DomainError("momentum schedule must have one entry per iteration")
    x_prev = np.zeros_like(b)
    x = x_prev
    hist = [x]
    for t in range(T):
        z = x + momentum[t] * (x - x_prev)
        x_prev, x = x, soft_threshold(nu, z @ model.W.T + b)
        if keep_history:
            hist.append(x)
    return np.stack(hist) if keep_history else x


def lasso_objective(model: SensingModel, y: np.ndarray, x: np.ndarray, lam: float) -> np.ndarray:
    """``0.5 ||y - A x||^2 + lam ||x||_1`` over the last axis."""
    res = np.asarray(y) - np.asarray(x) @ model.A.T
    return 0.5 * np.sum(res * res, axis=-1) + lam * np.sum(np.abs(x), axis=-1)


def select_best(grid: Sequence[float], score: Callable[[float], float]) -> tuple[float, list[float]]:
    """Argmax of ``score`` over ``grid``; ties go to the smaller candidate.

    Returns the winner and the scores in grid order.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ConfigError("candidate grid is empty")
    scores = [float(score(g)) for g in grid]
    order = sorted(range(len(grid)), key=lambda i: (-scores[i] if math.isfinite(scores[i]) else math.inf, grid[i]))
    return grid[order[0]], scores


Solver = Callable[[SensingModel, np.ndarray, SolverConfig, bool], np.ndarray]


def cross_validate_lambda(
    model: SensingModel,
    train_pairs: Split,
    candidate_grid: Sequence[float] = ISTA_LAMBDA_GRID,
    solver: Solver = ista,
    max_iters: int = 100,
) -> float:
    """Lambda maximizing the mean reconstruction SNR of ``solver`` on a split."""
    if len(train_pairs) == 0:
        raise ConfigError("cannot cross-validate on an empty split")

    def score(lam: float) -> float:
        xh = solver(model, train_pairs.b, SolverConfig(lam, max_iters), False)
        return float(np.mean(recon_snr_db(xh, train_pairs.x)))

    return select_best(candidate_grid, score)[0]
