"""Hessian-free training: damped Newton steps from truncated conjugate gradient.

Each epoch solves ``(H + gamma I) delta = -g`` approximately with CG, keeps
iterate snapshots at exponentially spaced indices, backtracks to the snapshot
with the lowest true cost, line-searches along it and adapts ``gamma`` from
the reduction ratio in Levenberg-Marquardt fashion.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable, Sequence

import numpy as np

from .backprop import batch_gradient, cost
from .errors import AbortEpoch, DomainError, TrainingError
from .hvp import make_hvp
from .nets import NetworkParams
from .sensing import SensingModel, Split

HVP = Callable[[np.ndarray], np.ndarray]
MAX_DAMPING_DOUBLINGS = 200


@dataclass(frozen=True, eq=False)
class Snapshot:
    iteration: int
    delta: np.ndarray
    q: float


@dataclass(frozen=True, eq=False)
class CGResult:
    delta: np.ndarray
    snapshots: list[Snapshot]
    iterations: int
    negative_curvature: bool = False


def snapshot_indices(cap: int) -> set[int]:
    """``ceil(1.3^j)`` for j = 0, 1, ... up to ``cap``."""
    out, j = set(), 0
    while True:
        i = math.ceil(1.3**j)
        if i > cap:
            return out
        out.add(i)
        j += 1


def cg_window(i2: int) -> int:
    """Look-back distance ``max(10, 0.1 i2)`` of the relative-improvement test."""
    return max(10, int(0.1 * i2))


def cg_solve(
    hvp_fn: HVP,
    g: np.ndarray,
    gamma: float,
    delta0: np.ndarray | None = None,
    eps: float = 5e-4,
    cap: int = 250,
) -> CGResult:
    """Minimize ``Q(d) = 0.5 d'(H + gamma I)d + g'd`` by linear CG.

    Stops on relative improvement
    ``|Q_i - Q_{i-k}| < k eps |Q_i|`` with ``k = max(10, 0.1 i)``, on the
    iteration cap, on a vanishing residual or when a search direction has
    non-positive curvature.

    Raises:
        AbortEpoch: if the products or the model value stop being finite.
    """
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise AbortEpoch("non-finite gradient")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")

    def A(v: np.ndarray) -> np.ndarray:
        return hvp_fn(v) + gamma * v

    want = snapshot_indices(cap)
    delta = np.zeros_like(g) if delta0 is None else np.array(delta0, dtype=float)
    r = -g - A(delta) if np.any(delta) else -g.copy()
    q_hist = [0.5 * float(delta @ (g - r))]
    snaps: list[Snapshot] = []
    p = r.copy()
    rr = float(r @ r)
    tol = 1e-12 * float(np.linalg.norm(g))
    i = 0
    neg = False
    while i < cap and math.sqrt(rr) > tol:
        Ap = A(p)
        pAp = float(p @ Ap)
        if not math.isfinite(pAp):
            raise AbortEpoch("curvature product is not finite")
        if pAp <= 0.0:
            neg = True
            break
        i += 1
        alpha = rr / pAp
        delta = delta + alpha * p
        r = r - alpha * Ap
        q = 0.5 * float(delta @ (g - r))
        if not math.isfinite(q):
            raise AbortEpoch("quadratic model is not finite")
        q_hist.append(q)
        if i in want:
            snaps.append(Snapshot(i, delta.copy(), q))
        k = cg_window(i)
        if i > k and q < 0.0 and abs(q - q_hist[i - k]) < k * eps * abs(q):
            break
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    if not snaps or snaps[-1].iteration != i:
        snaps.append(Snapshot(i, delta.copy(), q_hist[-1]))
    return CGResult(delta, snaps, i, neg)


def cg_backtrack(snapshots: Sequence[Snapshot], J_eval_fn: Callable[[np.ndarray], float]) -> tuple[np.ndarray, float]:
    """Snapshot with the smallest true cost, scanning from the latest.

    Returns the chosen direction and its cost.  Non-finite costs never win.
    """
    if not snapshots:
        raise DomainError("need at least one snapshot")
    best, best_J = snapshots[-1].delta, math.inf
    for snap in reversed(snapshots):
        J = J_eval_fn(snap.delta)
        if math.isfinite(J) and J < best_J:
            best, best_J = snap.delta, J
    return best, best_J


def lm_update(gamma: float, r: float, literal: bool = False) -> float:
    """Levenberg-Marquardt damping update.

    A poor model fit (``r < 1/4``) raises ``gamma`` by 3/2 and a good one
    (``r > 3/4``) lowers it by 2/3.  ``literal=True`` swaps the two factors.
    """
    if not math.isfinite(r):
        return 1.5 * gamma if not literal else gamma / 1.5
    up, down = (2.0 / 3.0, 1.5) if literal else (1.5, 2.0 / 3.0)
    if r < 0.25:
        return gamma * up
    if r > 0.75:
        return gamma * down
    return gamma


def line_search(
    J_fn: Callable[[np.ndarray], float],
    c: np.ndarray,
    delta: np.ndarray,
    g: np.ndarray,
    J0: float | None = None,
    armijo: float = 1e-2,
    max_halvings: int = 20,
) -> tuple[float, float]:
    """Backtracking Armijo search along ``delta`` from step 1.

    Returns ``(step, J(c + step delta))``; step 0 means rejection and then the
    cost returned is ``J(c)``.
    """
    J0 = J_fn(c) if J0 is None else J0
    slope = float(np.dot(g, delta))
    if not slope < 0.0:
        return 0.0, J0
    step = 1.0
    for _ in range(max_halvings + 1):
        J = J_fn(c + step * delta)
        if math.isfinite(J) and J <= J0 + armijo * step * slope and J < J0:
            return step, J
        step *= 0.5
    return 0.0, J0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    J_train: float
    J_val: float
    gamma: float
    cg_iters: int
    step: float
    r: float


@dataclass(eq=False)
class HfoState:
    c: np.ndarray
    gamma: float
    epoch: int = 0
    J_train: float = math.nan
    J_val: float = math.nan
    last_delta: np.ndarray | None = None
    eps_cg: float = 5e-4
    cg_iter_cap: int = 250


@dataclass(eq=False)
class TrainResult:
    params: NetworkParams
    history: list[EpochRecord] = field(default_factory=list)
    state: HfoState | None = None


def _epoch(
    params: NetworkParams,
    model: SensingModel,
    train_split: Split,
    state: HfoState,
    literal_lm: bool,
) -> tuple[NetworkParams, EpochRecord]:
    bundle, J0 = batch_gradient(params, model, train_split)
    g = bundle.grad_c
    if not (math.isfinite(J0) and np.all(np.isfinite(g))):
        raise AbortEpoch("non-finite cost or gradient")
    Hv = make_hvp(params, model, train_split, bundle)
    warm = state.last_delta
    for _ in range(MAX_DAMPING_DOUBLINGS):
        res = cg_solve(Hv, g, state.gamma, warm, state.eps_cg, state.cg_iter_cap)
        if res.iterations > 0 or not res.negative_curvature:
            break
        # no CG step was possible: H + gamma I is indefinite along the first direction
        state.gamma *= 2.0
        warm = None
    else:
        raise AbortEpoch("damping could not make the curvature positive")
    c = params.coeffs

    def J_at(v: np.ndarray) -> float:
        return cost(params.with_coeffs(v), model, train_split.b, train_split.x)

    delta, J_new = cg_backtrack(res.snapshots, lambda d: J_at(c + d))
    model_change = float(g @ delta) + 0.5 * float(delta @ Hv(delta))
    if not math.isfinite(model_change):
        raise AbortEpoch("quadratic model is not finite at the chosen step")
    r = (J_new - J0) / model_change if model_change < 0.0 else -math.inf
    step, J_acc = line_search(J_at, c, delta, g, J0)
    state.gamma = lm_update(state.gamma, r, literal_lm)
    state.last_delta = delta
    new_params = params.with_coeffs(c + step * delta) if step > 0 else params
    rec = EpochRecord(state.epoch + 1, J_acc, math.nan, state.gamma, res.iterations, step, r)
    return new_params, rec


def train(
    params0: NetworkParams,
    model: SensingModel,
    train_split: Split,
    val_split: Split | None = None,
    epochs: int = 60,
    eps_cg: float = 5e-4,
    gamma0: float = 1.0,
    cg_cap: int = 250,
    literal_lm: bool = False,
    callback: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Hessian-free training for a fixed epoch budget.

    The history starts with an epoch-0 record of the initial costs.  The
    validation cost is tracked for monitoring only.

    Raises:
        TrainingError: after two consecutive aborted attempts at one epoch.
    """
    if epochs < 0:
        raise DomainError("epochs must be non-negative")
    if not gamma0 > 0:
        raise DomainError("gamma0 must be positive")

    def J_val(p: NetworkParams) -> float:
        if val_split is None or len(val_split) == 0:
            return math.nan
        return cost(p, model, val_split.b, val_split.x)

    params = params0
    state = HfoState(params.coeffs, gamma0, eps_cg=eps_cg, cg_iter_cap=cg_cap)
    state.J_train = cost(params, model, train_split.b, train_split.x)
    state.J_val = J_val(params)
    history = [EpochRecord(0, state.J_train, state.J_val, gamma0, 0, 0.0, math.nan)]
    if callback:
        callback(history[0])
    for _ in range(epochs):
        for attempt in range(2):
            try:
                new_params, rec = _epoch(params, model, train_split, state, literal_lm)
                break
            except AbortEpoch as exc:
                if attempt == 1:
                    raise TrainingError(f"epoch {state.epoch + 1} aborted twice: {exc}") from exc
                state.gamma *= 2.0
                state.last_delta = None
        params = new_params
        state.epoch += 1
        state.c = params.coeffs
        state.J_train = rec.J_train
        state.J_val = J_val(params)
        rec = EpochRecord(rec.epoch, rec.J_train, state.J_val, rec.gamma, rec.cg_iters, rec.step, rec.r)
        history.append(rec)
        if callback:
            callback(rec)
    return TrainResult(params, history, state)


LOG_COLUMNS = ("epoch", "J_train", "J_val", "gamma", "cg_iters", "step", "r")


def write_training_log(path: str | PathLike, history: Sequence[EpochRecord], header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for key, val in (header or {}).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for rec in history:
            w.writerow([rec.epoch, repr(rec.J_train), repr(rec.J_val), repr(rec.gamma), rec.cg_iters, repr(rec.step), repr(rec.r)])
