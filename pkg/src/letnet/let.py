"""Linear expansion of thresholds (LET) built from derivative-of-Gaussian bases.

The activation is ``psi(u) = sum_k c_k phi_k(u)`` with
``phi_k(u) = u exp(-(k-1) u^2 / (2 tau^2))``.  Besides evaluation this module
fits ``c`` to the soft threshold, inverts ``psi`` on its extremal branch and
integrates that inverse into the regularizer whose proximal map ``psi`` is.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from os import PathLike
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, FitFailureError, NotAttainedError, ShapeError


def soft_threshold(nu: float, v: np.ndarray) -> np.ndarray:
    """Elementwise ``sgn(v) max(|v| - nu, 0)``."""
    if nu < 0:
        raise DomainError(f"threshold must be non-negative, got {nu}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - nu, 0.0)


def _exponents(u: np.ndarray, K: int, tau: float) -> tuple[np.ndarray, np.ndarray]:
    a = (np.arange(K) / (2.0 * tau * tau))
    u2 = (u * u)[..., None]
    return a, np.exp(-a * u2)


def basis_stack(u: np.ndarray, K: int, tau: float, order: int = 0) -> np.ndarray:
    """All K bases (or their ``order``-th derivative) at ``u``; shape (..., K)."""
    u = np.asarray(u, dtype=float)
    a, E = _exponents(u, K, tau)
    return _combine(u, a, E, order)


def _combine(u: np.ndarray, a: np.ndarray, E: np.ndarray, order: int) -> np.ndarray:
    uu = u[..., None]
    if order == 0:
        return uu * E
    if order == 1:
        return E * (1.0 - 2.0 * a * uu * uu)
    if order == 2:
        return E * uu * (4.0 * a * a * uu * uu - 6.0 * a)
    raise DomainError(f"derivative order must be 0, 1 or 2, got {order}")


def basis_all(u: np.ndarray, K: int, tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bases with first and second derivatives, sharing one exponential."""
    u = np.asarray(u, dtype=float)
    a, E = _exponents(u, K, tau)
    return _combine(u, a, E, 0), _combine(u, a, E, 1), _combine(u, a, E, 2)


def basis_eval(k: int, tau: float, u: np.ndarray | float, order: int = 0) -> np.ndarray | float:
    """Single basis ``phi_k`` (1-based k) or one of its first two derivatives."""
    if k < 1:
        raise DomainError(f"basis index is 1-based, got {k}")
    u = np.asarray(u, dtype=float)
    a = (k - 1) / (2.0 * tau * tau)
    E = np.exp(-a * u * u)
    if order == 0:
        out = u * E
    elif order == 1:
        out = E * (1.0 - 2.0 * a * u * u)
    elif order == 2:
        out = E * u * (4.0 * a * a * u * u - 6.0 * a)
    else:
        raise DomainError(f"derivative order must be 0, 1 or 2, got {order}")
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class LetActivation:
    """LET activation with coefficients ``c`` (length K) and width ``tau``.

    ``fit_error`` is the sup-norm error on the fit grid when the activation
    came from :func:`fit_to_soft_threshold`, otherwise ``None``.
    """

    c: np.ndarray
    tau: float
    fit_error: float | None = None

    def __post_init__(self) -> None:
        c = np.array(self.c, dtype=float).reshape(-1)
        if c.size < 1:
            raise ShapeError("need at least one coefficient")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def K(self) -> int:
        return self.c.size

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return psi(self, u)


def psi(act: LetActivation, u: np.ndarray) -> np.ndarray:
    return basis_stack(u, act.K, act.tau, 0) @ act.c


def psi_prime(act: LetActivation, u: np.ndarray) -> np.ndarray:
    return basis_stack(u, act.K, act.tau, 1) @ act.c


def psi_double_prime(act: LetActivation, u: np.ndarray) -> np.ndarray:
    return basis_stack(u, act.K, act.tau, 2) @ act.c


def default_fit_grid(tau: float) -> np.ndarray:
    return np.linspace(-20.0 * tau, 20.0 * tau, 2001)


def fit_to_soft_threshold(
    K: int, nu: float, grid: np.ndarray | None = None, ridge: float = 1e-12
) -> LetActivation:
    """Least-squares fit of a width ``nu/3`` LET to the soft threshold ``T_nu``.

    The normal equations carry a ridge of ``ridge * trace(G) / K`` so the
    regularization scales with the Gram matrix.

    Raises:
        FitFailureError: if the regularized system is still singular.
    """
    if K < 2:
        raise DomainError(f"K must be at least 2, got {K}")
    if not nu > 0:
        raise DomainError(f"nu must be positive, got {nu}")
    tau = nu / 3.0
    u = default_fit_grid(tau) if grid is None else np.asarray(grid, dtype=float)
    P = basis_stack(u, K, tau)
    target = soft_threshold(nu, u)
    G = P.T @ P
    G += ridge * np.trace(G) / K * np.eye(K)
    try:
        c = np.linalg.solve(G, P.T @ target)
    except np.linalg.LinAlgError as exc:
        raise FitFailureError(str(exc)) from exc
    if not np.all(np.isfinite(c)) or np.linalg.cond(G) * np.finfo(float).eps >= 1.0:
        raise FitFailureError("normal equations are numerically singular")
    return LetActivation(c, tau, float(np.max(np.abs(P @ c - target))))


def psi_inverse(
    act: LetActivation, q: np.ndarray | float, n_scan: int = 4001, tol: float = 1e-12
) -> np.ndarray | float:
    """Extremal-branch inverse: largest root of ``psi(r) = q`` for ``q > 0``,
    smallest for ``q < 0`` and 0 at ``q = 0``.

    Roots are bracketed by a sign-change scan of ``[-S, S]`` with
    ``S = 20 tau + |q| / max(|c_1|, 1e-12)`` and refined by bisection.

    Raises:
        NotAttainedError: if ``psi - q`` has no sign change on that window.
    """
    qa = np.asarray(q, dtype=float)
    flat = qa.reshape(-1)
    out = np.zeros_like(flat)
    nz = np.flatnonzero(flat)
    span = np.linspace(-1.0, 1.0, n_scan)
    c1 = max(abs(act.c[0]), 1e-12)
    for start in range(0, nz.size, 256):
        idx = nz[start : start + 256]
        qs = flat[idx]
        S = 20.0 * act.tau + np.abs(qs) / c1
        r = S[:, None] * span[None, :]
        f = psi(act, r) - qs[:, None]
        change = f[:, :-1] * f[:, 1:] <= 0.0
        has = change.any(axis=1)
        if not has.all():
            bad = qs[~has][0]
            raise NotAttainedError(f"q = {bad} is outside the range of psi")
        last = change.shape[1] - 1 - np.argmax(change[:, ::-1], axis=1)
        first = np.argmax(change, axis=1)
        j = np.where(qs > 0, last, first)
        rows = np.arange(qs.size)
        lo, hi = r[rows, j], r[rows, j + 1]
        flo = f[rows, j]
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            if np.all((mid <= lo) | (mid >= hi)):
                break
            fm = psi(act, mid) - qs
            left = flo * fm <= 0.0
            hi = np.where(left, mid, hi)
            lo = np.where(left, lo, mid)
            flo = np.where(left, flo, fm)
        out[idx] = np.where(flo == 0.0, lo, 0.5 * (lo + hi))
    out = out.reshape(qa.shape)
    return float(out) if out.ndim == 0 else out


def soft_threshold_inverse(nu: float) -> Callable[[np.ndarray], np.ndarray]:
    """Extremal inverse of ``T_nu``: ``q + nu sgn(q)`` (0 at the origin)."""
    return lambda q: np.asarray(q, dtype=float) + nu * np.sign(q)


@dataclass(frozen=True, eq=False)
class RegularizerProfile:
    nu: float
    grid: np.ndarray
    g_values: np.ndarray
    psi_inv_values: np.ndarray


def default_regularizer_grid() -> np.ndarray:
    return np.linspace(-3.0, 3.0, 2001)


def regularizer_from_inverse(
    inverse: Callable[[np.ndarray], np.ndarray], nu: float, grid: np.ndarray
) -> RegularizerProfile:
    """Trapezoidal integral of ``(inverse(q) - q) / nu`` from 0, mirrored.

    The integrand at ``q = 0`` is taken as its right-hand limit, which keeps
    a jump of the inverse at the origin (as for the soft threshold) out of
    the first panel.
    """
    if not nu > 0:
        raise DomainError(f"nu must be positive, got {nu}")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be strictly increasing")
    if not np.allclose(grid, -grid[::-1], rtol=0.0, atol=1e-12 * max(1.0, np.abs(grid).max())):
        raise DomainError("grid must be symmetric about 0")
    # work on the non-negative half and mirror by index, so a grid that is
    # symmetric only up to rounding still yields an exactly even g
    n = grid.size
    half = grid[n // 2 :]
    half = np.where(np.abs(half) < 1e-15 * max(1.0, np.abs(grid).max()), 0.0, half)
    pos = half if half[0] == 0.0 else np.concatenate([[0.0], half])
    inv = np.asarray(inverse(pos), dtype=float)
    integrand = inv - pos
    if pos.size > 1:
        h = 1e-9 * pos[1]
        integrand[0] = float(np.asarray(inverse(np.array([h])))[0]) - h
    g_pos = cumulative_trapezoid(integrand, pos, initial=0.0) / nu
    skip = pos.size - half.size
    g_half, inv_half = g_pos[skip:], inv[skip:]
    mirror = n - 1 - np.arange(n // 2)
    g = np.concatenate([g_half[mirror - n // 2], g_half])
    inv_all = np.concatenate([-inv_half[mirror - n // 2], inv_half])
    return RegularizerProfile(float(nu), grid, g, inv_all)


def induced_regularizer(
    act: LetActivation, nu: float, grid: np.ndarray | None = None
) -> RegularizerProfile:
    """Regularizer ``g`` whose proximal operator (at weight ``nu``) is ``psi``."""
    grid = default_regularizer_grid() if grid is None else grid
    return regularizer_from_inverse(lambda q: psi_inverse(act, q), nu, grid)


def export_activation_csv(
    path: str | PathLike, act: LetActivation, nu: float, grid: np.ndarray | None = None
) -> RegularizerProfile:
    """Write ``u, psi, psi_prime, g`` rows on ``grid`` and return the profile."""
    prof = induced_regularizer(act, nu, grid)
    u = prof.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "psi", "psi_prime", "g"])
        for row in zip(u, psi(act, u), psi_prime(act, u), prof.g_values):
            w.writerow([repr(float(v)) for v in row])
    return prof
