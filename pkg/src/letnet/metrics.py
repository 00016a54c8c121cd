"""Reconstruction SNR, best s-term projection and the support recovery metric."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from os import PathLike

import numpy as np

from .errors import DegenerateSignalError, DomainError

SNR_CAP_DB = 300.0
SRM_CAP = 1e12


def recon_snr_db(x_hat: np.ndarray, x: np.ndarray) -> np.ndarray | float:
    """``10 log10(||x||^2 / ||x_hat - x||^2)`` over the last axis.

    Exact recovery is reported as ``SNR_CAP_DB``.

    Raises:
        DegenerateSignalError: if any reference ``x`` is zero.
    """
    x = np.asarray(x, dtype=float)
    err = np.asarray(x_hat, dtype=float) - x
    sig = np.sum(x * x, axis=-1)
    if np.any(sig == 0.0):
        raise DegenerateSignalError("SNR is undefined for a zero reference")
    e = np.sum(err * err, axis=-1)
    with np.errstate(divide="ignore"):
        val = np.where(e > 0.0, 10.0 * np.log10(sig / np.where(e > 0.0, e, 1.0)), SNR_CAP_DB)
    val = np.minimum(val, SNR_CAP_DB)
    return float(val) if val.ndim == 0 else val


def best_s_sparse(x_hat: np.ndarray, s: int) -> np.ndarray:
    """Keep the ``s`` largest-magnitude entries; earlier indices win ties."""
    x_hat = np.asarray(x_hat, dtype=float)
    n = x_hat.shape[-1]
    if not 0 <= s <= n:
        raise DomainError(f"s must lie in [0, {n}], got {s}")
    order = np.argsort(-np.abs(x_hat), axis=-1, kind="stable")[..., :s]
    out = np.zeros_like(x_hat)
    np.put_along_axis(out, order, np.take_along_axis(x_hat, order, axis=-1), axis=-1)
    return out


def srm(x_hat: np.ndarray, s: int) -> float:
    """Energy in the best s-term part over the energy left outside it."""
    if s < 1:
        raise DomainError(f"s must be at least 1, got {s}")
    x_hat = np.asarray(x_hat, dtype=float)
    total = float(x_hat @ x_hat)
    if total == 0.0:
        raise DegenerateSignalError("SRM is undefined for a zero estimate")
    p = best_s_sparse(x_hat, s)
    on = float(p @ p)
    rest = x_hat - p
    # summed directly: total - on cancels when the tail is tiny
    off = float(rest @ rest)
    if off <= 0.0:
        return SRM_CAP
    return min(on / off, SRM_CAP)


def layerwise_curves(
    history: np.ndarray, x: np.ndarray, s: int | np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """SNR and SRM of each iterate in ``history``.

    ``history`` has shape (T, n) for one example or (T, N, n) for a batch, in
    which case both curves are averaged over examples.  ``s`` defaults to the
    support size of each ground-truth signal.
    """
    history = np.asarray(history, dtype=float)
    if history.shape[0] == 0:
        raise DomainError("history is empty")
    x = np.asarray(x, dtype=float)
    hist = history.reshape(history.shape[0], -1, x.shape[-1])
    xs = x.reshape(-1, x.shape[-1])
    if s is None:
        s = np.count_nonzero(xs, axis=-1)
    s = np.broadcast_to(np.asarray(s, dtype=int), (xs.shape[0],))
    snr = np.mean(recon_snr_db(hist, xs[None]), axis=-1)
    srm_vals = np.array(
        [np.mean([srm(h[q], int(s[q])) for q in range(xs.shape[0])]) for h in hist]
    )
    return snr, srm_vals


def write_curves_csv(path: str | PathLike, snr: np.ndarray, srm_vals: np.ndarray, header: dict | None = None) -> None:
    """Rows ``layer, snr_db, srm`` with layers numbered from 1."""
    with open(path, "w", newline="") as fh:
        for key, val in (header or {}).items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(["layer", "snr_db", "srm"])
        for t, (a, b) in enumerate(zip(snr, srm_vals), start=1):
            w.writerow([t, repr(float(a)), repr(float(b))])


@dataclass(frozen=True)
class EvalReport:
    """Per-example SNRs of one method with their summary statistics."""

    method: str
    snr_db: np.ndarray
    lam: float = float("nan")

    @property
    def mean(self) -> float:
        return float(np.mean(self.snr_db))

    @property
    def std(self) -> float:
        return float(np.std(self.snr_db))


def summarize_trials(per_trial_means: np.ndarray) -> tuple[float, float]:
    """Mean and standard deviation across independent trials."""
    v = np.asarray(per_trial_means, dtype=float)
    return float(np.mean(v)), float(np.std(v))
