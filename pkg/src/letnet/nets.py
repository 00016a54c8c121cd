"""Unrolled ISTA/FISTA networks with LET activations.

Three architectures share one forward pass:

* ``letnet-fixed``: one coefficient vector ``c`` reused in every layer.
* ``letnet-var``: a coefficient vector ``c^t`` per layer.
* ``fletnet``: per-layer ``c^t`` plus FISTA momentum
  ``z^t = (1 + beta_t) x^{t-1} - beta_t x^{t-2}``.

The weights ``W`` and bias ``b`` are the ISTA ones and are never learned.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable

import numpy as np

from .errors import DatasetCorruptError, DatasetFormatError, DomainError, ShapeError
from .let import LetActivation, basis_all, basis_stack, fit_to_soft_threshold
from .sensing import Measurement, SensingModel


class Arch(enum.Enum):
    FIXED = "letnet-fixed"
    VAR = "letnet-var"
    FLET = "fletnet"


DEFAULT_LAYERS = {Arch.FIXED: 100, Arch.VAR: 100, Arch.FLET: 50}
DEFAULT_K = 5


def make_beta_schedule(L: int) -> np.ndarray:
    """Momentum weights ``beta_1 .. beta_L`` (index 0 holds beta_1).

    ``alpha_1 = 1``, ``alpha_{t+1} = (1 + sqrt(1 + 4 alpha_t^2)) / 2`` and
    ``beta_t = (alpha_{t-1} - 1) / alpha_t`` for ``t >= 2`` with ``beta_1 = 0``.
    """
    if L < 1:
        raise DomainError(f"L must be at least 1, got {L}")
    beta = np.zeros(L)
    alpha_prev = 1.0
    for t in range(1, L):
        alpha = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * alpha_prev * alpha_prev))
        beta[t] = (alpha_prev - 1.0) / alpha
        alpha_prev = alpha
    return beta


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Architecture tag with stacked LET coefficients.

    ``coeffs`` has length K for the fixed network and ``K * L`` (layer-major)
    otherwise.  ``beta`` holds ``beta_1 .. beta_L`` and is zero unless the
    architecture is ``fletnet``.
    """

    arch: Arch
    L: int
    K: int
    tau: float
    coeffs: np.ndarray
    beta: np.ndarray | None = None

    def __post_init__(self) -> None:
        arch = Arch(self.arch)
        if self.L < 1 or self.K < 1:
            raise DomainError("L and K must be positive")
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        want = self.K if arch is Arch.FIXED else self.K * self.L
        if coeffs.size != want:
            raise ShapeError(f"{arch.value} with L={self.L}, K={self.K} needs {want} coefficients, got {coeffs.size}")
        if self.beta is None:
            beta = make_beta_schedule(self.L) if arch is Arch.FLET else np.zeros(self.L)
        else:
            beta = np.array(self.beta, dtype=float).reshape(-1)
        if beta.size != self.L:
            raise ShapeError("beta needs one entry per layer")
        if arch is not Arch.FLET and np.any(beta != 0.0):
            raise DomainError("only fletnet carries momentum")
        coeffs.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "beta", beta)

    @property
    def n_params(self) -> int:
        return self.coeffs.size

    def layer_coeffs(self) -> np.ndarray:
        """Coefficients per layer, shape (L, K); a broadcast view when tied."""
        if self.arch is Arch.FIXED:
            return np.broadcast_to(self.coeffs, (self.L, self.K))
        return self.coeffs.reshape(self.L, self.K)

    def activation(self, t: int) -> LetActivation:
        """Activation of layer ``t`` (1-based)."""
        if not 1 <= t <= self.L:
            raise DomainError(f"layer {t} outside 1..{self.L}")
        return LetActivation(self.layer_coeffs()[t - 1], self.tau)

    def with_coeffs(self, coeffs: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.arch, self.L, self.K, self.tau, coeffs, self.beta)

    def with_beta(self, beta: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.arch, self.L, self.K, self.tau, self.coeffs, beta)


def init_params(arch: Arch | str, L: int, K: int, nu: float) -> NetworkParams:
    """Every layer starts from the least-squares fit to ``T_nu``."""
    arch = Arch(arch)
    act = fit_to_soft_threshold(K, nu)
    coeffs = act.c.copy() if arch is Arch.FIXED else np.tile(act.c, L)
    return NetworkParams(arch, L, K, act.tau, coeffs)


@dataclass(eq=False)
class ForwardTrace:
    """Stacked forward quantities.

    ``x`` has shape (L+1, ..., n) and holds ``x^0 .. x^L``; ``x_tilde`` and
    ``z`` have shape (L, ..., n) and hold layers 1..L.  ``z`` is None unless
    momentum is used.
    """

    x: np.ndarray
    x_tilde: np.ndarray | None
    z: np.ndarray | None = None
    _bases: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def output(self) -> np.ndarray:
        return self.x[-1]

    @property
    def L(self) -> int:
        return self.x.shape[0] - 1

    def bases(self, params: NetworkParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``phi_k``, ``phi_k'`` and ``phi_k''`` at every ``x_tilde``; each (L, ..., n, K)."""
        if self.x_tilde is None:
            raise DomainError("trace was recorded without pre-activations")
        if self._bases is None or self._bases[0].shape[-1] != params.K:
            self._bases = basis_all(self.x_tilde, params.K, params.tau)
        return self._bases


Override = Callable[[int, np.ndarray], np.ndarray]


def forward(
    params: NetworkParams,
    model: SensingModel,
    meas: Measurement | np.ndarray,
    activation: Override | None = None,
    keep_trace: bool = True,
) -> ForwardTrace:
    """Run the network on a measurement or a bias array of shape (..., n).

    Args:
        activation: optional ``f(t, u)`` used in place of the LET of layer t,
            e.g. a soft threshold to recover ISTA/FISTA.
        keep_trace: with False only ``x^L`` is kept (``x`` then has length 1).
    """
    b = meas.b if isinstance(meas, Measurement) else np.asarray(meas, dtype=float)
    if b.shape[-1] != model.n:
        raise ShapeError(f"bias has length {b.shape[-1]}, model expects {model.n}")
    C = params.layer_coeffs()
    beta = params.beta
    momentum = params.arch is Arch.FLET
    Wt = model.W.T
    x_prev = np.zeros_like(b)
    x = x_prev
    xs, xts, zs = [x], [], []
    for t in range(1, params.L + 1):
        if momentum:
            z = x + beta[t - 1] * (x - x_prev)
        else:
            z = x
        xt = z @ Wt + b
        if activation is None:
            x_new = basis_stack(xt, params.K, params.tau) @ C[t - 1]
        else:
            x_new = np.asarray(activation(t, xt), dtype=float)
        x_prev, x = x, x_new
        if keep_trace:
            xs.append(x)
            xts.append(xt)
            if momentum:
                zs.append(z)
    if not keep_trace:
        return ForwardTrace(x[None], None, None)
    return ForwardTrace(np.stack(xs), np.stack(xts), np.stack(zs) if momentum else None)


def predict(params: NetworkParams, model: SensingModel, meas: Measurement | np.ndarray) -> np.ndarray:
    """Final output ``x^L`` without storing the trace."""
    return forward(params, model, meas, keep_trace=False).output


CHECKPOINT_MAGIC = b"LETC"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIBQQQQdd")
_ARCH_CODES = {Arch.FIXED: 0, Arch.VAR: 1, Arch.FLET: 2}


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Network parameters with the signal length and regularization weight
    they were trained for (``n = 0`` means unknown)."""

    params: NetworkParams
    lam: float = math.nan
    n: int = 0


def save_checkpoint(path: str | PathLike, params: NetworkParams, lam: float = math.nan, n: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                _ARCH_CODES[params.arch],
                params.L,
                params.K,
                params.n_params,
                n,
                params.tau,
                lam,
            )
        )
        fh.write(params.coeffs.astype("<f8").tobytes())
        fh.write(params.beta.astype("<f8").tobytes())


def load_checkpoint(path: str | PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DatasetFormatError(f"bad checkpoint magic {raw[:4]!r}")
    if len(raw) < _CKPT_HEADER.size:
        raise DatasetCorruptError("truncated checkpoint header")
    _, version, code, L, K, P, n, tau, lam = _CKPT_HEADER.unpack_from(raw)
    if version != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}")
    if len(raw) != _CKPT_HEADER.size + 8 * (P + L):
        raise DatasetCorruptError("checkpoint payload length does not match header")
    arch = {v: k for k, v in _ARCH_CODES.items()}.get(code)
    if arch is None:
        raise DatasetFormatError(f"unknown architecture code {code}")
    off = _CKPT_HEADER.size
    coeffs = np.frombuffer(raw, "<f8", P, off).astype(float)
    beta = np.frombuffer(raw, "<f8", L, off + 8 * P).astype(float)
    return Checkpoint(NetworkParams(arch, L, K, tau, coeffs, beta), lam, int(n))
