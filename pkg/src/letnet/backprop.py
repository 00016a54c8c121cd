"""Exact gradients of the training cost with respect to the LET coefficients.

The cost is ``J = 0.5 sum_q ||x^L_q - x_q||^2``.  Each architecture has its
own hand-written backward recursion; batches (leading axes on the trace) are
summed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConsistencyError
from .nets import Arch, ForwardTrace, NetworkParams, forward
from .sensing import SensingModel, SparseSignal, Split


@dataclass(eq=False)
class GradientBundle:
    """Gradient with the backward workspaces kept for curvature passes.

    ``grad_x`` has shape (L+1, ..., n) indexed by layer; ``grad_x_tilde`` and
    ``grad_z`` have shape (L, ..., n) for layers 1..L.
    """

    grad_c: np.ndarray
    grad_x: np.ndarray
    grad_x_tilde: np.ndarray
    grad_z: np.ndarray | None
    J: float
    trace: ForwardTrace

    def Phi(self, params: NetworkParams) -> np.ndarray:
        """``Phi^t_{ik} = phi_k(x_tilde^t_i)`` stacked over layers."""
        return self.trace.bases(params)[0]


def _contract(v: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``sum over examples and coordinates of v[..., i] * M[..., i, k]``."""
    return np.tensordot(v, M, axes=v.ndim)


def _target(target: SparseSignal | np.ndarray) -> np.ndarray:
    return target.x if isinstance(target, SparseSignal) else np.asarray(target, dtype=float)


def _check(params: NetworkParams, trace: ForwardTrace, x: np.ndarray, momentum: bool) -> None:
    if trace.x_tilde is None or trace.L != params.L or trace.x_tilde.shape[0] != params.L:
        raise ConsistencyError("trace does not match the parameter layer count")
    if trace.output.shape != x.shape:
        raise ConsistencyError(f"target shape {x.shape} differs from output {trace.output.shape}")
    if momentum and trace.z is None:
        raise ConsistencyError("momentum network needs a trace with z")


def _psi_prime(params: NetworkParams, dphi: np.ndarray) -> np.ndarray:
    """``psi^(t)'(x_tilde^t)`` for every layer, shape (L, ..., n)."""
    C = params.layer_coeffs()
    return np.stack([dphi[i] @ C[i] for i in range(params.L)])


def grad_letnet_var(
    params: NetworkParams, model: SensingModel, trace: ForwardTrace, target: SparseSignal | np.ndarray
) -> GradientBundle:
    """Per-layer gradients by plain back-propagation through ``x~ = W x + b``."""
    x = _target(target)
    _check(params, trace, x, False)
    L, K = params.L, params.K
    phi, dphi, _ = trace.bases(params)
    dpsi = _psi_prime(params, dphi)
    gx = np.empty_like(trace.x)
    gxt = np.empty_like(trace.x_tilde)
    gc = np.empty((L, K))
    r = trace.output - x
    gx[L] = r
    for t in range(L, 0, -1):
        gc[t - 1] = _contract(gx[t], phi[t - 1])
        gxt[t - 1] = dpsi[t - 1] * gx[t]
        gx[t - 1] = gxt[t - 1] @ model.W
    return GradientBundle(gc.reshape(-1), gx, gxt, None, 0.5 * float(np.sum(r * r)), trace)


def grad_letnet_fixed(
    params: NetworkParams, model: SensingModel, trace: ForwardTrace, target: SparseSignal | np.ndarray
) -> GradientBundle:
    """Shared-coefficient gradient accumulated layer by layer.

    Runs ``g <- g + Phi^t' r^t`` and ``r^{t-1} = W' diag(psi'(x~^t)) r^t``
    from ``r^L = x^L - x``.
    """
    x = _target(target)
    _check(params, trace, x, False)
    L = params.L
    phi, dphi, _ = trace.bases(params)
    c = params.coeffs
    gx = np.empty_like(trace.x)
    gxt = np.empty_like(trace.x_tilde)
    g = np.zeros(params.K)
    r = trace.output - x
    gx[L] = r
    for t in range(L, 0, -1):
        g = g + _contract(gx[t], phi[t - 1])
        gxt[t - 1] = (dphi[t - 1] @ c) * gx[t]
        gx[t - 1] = gxt[t - 1] @ model.W
    return GradientBundle(g, gx, gxt, None, 0.5 * float(np.sum(r * r)), trace)


def grad_fletnet(
    params: NetworkParams, model: SensingModel, trace: ForwardTrace, target: SparseSignal | np.ndarray
) -> GradientBundle:
    """Gradient through the momentum network.

    ``x^t`` feeds both ``z^{t+1}`` and ``z^{t+2}``, so its adjoint is
    ``(1 + beta_{t+1}) dz^{t+1} - beta_{t+2} dz^{t+2}``.
    """
    x = _target(target)
    _check(params, trace, x, True)
    L, K = params.L, params.K
    beta = params.beta  # beta[t-1] is beta_t
    phi, dphi, _ = trace.bases(params)
    dpsi = _psi_prime(params, dphi)
    gx = np.empty_like(trace.x)
    gxt = np.empty_like(trace.x_tilde)
    gz = np.empty_like(trace.x_tilde)
    gc = np.empty((L, K))
    r = trace.output - x
    for t in range(L, 0, -1):
        if t == L:
            gx[t] = r
        elif t == L - 1:
            gx[t] = (1.0 + beta[L - 1]) * gz[L - 1]
        else:
            gx[t] = (1.0 + beta[t]) * gz[t] - beta[t + 1] * gz[t + 1]
        gc[t - 1] = _contract(gx[t], phi[t - 1])
        gxt[t - 1] = dpsi[t - 1] * gx[t]
        gz[t - 1] = gxt[t - 1] @ model.W
    # x^0 is the fixed zero start; its adjoint is recorded for completeness
    gx[0] = (1.0 + beta[0]) * gz[0] - (beta[1] * gz[1] if L > 1 else 0.0)
    return GradientBundle(gc.reshape(-1), gx, gxt, gz, 0.5 * float(np.sum(r * r)), trace)


_GRADIENTS = {Arch.VAR: grad_letnet_var, Arch.FIXED: grad_letnet_fixed, Arch.FLET: grad_fletnet}


def gradient(
    params: NetworkParams, model: SensingModel, trace: ForwardTrace, target: SparseSignal | np.ndarray
) -> GradientBundle:
    """Dispatch to the recursion matching ``params.arch``."""
    return _GRADIENTS[params.arch](params, model, trace, target)


def cost(params: NetworkParams, model: SensingModel, b: np.ndarray, x: np.ndarray) -> float:
    """Training cost without storing the trace."""
    r = forward(params, model, b, keep_trace=False).output - x
    return 0.5 * float(np.sum(r * r))


def batch_gradient(params: NetworkParams, model: SensingModel, split: Split) -> tuple[GradientBundle, float]:
    """Forward and backward over a whole split; J and gradient are sums over examples."""
    if len(split) == 0:
        raise ConfigError("cannot take a gradient over an empty split")
    trace = forward(params, model, split.b)
    bundle = gradient(params, model, trace, split.x)
    return bundle, bundle.J
