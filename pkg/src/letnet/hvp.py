"""Hessian-vector products of the training cost.

The per-layer architectures use the R-operator, ``R_u{f} = d/da f(c + a u)``
at ``a = 0``, pushed forward through the network and then back through the
gradient recursion.  The tied-coefficient network uses a forward difference
of gradients instead.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .backprop import GradientBundle, _check, _contract, batch_gradient, gradient
from .errors import ShapeError
from .nets import Arch, ForwardTrace, NetworkParams, forward
from .sensing import SensingModel, Split


def _check_u(params: NetworkParams, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != params.n_params:
        raise ShapeError(f"direction has {u.size} entries, parameters have {params.n_params}")
    return u


def _r_pass(
    params: NetworkParams,
    model: SensingModel,
    trace: ForwardTrace,
    grad: GradientBundle,
    u: np.ndarray,
    momentum: bool,
) -> np.ndarray:
    L, K = params.L, params.K
    C = params.layer_coeffs()
    U = u.reshape(L, K)
    beta = params.beta
    phi, dphi, d2phi = trace.bases(params)
    shape = trace.x.shape[1:]

    # forward: R{x~^t}, R{Phi^t}, R{x^t}
    Rxt = np.empty((L,) + shape)
    Rx_prev = np.zeros(shape)
    Rx = np.zeros(shape)
    for t in range(1, L + 1):
        Rz = (1.0 + beta[t - 1]) * Rx - beta[t - 1] * Rx_prev if momentum else Rx
        Rxt[t - 1] = Rz @ model.W.T
        Rx_prev, Rx = Rx, phi[t - 1] @ U[t - 1] + (dphi[t - 1] @ C[t - 1]) * Rxt[t - 1]

    # backward: R{grad x^t}, R{grad c^t}
    out = np.empty((L, K))
    Rgz = np.empty((L,) + shape)
    Rgx = Rx
    gx = grad.grad_x
    for t in range(L, 0, -1):
        i = t - 1
        if momentum:
            if t == L:
                Rgx = Rx
            elif t == L - 1:
                Rgx = (1.0 + beta[L - 1]) * Rgz[L - 1]
            else:
                Rgx = (1.0 + beta[t]) * Rgz[t] - beta[t + 1] * Rgz[t + 1]
        dpsi = dphi[i] @ C[i]
        Rdpsi = dphi[i] @ U[i] + (d2phi[i] @ C[i]) * Rxt[i]
        out[i] = _contract(Rgx, phi[i]) + _contract(gx[t] * Rxt[i], dphi[i])
        Rgz[i] = (dpsi * Rgx + Rdpsi * gx[t]) @ model.W
        if not momentum:
            Rgx = Rgz[i]
    return out.reshape(-1)


def hvp_letnet_var(
    params: NetworkParams, model: SensingModel, trace: ForwardTrace, grad: GradientBundle, u: np.ndarray
) -> np.ndarray:
    """Exact ``H u`` for per-layer coefficients without momentum."""
    u = _check_u(params, u)
    _check(params, trace, grad.grad_x[-1], False)
    return _r_pass(params, model, trace, grad, u, momentum=False)


def hvp_fletnet(
    params: NetworkParams, model: SensingModel, trace: ForwardTrace, grad: GradientBundle, u: np.ndarray
) -> np.ndarray:
    """Exact ``H u`` for the momentum network."""
    u = _check_u(params, u)
    _check(params, trace, grad.grad_x[-1], True)
    return _r_pass(params, model, trace, grad, u, momentum=True)


def hvp_letnet_fixed_fd(
    params: NetworkParams,
    model: SensingModel,
    split: Split,
    u: np.ndarray,
    grad0: np.ndarray | None = None,
) -> np.ndarray:
    """Forward difference ``(grad J(c + e u) - grad J(c)) / e``.

    ``e = sqrt(machine eps) (1 + ||c||) / ||u||``; ``grad0`` may carry the
    gradient at ``c`` to save one backward pass.
    """
    u = _check_u(params, u)
    nu = np.linalg.norm(u)
    if nu == 0.0:
        return np.zeros_like(u)
    c = params.coeffs
    eps = math.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(c)) / nu
    if grad0 is None:
        grad0 = batch_gradient(params, model, split)[0].grad_c
    g1 = batch_gradient(params.with_coeffs(c + eps * u), model, split)[0].grad_c
    return (g1 - grad0) / eps


def make_hvp(
    params: NetworkParams, model: SensingModel, split: Split, grad: GradientBundle
) -> Callable[[np.ndarray], np.ndarray]:
    """Curvature operator at ``params`` suited to its architecture."""
    if params.arch is Arch.VAR:
        return lambda v: hvp_letnet_var(params, model, grad.trace, grad, v)
    if params.arch is Arch.FLET:
        return lambda v: hvp_fletnet(params, model, grad.trace, grad, v)
    return lambda v: hvp_letnet_fixed_fd(params, model, split, v, grad.grad_c)


def hvp_tied_exact(
    params: NetworkParams, model: SensingModel, split: Split, u: np.ndarray
) -> np.ndarray:
    """Exact ``H u`` for tied coefficients via the untied network.

    Untie ``c`` into every layer, apply the per-layer R-pass along the tiled
    direction and sum the layer blocks.  Used as an independent reference
    for the forward-difference product.
    """
    u = _check_u(params, u)
    untied = NetworkParams(Arch.VAR, params.L, params.K, params.tau, np.tile(params.coeffs, params.L))
    trace = forward(untied, model, split.b)
    grad = gradient(untied, model, trace, split.x)
    Hu = hvp_letnet_var(untied, model, trace, grad, np.tile(u, params.L))
    return Hu.reshape(params.L, params.K).sum(axis=0)
