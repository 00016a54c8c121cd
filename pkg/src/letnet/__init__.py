"""LET-parametrized unrolled ISTA/FISTA networks with Hessian-free training."""

from .backprop import GradientBundle, batch_gradient, grad_fletnet, grad_letnet_fixed, grad_letnet_var, gradient
from .hfo import cg_backtrack, cg_solve, line_search, lm_update, train
from .hvp import hvp_fletnet, hvp_letnet_fixed_fd, hvp_letnet_var
from .let import (
    LetActivation,
    RegularizerProfile,
    basis_eval,
    fit_to_soft_threshold,
    induced_regularizer,
    psi,
    psi_double_prime,
    psi_inverse,
    psi_prime,
    soft_threshold,
)
from .metrics import best_s_sparse, layerwise_curves, recon_snr_db, srm
from .nets import Arch, ForwardTrace, NetworkParams, forward, init_params, load_checkpoint, make_beta_schedule, predict, save_checkpoint
from .sensing import (
    Dataset,
    Measurement,
    SensingModel,
    SparseSignal,
    Split,
    build_sensing_model,
    gen_sparse_signal,
    generate_dataset,
    load_dataset,
    measure,
    save_dataset,
)
from .solvers import SolverConfig, cross_validate_lambda, fista, ista

__version__ = "0.1.0"
