import numpy as np
import pytest

from letnet.backprop import batch_gradient, cost, grad_fletnet, grad_letnet_fixed, grad_letnet_var, gradient
from letnet.errors import ConfigError, ConsistencyError
from letnet.let import basis_stack
from letnet.nets import Arch, NetworkParams, forward, init_params
from letnet.sensing import Split

from oracles import central_difference_gradient, complex_step_gradient, random_params


def _subsplit(split, idx):
    return Split(split.y[idx], split.b[idx], split.x[idx], split.snr_db[idx])


@pytest.fixture
def batch(small_model):
    from letnet.sensing import generate_dataset

    return generate_dataset(small_model, 0.2, 20.0, (3, 0, 0), 9).split("train")


class TestExactness:
    @pytest.mark.parametrize("arch", list(Arch))
    def test_matches_complex_step(self, arch, small_model, small_split, rng):
        p = random_params(arch, 6, 5, rng)
        g = batch_gradient(p, small_model, small_split)[0].grad_c
        ref = complex_step_gradient(p, small_model, small_split.b, small_split.x)
        np.testing.assert_allclose(g, ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())

    @pytest.mark.parametrize("arch", list(Arch))
    def test_matches_central_differences(self, arch, small_model, small_split, rng):
        p = random_params(arch, 10, 5, rng)
        g = batch_gradient(p, small_model, small_split)[0].grad_c
        fd = central_difference_gradient(lambda c: cost(p.with_coeffs(c), small_model, small_split.b, small_split.x), p.coeffs)
        assert np.max(np.abs(fd - g) / np.abs(g)) <= 1e-6

    def test_fit_initialization_matches_complex_step(self, small_model, small_split):
        """Large alternating ST-fit coefficients still give an exact gradient."""
        p = init_params(Arch.FLET, 5, 5, 0.05)
        g = batch_gradient(p, small_model, small_split)[0].grad_c
        ref = complex_step_gradient(p, small_model, small_split.b, small_split.x)
        np.testing.assert_allclose(g, ref, rtol=1e-7, atol=1e-10 * np.abs(ref).max())


class TestClosedForms:
    @pytest.mark.parametrize("arch", list(Arch))
    def test_perfect_reconstruction(self, arch, small_model, small_split, rng):
        p = random_params(arch, 4, 5, rng)
        tr = forward(p, small_model, small_split.b)
        bundle = gradient(p, small_model, tr, tr.output.copy())
        np.testing.assert_array_equal(bundle.grad_c, 0.0)
        assert bundle.J == 0.0

    @pytest.mark.parametrize("arch", list(Arch))
    def test_single_layer(self, arch, small_model, small_split, rng):
        p = random_params(arch, 1, 5, rng)
        tr = forward(p, small_model, small_split.b)
        g = gradient(p, small_model, tr, small_split.x).grad_c
        Phi = basis_stack(small_split.b[0], 5, p.tau)
        np.testing.assert_allclose(g, Phi.T @ (tr.x[1, 0] - small_split.x[0]), rtol=1e-12, atol=1e-15)

    def test_fixed_is_tied_sum_of_var(self, small_model, small_split, rng):
        p = random_params(Arch.FIXED, 8, 5, rng)
        untied = NetworkParams(Arch.VAR, 8, 5, p.tau, np.tile(p.coeffs, 8))
        tr = forward(untied, small_model, small_split.b)
        g_var = grad_letnet_var(untied, small_model, tr, small_split.x).grad_c.reshape(8, 5).sum(axis=0)
        g_fix = grad_letnet_fixed(p, small_model, forward(p, small_model, small_split.b), small_split.x).grad_c
        np.testing.assert_allclose(g_fix, g_var, rtol=1e-12, atol=1e-14)

    def test_zero_momentum_fletnet_is_var(self, small_model, small_split, rng):
        p = random_params(Arch.VAR, 8, 5, rng)
        q = NetworkParams(Arch.FLET, 8, 5, p.tau, p.coeffs, np.zeros(8))
        gv = grad_letnet_var(p, small_model, forward(p, small_model, small_split.b), small_split.x)
        gf = grad_fletnet(q, small_model, forward(q, small_model, small_split.b), small_split.x)
        assert np.max(np.abs(gv.grad_c - gf.grad_c)) <= 1e-12
        assert np.max(np.abs(gv.grad_x[1:] - gf.grad_x[1:])) <= 1e-12

    def test_phi_recomputable(self, small_model, small_split, rng):
        p = random_params(Arch.VAR, 3, 5, rng)
        bundle = batch_gradient(p, small_model, small_split)[0]
        np.testing.assert_array_equal(bundle.Phi(p)[1], basis_stack(bundle.trace.x_tilde[1], 5, p.tau))


class TestBatch:
    @pytest.mark.parametrize("arch", list(Arch))
    def test_sum_of_examples(self, arch, small_model, batch, rng):
        p = random_params(arch, 5, 5, rng)
        g01, J01 = batch_gradient(p, small_model, _subsplit(batch, [0, 1]))
        g0, J0 = batch_gradient(p, small_model, _subsplit(batch, [0]))
        g1, J1 = batch_gradient(p, small_model, _subsplit(batch, [1]))
        assert np.max(np.abs(g01.grad_c - g0.grad_c - g1.grad_c)) <= 1e-12 * max(1, np.abs(g01.grad_c).max())
        assert J01 == pytest.approx(J0 + J1, rel=1e-14)

    def test_single_example_batch_equals_op(self, small_model, small_split, rng):
        p = random_params(Arch.VAR, 5, 5, rng)
        g_b = batch_gradient(p, small_model, small_split)[0].grad_c
        g_1 = grad_letnet_var(p, small_model, forward(p, small_model, small_split.b[0]), small_split.x[0]).grad_c
        np.testing.assert_allclose(g_b, g_1, rtol=1e-13, atol=1e-15)

    def test_cost_non_negative(self, small_model, batch, rng):
        J = batch_gradient(random_params(Arch.FLET, 5, 5, rng), small_model, batch)[1]
        assert J > 0

    def test_empty_split(self, small_model):
        empty = Split(np.zeros((0, 22)), np.zeros((0, 32)), np.zeros((0, 32)), np.zeros(0))
        with pytest.raises(ConfigError):
            batch_gradient(init_params(Arch.VAR, 2, 5, 0.1), small_model, empty)

    @pytest.mark.parametrize("arch", list(Arch))
    def test_descent_direction(self, arch, small_model, batch, rng):
        p = random_params(arch, 6, 5, rng)
        bundle, J = batch_gradient(p, small_model, batch)
        s = 1e-2
        while s > 1e-12:
            if cost(p.with_coeffs(p.coeffs - s * bundle.grad_c), small_model, batch.b, batch.x) < J:
                break
            s /= 2
        assert s > 1e-12


class TestConsistency:
    def test_layer_mismatch(self, small_model, small_split):
        tr = forward(init_params(Arch.VAR, 3, 5, 0.1), small_model, small_split.b)
        with pytest.raises(ConsistencyError):
            grad_letnet_var(init_params(Arch.VAR, 4, 5, 0.1), small_model, tr, small_split.x)

    def test_missing_momentum_trace(self, small_model, small_split):
        tr = forward(init_params(Arch.VAR, 3, 5, 0.1), small_model, small_split.b)
        with pytest.raises(ConsistencyError):
            grad_fletnet(init_params(Arch.FLET, 3, 5, 0.1), small_model, tr, small_split.x)

    def test_target_shape(self, small_model, small_split):
        p = init_params(Arch.VAR, 3, 5, 0.1)
        tr = forward(p, small_model, small_split.b)
        with pytest.raises(ConsistencyError):
            grad_letnet_var(p, small_model, tr, np.zeros(32))
