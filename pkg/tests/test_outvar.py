import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdlae.codelength import Decoder
from mdlae.outvar import (
    OutputModel,
    gaussian_rec_total,
    log_error_constant,
    log_error_objective,
    mean_sq_residuals,
    optimal_sigma_out,
    rec_at_optimum,
)


def test_unit_residuals_give_unit_sigma():
    E = mean_sq_residuals(np.array([[1.0], [-1.0]]), np.zeros((2, 1)))
    assert optimal_sigma_out(E)[0] == 1.0
    grid = np.linspace(1e-3, 3, 3000)
    costs = [gaussian_rec_total(np.array([[1.0], [-1.0]]), np.zeros((2, 1)), np.array([s])) for s in grid]
    assert abs(grid[int(np.argmin(costs))] - 1.0) <= 1e-3


def test_zero_residuals_floor_at_epsilon():
    assert optimal_sigma_out(np.zeros(2), 0.01).tolist() == [0.01, 0.01]


def test_zero_residuals_without_floor_rejected():
    with pytest.raises(ValueError):
        optimal_sigma_out(np.zeros(1))


def test_square_root():
    assert optimal_sigma_out(np.array([4.0]))[0] == 2.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cost_at_optimum_is_closed_form_and_minimal(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 30)), int(rng.integers(1, 5))
    x = rng.normal(size=(n, d)) * rng.uniform(0.01, 10, d)
    x_hat = rng.normal(size=(n, d))
    E = mean_sq_residuals(x, x_hat)
    s = optimal_sigma_out(E)
    at_opt = gaussian_rec_total(x, x_hat, s)
    assert abs(at_opt - rec_at_optimum(E, n)) <= 1e-12 * max(1.0, abs(at_opt))
    for c in (0.9, 1.1):
        other = s.copy()
        other[int(rng.integers(d))] *= c
        assert gaussian_rec_total(x, x_hat, other) >= at_opt


def test_log_error_objective_plus_constant_is_optimum():
    E = np.array([0.3, 2.0, 1e-4])
    assert log_error_objective(E, 0.0, 7) + log_error_constant(3, 7) == pytest.approx(rec_at_optimum(E, 7), abs=1e-12)


def test_unit_errors_leave_only_constants():
    assert log_error_objective(np.ones(3), 0.0, 10) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-8, 1e8), st.integers(1, 100))
def test_halving_an_error_saves_the_same_amount_at_any_scale(e, n):
    E = np.array([e, 1.0])
    drop = log_error_objective(E, 0.0, n) - log_error_objective(E * [0.5, 1.0], 0.0, n)
    assert drop == pytest.approx(0.5 * n * np.log(2), rel=1e-9)


def test_objective_invariant_under_component_relabeling():
    E = np.array([0.1, 3.0, 0.7])
    assert log_error_objective(E, 0.01, 5) == pytest.approx(log_error_objective(E[::-1], 0.01, 5), abs=1e-12)


def test_output_model_refit_and_validation():
    m = OutputModel(np.ones(2), "learned", epsilon=0.5)
    assert np.allclose(m.refit(np.array([0.0, 0.75])).sigma, [0.5, 1.0])
    with pytest.raises(ValueError):
        OutputModel(np.array([0.0]))
    with pytest.raises(ValueError):
        OutputModel(np.ones(1), "adaptive")


def test_decoder_checks_sigma_length():
    from mdlae import netgraph as ng

    with pytest.raises(ValueError):
        Decoder(ng.layered([1, 2]), OutputModel(np.ones(3)))
