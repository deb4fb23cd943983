import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from ccsampling.population import (
    ConstantP,
    LogitP,
    ModelParams,
    PopulationGrid,
    calibrate_beta,
    generate_count_pair,
    generate_grid,
)


def test_degenerate_model_is_constant():
    grid = generate_grid(ModelParams(200, 0, 0, 0, 7, 9, seed=123))
    assert np.all(grid.values == 200.0)
    assert grid.total == 200.0 * 63


def test_row_effect_only():
    grid = generate_grid(ModelParams(0, 1, 0, 0, 30, 10, seed=4))
    assert np.all(grid.values == grid.values[:, :1])
    assert grid.values[:, 0].var() > 0


def test_moments_large_grid():
    grid = generate_grid(ModelParams(200, 5, 5, 5, 1000, 1000, seed=1))
    assert abs(grid.values.mean() - 200) < 1.0
    assert abs(grid.values.var() - 75) < 10


def test_row_mean_variance_matches_model():
    # var of row means = sigma_m^2 + (sigma_d^2 + sigma_e^2) / N_D, less the
    # shared column component which is common to all rows
    sm, sd, se, nm, nd = 3.0, 2.0, 4.0, 4000, 50
    grid = generate_grid(ModelParams(10, sm, sd, se, nm, nd, seed=8))
    row_means = grid.values.mean(axis=1)
    expected = sm**2 + se**2 / nd
    # sample variance of nm draws: SE = var * sqrt(2 / (nm - 1))
    se_var = expected * math.sqrt(2 / (nm - 1))
    assert abs(row_means.var(ddof=1) - expected) < 3 * se_var


def test_seed_reproducibility():
    p = ModelParams(200, 5, 5, 5, 20, 30, seed=99)
    assert np.array_equal(generate_grid(p).values, generate_grid(p).values)
    q = ModelParams(200, 5, 5, 5, 20, 30, seed=100)
    assert not np.array_equal(generate_grid(p).values, generate_grid(q).values)


@pytest.mark.parametrize("kwargs", [
    {"sigma_m": -1.0},
    {"sigma_e": float("nan")},
    {"mu": float("inf")},
    {"n_rows": 0},
    {"seed": -1},
])
def test_invalid_params(kwargs):
    base = {"mu": 200.0, "sigma_m": 5.0, "sigma_d": 5.0, "sigma_e": 5.0, "n_rows": 3, "n_cols": 3, "seed": 0}
    with pytest.raises(ValueError):
        ModelParams(**{**base, **kwargs})


def test_grid_rejects_non_finite():
    with pytest.raises(ValueError):
        PopulationGrid(np.array([[1.0, np.nan]]))


def test_grid_is_read_only():
    g = PopulationGrid(np.ones((2, 2)))
    with pytest.raises(ValueError):
        g.values[0, 0] = 3.0


# -- count pairs ------------------------------------------------------------------

def test_thinning_with_p_one_copies_counts():
    pair = generate_count_pair(ModelParams(50, 5, 5, 5, 20, 20, seed=2), ConstantP(1.0))
    assert np.array_equal(pair.x.values, pair.y.values)


def test_constant_thinning_ratio():
    pair = generate_count_pair(ModelParams(200, 5, 5, 5, 300, 300, seed=3), ConstantP(0.3))
    x, y = pair.x.values, pair.y.values
    assert np.all(y <= x) and np.all(y >= 0)
    assert np.all(x == np.round(x)) and np.all(y == np.round(y))
    assert abs(y.mean() / x.mean() - 0.3) < 0.01


def test_logit_thinning_average():
    pair = generate_count_pair(ModelParams(200, 5, 5, 5, 200, 200, seed=5), LogitP(target=0.3))
    p = pair.p_mode.probabilities(pair.z.values)
    assert abs(p.mean() - 0.3) < 0.02
    assert abs(pair.y.values.sum() / pair.x.values.sum() - 0.3) < 0.02


def test_count_pair_reproducible():
    params = ModelParams(200, 5, 5, 5, 15, 15, seed=11)
    a = generate_count_pair(params, LogitP(target=0.3))
    b = generate_count_pair(params, LogitP(target=0.3))
    assert np.array_equal(a.y.values, b.y.values) and a.p_mode.beta == b.p_mode.beta


def test_thinning_expectation_by_replication():
    # E[Y | X] = p X on a fixed small grid: average Y over many seeds with the
    # same Z (all effects zero) and compare to p * E[X] = p * mu
    mu, p = 40.0, 0.3
    ys = [generate_count_pair(ModelParams(mu, 0, 0, 0, 5, 5, seed=s), ConstantP(p)).y.values.mean() for s in range(400)]
    assert abs(np.mean(ys) - p * mu) < 3 * math.sqrt(p * mu / (25 * 400))


def test_negative_z_clamped():
    pair = generate_count_pair(ModelParams(-5, 0, 0, 0, 3, 3, seed=0), ConstantP(0.5))
    assert np.all(pair.x.values == 0)


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_constant_p_rejected(p):
    with pytest.raises(ValueError):
        ConstantP(p)


# -- calibration -----------------------------------------------------------------

def test_calibrate_half_is_zero():
    assert calibrate_beta(np.full((3, 3), 7.0), 0.5) == 0.0


def test_calibrate_unit_z():
    beta = calibrate_beta(np.ones((4, 4)), 0.3)
    assert beta == pytest.approx(math.log(3 / 7), abs=1e-9)


@given(st.integers(0, 2**32), st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_calibrate_residual(seed, target):
    z = np.random.default_rng(seed).normal(200, 5, size=(8, 8))
    beta = calibrate_beta(z, target)
    assert abs(expit(beta * z).mean() - target) <= 1e-6


def test_calibrate_unreachable_reports_bracket():
    with pytest.raises(ValueError, match="bracket"):
        calibrate_beta(np.zeros((2, 2)), 0.3)
    with pytest.raises(ValueError):
        calibrate_beta(np.ones((2, 2)), 1.0)
