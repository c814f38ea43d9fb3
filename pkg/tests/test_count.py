import numpy as np
import pytest

import oracles
from orbitdemand.core import InputError
from orbitdemand.count import (
    COVARIATES, N_COEF, CountModelParams, CountObservation, design, fit_count_model, fit_ridge,
    make_folds, penalized_gradient, penalized_objective, poisson_deviance, poisson_mean,
    predict_launch_total, standardization,
)


def _poisson_data(n=200, p=5, seed=0):
    rng = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    w = np.concatenate([[1.5], rng.normal(0, 0.3, p - 1)])
    return Z, rng.poisson(np.exp(Z @ w)).astype(float), np.arange(n)


def test_covariate_layout():
    assert N_COEF == 13 and len(COVARIATES) == 12
    assert COVARIATES[0] == "insurance_premiums" and COVARIATES[-1] == "mean_collision_rate"


def test_observation_validation():
    with pytest.raises(InputError):
        CountObservation("civil", 2010, 3, (1.0,) * 11)
    with pytest.raises(InputError):
        CountObservation("civil", 2010, -1, (1.0,) * 12)
    obs = CountObservation("civil", 2010, 3, tuple(range(12)))
    assert obs.Z[0] == 1.0 and obs.Z.size == 13
    with pytest.raises(InputError):
        design([])


def test_objective_by_hand():
    Z, N, _ = _poisson_data(20, 3)
    w = np.array([0.5, -0.2, 0.1])
    eta = Z @ w
    expected = float(np.sum(N * eta - np.exp(eta))) - 2.0 * (0.04 + 0.01)
    assert penalized_objective(w, (Z, N), 2.0) == pytest.approx(expected, rel=1e-13)


def test_unpenalized_fit_matches_irls():
    Z, N, _ = _poisson_data()
    w = fit_ridge(Z, N, 0.0)
    np.testing.assert_allclose(w, oracles.poisson_irls(Z, N), atol=1e-6)
    assert np.max(np.abs(penalized_gradient(w, (Z, N), 0.0))) < 1e-6


def test_intercept_is_not_penalized():
    Z, N, _ = _poisson_data()
    w = fit_ridge(Z, N, 1e8)
    assert np.all(np.abs(w[1:]) < 1e-5)
    assert w[0] == pytest.approx(np.log(N.mean()), abs=1e-4)


def test_deviance():
    assert poisson_deviance([0, 0], [1.0, 2.0]) == pytest.approx(6.0)
    assert poisson_deviance([3, 5], [3, 5]) == 0.0
    N, mu = np.array([2.0, 7.0]), np.array([3.0, 6.0])
    expected = 2 * (2 * np.log(2 / 3) + 7 * np.log(7 / 6) - (9 - 9))
    assert poisson_deviance(N, mu) == pytest.approx(expected)


def test_folds_partition_rows():
    years = np.array([2005, 2001, 2003, 2002, 2004, 2000, 2006])
    folds = make_folds(years, 3)
    assert sorted(np.concatenate(folds).tolist()) == list(range(7))
    # contiguous blocks in time
    assert set(years[folds[0]]) == {2000, 2001, 2002}
    r = make_folds(years, 3, mode="random", seed=1)
    assert sorted(np.concatenate(r).tolist()) == list(range(7))
    with pytest.raises(InputError):
        make_folds(years, 3, mode="bogus")


def test_standardization_and_raw_coefficients():
    Z, N, years = _poisson_data(100, 4, seed=2)
    Z[:, 1:] = Z[:, 1:] * [10, 0.1, 1000] + [5, -3, 100]
    m = fit_count_model((Z, N, years), lambda_grid=[0.0], k_folds=1)
    means, scales = standardization(Z)
    assert np.allclose(m.means, means) and np.allclose(m.scales, scales)
    raw = m.raw_coefficients()
    np.testing.assert_allclose(Z @ raw, m.standardize(Z) @ m.omega, rtol=1e-10)
    np.testing.assert_allclose(raw, oracles.poisson_irls(Z, N), rtol=1e-5, atol=1e-8)


def test_constant_covariate_is_harmless():
    Z, N, years = _poisson_data(60, 4, seed=3)
    Z[:, 2] = 7.0
    m = fit_count_model((Z, N, years), lambda_grid=[0.1, 1.0], k_folds=3)
    assert np.all(np.isfinite(m.omega)) and m.scales[1] == 1.0


def test_cross_validation_picks_grid_point():
    Z, N, years = _poisson_data(80, 5, seed=4)
    grid = [1e-3, 1e-1, 10.0, 1e3]
    m = fit_count_model((Z, N, years), lambda_grid=grid, k_folds=4)
    assert m.lam in grid
    best = min(m.cv_table, key=lambda r: r["cv_deviance"])
    assert best["lambda"] == m.lam
    assert [r["lambda"] for r in m.cv_table] == sorted(grid)


def test_too_few_rows_or_zero_counts():
    Z, N, years = _poisson_data(4, 3)
    with pytest.raises(InputError):
        fit_count_model((Z, N, years), k_folds=5)
    with pytest.raises(InputError):
        fit_ridge(Z, np.zeros(4), 1.0)


def test_prediction_and_draws():
    m = CountModelParams(omega=np.r_[np.log(20.0), np.zeros(12)])
    Z = np.r_[1.0, np.ones(12)]
    assert poisson_mean(m, Z) == pytest.approx(20.0)
    assert predict_launch_total(m, Z) == pytest.approx(20.0)
    a = predict_launch_total(m, Z, draw=True, rng=np.random.default_rng(1))
    b = predict_launch_total(m, Z, draw=True, rng=np.random.default_rng(1))
    assert a == b and float(a).is_integer()
    with pytest.raises(ValueError):
        predict_launch_total(m, Z, draw=True)
    with pytest.raises(InputError):
        poisson_mean(m, np.ones(5))
    huge = CountModelParams(omega=np.r_[800.0, np.zeros(12)])
    with pytest.raises(OverflowError):
        poisson_mean(huge, Z)


def test_json_round_trip(tmp_path):
    m = CountModelParams(omega=np.arange(13) / 10, lam=3.0, means=np.ones(12), scales=np.full(12, 2.0),
                         operator="civil", cv_table=[{"lambda": 3.0, "cv_deviance": 1.0, "coef_norm": 2.0}])
    m.save(tmp_path / "c.json")
    q = CountModelParams.load(tmp_path / "c.json")
    assert np.array_equal(q.omega, m.omega) and q.lam == 3.0 and q.operator == "civil"
    assert q.cv_table == m.cv_table


def test_world_fit_is_finite(world):
    for group, obs in world.count_observations.items():
        m = fit_count_model(obs, operator=group)
        assert m.omega.size == 13 and np.all(np.isfinite(m.omega))
        norms = [r["coef_norm"] for r in m.cv_table]
        assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))
