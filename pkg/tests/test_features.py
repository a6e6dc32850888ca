import numpy as np
import pytest

from linklat.features import (DEFAULT_FEATURES, FeatureMatrix, build_candidate_features,
                              compute_feature, forward_stepwise)
from linklat.queueing import featurize_arrays


def test_unary_transforms():
    fm = build_candidate_features({"rho_e": np.array([0.25])}, ["rho_e"])
    assert fm.column("rho_e^2")[0] == 0.0625
    assert fm.column("sqrt(rho_e)")[0] == 0.5
    assert fm.column("log1p(rho_e)")[0] == pytest.approx(np.log(1.25))


def test_pairwise_products():
    fm = build_candidate_features({"pi0": np.array([0.5]), "rho_e": np.array([0.5])},
                                  ["pi0", "rho_e"])
    assert fm.column("pi0*rho_e")[0] == 0.25


def test_candidate_count_for_four_features():
    base = featurize_arrays([0.2, 0.7, 1.3], [1.0, 1.0, 1.0], [4, 8, 32])
    fm = build_candidate_features(base, DEFAULT_FEATURES)
    assert len(fm.names) == 30 and not fm.dropped
    assert len(set(fm.names)) == 30


def test_non_finite_candidates_dropped():
    fm = build_candidate_features({"x": np.array([-1.0, 4.0])}, ["x"])
    assert "sqrt(x)" not in fm.names and "log1p(x)" not in fm.names
    assert {name for name, _ in fm.dropped} == {"sqrt(x)", "log1p(x)"}


def test_exp_is_clamped():
    fm = build_candidate_features({"x": np.array([1e4])}, ["x"])
    assert np.isfinite(fm.column("exp(x)")).all()


def test_compute_feature_rebuilds_candidates():
    base = featurize_arrays([0.3, 0.9], [1.0, 1.0], [8, 8])
    fm = build_candidate_features(base, DEFAULT_FEATURES)
    for name in fm.names:
        assert np.array_equal(compute_feature(name, base), fm.column(name))
    with pytest.raises(KeyError):
        compute_feature("cbrt(L)", base)


def _planted():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.5, 2.0, 200)
    noise = rng.uniform(0.5, 2.0, 200)
    return FeatureMatrix(["x", "x^2", "z"], np.column_stack([x, x ** 2, noise])), 3 * x ** 2


def test_stepwise_picks_planted_square_first():
    fm, y = _planted()
    res = forward_stepwise(fm, y, max_features=3, seed=1)
    assert res.selected[0] == "x^2"
    assert res.scores[0] < 1e-9


def test_stepwise_zero_features():
    fm, y = _planted()
    assert forward_stepwise(fm, y, max_features=0).selected == []


def test_stepwise_scores_nonincreasing():
    base = featurize_arrays(np.linspace(0.05, 1.5, 300), np.ones(300), np.full(300, 16))
    fm = build_candidate_features(base, DEFAULT_FEATURES)
    y = base.L - base.rho + 0.01 * np.sin(np.arange(300))
    res = forward_stepwise(fm, y, max_features=4, seed=0)
    assert all(b <= a for a, b in zip(res.scores, res.scores[1:]))
    assert res.scores[0] < res.baseline


def test_stepwise_subset_of_eq3_set():
    lam = np.random.default_rng(5).uniform(0.05, 1.4, 400)
    base = featurize_arrays(lam, np.ones_like(lam), np.full(lam.shape, 32))
    fm = FeatureMatrix(list(DEFAULT_FEATURES),
                       np.column_stack([getattr(base, n) for n in DEFAULT_FEATURES]))
    y = base.L - base.rho
    res = forward_stepwise(fm, y, max_features=4, seed=2)
    assert res.selected and set(res.selected) <= set(DEFAULT_FEATURES)


def test_stepwise_tie_breaks_by_name():
    x = np.linspace(1, 2, 50)
    fm = FeatureMatrix(["b", "a"], np.column_stack([x, x]))
    assert forward_stepwise(fm, 2 * x, max_features=1).selected == ["a"]


def test_stepwise_errors():
    fm = FeatureMatrix(["c"], np.ones((20, 1)))
    with pytest.raises(ValueError, match="constant"):
        forward_stepwise(fm, np.arange(1, 21.0))
    fm, y = _planted()
    with pytest.raises(ValueError, match="positive"):
        forward_stepwise(fm, y - 10)
