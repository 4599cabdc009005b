import math

import numpy as np
import pytest
from scipy import stats

from conftest import random_theta
from mrfsig.discriminate import (
    PerformanceRecord,
    PlanarPoint,
    Separator,
    estimate_separator,
    evaluate_loo,
    evaluate_training,
    exact_performance,
    ideal_separator,
    planar_recode,
    sample_size_bound,
    separator_error_diagnostics,
    separator_margin,
)
from mrfsig.errors import DomainError
from mrfsig.gibbs_core import AutologisticModel, ParamVector, all_configs, energy, sample_vectors
from mrfsig.mple import MpleConfig, fit_dataset


def _models(rng, d=5):
    return (AutologisticModel.from_theta(random_theta(rng, d, pair_prob=0.4)),
            AutologisticModel.from_theta(random_theta(rng, d, pair_prob=0.4)))


class TestIdeal:
    def test_is_log_likelihood_ratio(self, rng):
        p, q = _models(rng)
        sep = ideal_separator(p, q)
        X = all_configs(5)
        llr = (-energy(p.theta, X) - p.log_z) - (-energy(q.theta, X) - q.log_z)
        np.testing.assert_allclose(sep.value(X), llr, atol=1e-10)

    def test_performance_bounds(self, rng):
        p, q = _models(rng)
        rec = exact_performance(ideal_separator(p, q), p, q)
        assert 0.5 <= rec.perf <= 1.0
        assert rec.perf == pytest.approx((rec.p_plus + rec.p_minus) / 2)

    def test_identical_models_tie_everywhere(self, rng):
        p, _ = _models(rng)
        rec = exact_performance(ideal_separator(p, p), p, p)
        assert rec.p_plus == rec.p_minus == 0.0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DomainError):
            ideal_separator(_models(rng, 3)[0], _models(rng, 4)[0])


class TestPlanar:
    def test_point_and_batch(self, rng):
        tp, tm = random_theta(rng, 4), random_theta(rng, 4)
        x = np.array([1, 0, 1, 1], dtype=np.uint8)
        pt = planar_recode(x, tp, tm, label=1)
        assert pt == PlanarPoint(energy(tp, x), energy(tm, x), 1)
        W = planar_recode(np.vstack([x, x]), tp, tm)
        assert W.shape == (2, 2) and W[1, 0] == pt.w_plus


class TestEstimated:
    def test_matches_least_squares(self, rng):
        p, q = _models(rng, 4)
        Xp = sample_vectors(p.theta, 300, seed=1)
        Xm = sample_vectors(q.theta, 300, seed=2)
        sep = estimate_separator(Xp, Xm, p.theta, q.theta)
        W = np.vstack([planar_recode(Xp, p.theta, q.theta), planar_recode(Xm, p.theta, q.theta)])
        y = np.r_[np.ones(300), -np.ones(300)]
        c = np.linalg.lstsq(np.column_stack([W, np.ones(600)]), y, rcond=None)[0]
        assert c[0] < 0
        assert sep.form == "estimated"
        assert sep.beta == pytest.approx(-c[1] / c[0])
        assert sep.intercept == pytest.approx(-c[2] / c[0])
        # same decisions as the raw regression rule
        X = all_configs(4)
        Wx = planar_recode(X, p.theta, q.theta)
        raw = Wx @ c[:2] + c[2]
        np.testing.assert_array_equal(np.sign(sep.value(X)), np.sign(-raw / c[0]) * 1.0)

    def test_collinear_falls_back_to_ideal(self):
        d = 3
        tp = ParamVector.from_dicts(d, {0: 1.0})
        tm = ParamVector.from_dicts(d, {0: -1.0})
        Xp = np.array([[0, 1, 0], [1, 0, 1]], dtype=np.uint8)
        Xm = np.array([[1, 1, 0], [0, 0, 0]], dtype=np.uint8)
        sep = estimate_separator(Xp, Xm, tp, tm)
        assert sep.form == "ideal" and "collinear-fallback" in sep.flags

    def test_json_roundtrip(self, rng):
        p, q = _models(rng, 4)
        sep = ideal_separator(p, q)
        back = Separator.from_json(sep.to_json())
        X = all_configs(4)
        np.testing.assert_allclose(back.value(X), sep.value(X))

    def test_training_counts_ties_as_errors(self):
        sep = Separator(ParamVector.from_dicts(2, {0: 1.0}), 1.0, -1.0, "ideal")
        Xp = np.array([[1, 0], [0, 0]], dtype=np.uint8)  # f = 0, -1
        Xm = np.array([[0, 1], [1, 1]], dtype=np.uint8)  # f = -1, 0
        rec = evaluate_training(sep, Xp, Xm)
        assert (rec.p_plus, rec.p_minus) == (0.0, 0.5)


def brute_loo(Xp, Xm, cp, cm, config):
    tp = fit_dataset(Xp, cp, config).theta_hat
    tm = fit_dataset(Xm, cm, config).theta_hat
    ok_p = ok_m = 0
    for i in range(len(Xp)):
        rest = np.delete(Xp, i, axis=0)
        sep = estimate_separator(rest, Xm, fit_dataset(rest, cp, config).theta_hat, tm)
        ok_p += sep.value(Xp[i]) > 0
    for i in range(len(Xm)):
        rest = np.delete(Xm, i, axis=0)
        sep = estimate_separator(Xp, rest, tp, fit_dataset(rest, cm, config).theta_hat)
        ok_m += sep.value(Xm[i]) < 0
    return ok_p / len(Xp), ok_m / len(Xm)


class TestLoo:
    def test_matches_naive_loop(self):
        p = ParamVector.from_dicts(3, {0: -1.0, 1: -0.5, 2: 0.8}, {(0, 1): -0.5})
        q = ParamVector.from_dicts(3, {0: 0.8, 1: 0.3, 2: -1.0})
        Xp, Xm = sample_vectors(p, 30, seed=1), sample_vectors(q, 25, seed=2)
        cfg = MpleConfig()
        rec = evaluate_loo(Xp, Xm, [(0, 1)], [], cfg)
        assert (rec.p_plus, rec.p_minus) == pytest.approx(brute_loo(Xp, Xm, [(0, 1)], [], cfg))
        assert rec.folds == 55 and rec.failed_folds == 0
        cache = {}
        again = evaluate_loo(Xp, Xm, [(0, 1)], [], cfg, fold_cache=cache, cache_keys=("a", "b"), threads=2)
        assert again == rec
        assert len(cache) == len(np.unique(Xp, axis=0)) + len(np.unique(Xm, axis=0))

    def test_needs_two_per_group(self):
        with pytest.raises(DomainError):
            evaluate_loo(np.zeros((1, 2)), np.zeros((3, 2)))

    def test_record_json(self):
        rec = PerformanceRecord.of(1, 0.5, "leave-one-out", 10, 1)
        assert rec.perf == 0.75
        assert rec.to_json()["failed_folds"] == 1
        assert "folds" not in PerformanceRecord.of(1, 1, "training").to_json()


class TestDiagnostics:
    def test_margin_brute_force(self, rng):
        for _ in range(20):
            f = rng.normal(size=30).round(1)
            probs = rng.dirichlet(np.ones(30))
            gamma = 0.1
            q = separator_margin(f, probs, gamma)
            p = probs[f > 0].sum()
            cand = sorted(set(np.abs(f[f != 0])))
            # q is the smallest candidate at which the open band reaches past its budget
            def ok(t):
                return (probs[(f > 0) & (f <= t)].sum() <= gamma * p
                        and probs[(f < 0) & (f >= -t)].sum() <= gamma * (1 - p))
            first_bad = next((t for t in cand if not ok(t)), math.inf)
            assert q == first_bad

    def test_bound_reference_value(self):
        assert sample_size_bound(0.5, 3, 1.0, 0.05) == 376
        assert sample_size_bound(100.0, 1, 0.0) == 50
        with pytest.raises(DomainError):
            sample_size_bound(0.0, 1, 1.0)

    def test_bound_formula(self):
        q, k, lam, kappa = 0.3, 6, 0.7, 0.1
        R, Q = stats.norm.ppf(1 - kappa), stats.chi2.ppf(1 - kappa, k)
        assert sample_size_bound(q, k, lam, kappa) == math.ceil(max(50, 4 * R / q**2, 4 * k * lam * Q / q**2))

    def test_diagnostics_embed_union(self, rng):
        d = 4
        tp = ParamVector.from_dicts(d, {0: 0.5}, {(0, 1): -1.0})
        tm = ParamVector.from_dicts(d, {1: 0.5}, {(2, 3): -1.0})
        gp, gm = np.eye(5), 2 * np.eye(5)
        diag = separator_error_diagnostics(tp, tm, gp, gm)
        assert diag.coords == [0, 1, 2, 3, (0, 1), (2, 3)]
        np.testing.assert_allclose(np.diag(diag.cov), [3, 3, 3, 3, 1, 2])
        assert diag.k == 10 and diag.var_bound == pytest.approx(10 * 15)
        assert diag.lambda1 == pytest.approx(3.0)
        assert diag.q > 0 and diag.sample_size() >= 50

    def test_large_d_skips_q(self):
        t = ParamVector.zeros(11)
        diag = separator_error_diagnostics(t, t, np.eye(11), np.eye(11))
        assert diag.q is None and diag.notes
        assert diag.to_json()["q"] == "not computed"

    def test_shape_checked(self):
        t = ParamVector.zeros(2)
        with pytest.raises(DomainError):
            separator_error_diagnostics(t, t, np.eye(3), np.eye(2))
