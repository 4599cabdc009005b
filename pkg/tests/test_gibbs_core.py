import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_theta
from mrfsig.errors import CapacityError, DomainError
from mrfsig.gibbs_core import (
    AutologisticModel,
    ParamVector,
    all_configs,
    energy,
    exact_probabilities,
    gibbs_sample,
    kl_distance,
    log_partition_exact,
    log_partition_mc,
    log_prob,
    moments,
    nor_kl,
    sample_vectors,
    sufficient_stats,
)


def brute_energy(theta, x):
    e = sum(theta[s] * x[s] for s in range(theta.d))
    return e + sum(theta[p] * x[p[0]] * x[p[1]] for p in theta.pairs)


class TestParamVector:
    def test_pairs_are_canonical(self):
        t = ParamVector.from_dicts(3, {0: 1.0}, {(2, 0): 0.5})
        assert t.pairs == ((0, 2),)
        assert t[2, 0] == t[0, 2] == 0.5
        assert t[1, 2] == 0.0

    def test_mask_must_hold_zero(self):
        with pytest.raises(DomainError):
            ParamVector.from_dicts(2, {0: 1.0}, mask=[0])
        t = ParamVector.from_dicts(2, {1: 1.0}, mask=[0])
        assert t.active.tolist() == [False, True]

    def test_rejects_bad_pairs(self):
        with pytest.raises(DomainError):
            ParamVector.zeros(3, [(1, 1)])
        with pytest.raises(DomainError):
            ParamVector.zeros(3, [(0, 3)])
        with pytest.raises(DomainError):
            ParamVector.zeros(3, [(0, 1), (1, 0)])

    def test_arithmetic_over_union(self):
        a = ParamVector.from_dicts(3, {0: 1.0}, {(0, 1): 2.0})
        b = ParamVector.from_dicts(3, {1: 1.0}, {(1, 2): -1.0})
        c = a - b
        assert set(c.pairs) == {(0, 1), (1, 2)}
        assert c[0] == 1.0 and c[1] == -1.0 and c[1, 2] == 1.0
        assert (2 * a)[0, 1] == 4.0

    def test_json_roundtrip(self, rng):
        t = random_theta(rng, 5, pair_prob=0.5)
        assert ParamVector.from_json(t.to_json()) == t


class TestEnergy:
    def test_matches_brute_force(self, rng):
        for _ in range(20):
            d = int(rng.integers(1, 8))
            t = random_theta(rng, d, pair_prob=0.6)
            X = all_configs(d)
            np.testing.assert_allclose(energy(t, X), [brute_energy(t, x) for x in X], atol=1e-12)

    def test_sufficient_stats_inner_product(self, rng):
        t = random_theta(rng, 5, pair_prob=0.5)
        X = all_configs(5)
        np.testing.assert_allclose(sufficient_stats(X, t.pairs) @ t.flat, energy(t, X), atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            energy(ParamVector.zeros(3), [1, 0])


class TestPartition:
    def test_zero_theta(self):
        assert log_partition_exact(ParamVector.zeros(7)) == pytest.approx(7 * math.log(2), abs=1e-12)

    def test_independent_sites(self):
        t = ParamVector.from_dicts(3, {0: 1.0, 1: -0.5, 2: 0.25})
        expected = sum(math.log1p(math.exp(-v)) for v in (1.0, -0.5, 0.25))
        assert log_partition_exact(t) == pytest.approx(expected, abs=1e-12)

    def test_normalisation(self, rng):
        for d in range(1, 11):
            _, p = exact_probabilities(AutologisticModel.from_theta(random_theta(rng, d)))
            assert abs(p.sum() - 1.0) < 1e-10

    def test_capacity(self):
        with pytest.raises(CapacityError):
            log_partition_exact(ParamVector.zeros(20))

    def test_mc_close(self, rng):
        t = random_theta(rng, 8, -1, 1)
        exact = log_partition_exact(t)
        assert log_partition_mc(t, 100_000, seed=3) == pytest.approx(exact, rel=0.02)

    def test_model_picks_method(self):
        assert AutologisticModel.from_theta(ParamVector.zeros(4)).log_z_method == "exact"
        m = AutologisticModel.from_theta(ParamVector.zeros(4), max_d=3, n_samples=50)
        assert m.log_z_method == "monte-carlo"
        assert m.log_z == pytest.approx(4 * math.log(2))

    def test_log_prob_sums_to_one(self, rng):
        m = AutologisticModel.from_theta(random_theta(rng, 6))
        assert np.exp(log_prob(m, all_configs(6))).sum() == pytest.approx(1.0, abs=1e-12)


class TestGibbs:
    def test_deterministic_by_seed(self, rng):
        t = random_theta(rng, 5)
        assert np.array_equal(sample_vectors(t, 50, seed=9), sample_vectors(t, 50, seed=9))
        assert not np.array_equal(sample_vectors(t, 50, seed=9), sample_vectors(t, 50, seed=10))

    def test_marginals_match_enumeration(self, rng):
        t = random_theta(rng, 5, -1, 1)
        X = sample_vectors(t, 20_000, seed=1)
        X_all, p = exact_probabilities(t)
        np.testing.assert_allclose(X.mean(axis=0), p @ X_all, atol=0.02)
        # pair moment
        exact = p @ (X_all[:, 0] * X_all[:, 1])
        assert (X[:, 0] * X[:, 1]).mean() == pytest.approx(exact, abs=0.02)

    def test_dataset_wrapper(self):
        ds = gibbs_sample(AutologisticModel.from_theta(ParamVector.zeros(3)), 10, seed=0)
        assert ds.vectors.shape == (10, 3)
        assert ds.site_index.tolist() == [1, 2, 3]

    def test_bad_args(self):
        with pytest.raises(DomainError):
            sample_vectors(ParamVector.zeros(2), 0)
        with pytest.raises(DomainError):
            sample_vectors(ParamVector.zeros(2), 3, thin=0)


def definitional_kl(p, q):
    X = all_configs(p.d)
    lp = log_prob(p, X)
    lq = log_prob(q, X)
    return float(np.sum((np.exp(lp) - np.exp(lq)) * (lp - lq)))


class TestKL:
    def test_identity_matches_definition(self, rng):
        for d in (2, 5, 8):
            p = AutologisticModel.from_theta(random_theta(rng, d, pair_prob=0.5))
            q = AutologisticModel.from_theta(random_theta(rng, d, pair_prob=0.5))
            assert kl_distance(p, q) == pytest.approx(definitional_kl(p, q), abs=1e-10)

    def test_zero_on_identical(self, rng):
        t = random_theta(rng, 6)
        assert kl_distance(t, t) == 0.0

    def test_symmetric(self, rng):
        a, b = random_theta(rng, 4), random_theta(rng, 4)
        assert kl_distance(a, b) == pytest.approx(kl_distance(b, a), abs=1e-12)

    def test_nor_kl(self, rng):
        a, b = random_theta(rng, 4), random_theta(rng, 4)
        assert nor_kl(a, b, 1, 3) == pytest.approx(kl_distance(a, b) / 2)
        with pytest.raises(DomainError):
            nor_kl(a, b, 0, 0)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            kl_distance(ParamVector.zeros(2), ParamVector.zeros(3))

    def test_moments_mc_path(self, rng):
        t = random_theta(rng, 4, -1, 1)
        exact = moments(t, t.pairs)
        approx = moments(t, t.pairs, exact_max_d=0, n_samples=20_000, seed=4)
        np.testing.assert_allclose(approx, exact, atol=0.02)

    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_nonnegative(self, d, seed):
        r = np.random.default_rng(seed)
        assert kl_distance(random_theta(r, d), random_theta(r, d)) >= 0.0


def test_all_configs_layout():
    X = all_configs(3)
    assert X.shape == (8, 3)
    assert [tuple(x) for x in X] == [tuple(reversed(b)) for b in itertools.product((0, 1), repeat=3)]
