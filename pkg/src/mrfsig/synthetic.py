"""Planted two-group problems with known autologistic structure, for tests and benchmarks."""
from dataclasses import dataclass

import numpy as np

from .discriminate import exact_performance, ideal_separator
from .gibbs_core import AutologisticModel, ParamVector, sample_vectors
from .spectra_io import BinaryDataset


@dataclass(frozen=True, eq=False)
class PlantedPair:
    plus: AutologisticModel
    minus: AutologisticModel
    d_plus: int
    d_minus: int

    @property
    def bayes_perf(self):
        return exact_performance(ideal_separator(self.plus, self.minus), self.plus, self.minus).perf


def planted_pair(d_plus=4, d_minus=3, on=-0.8, off=0.7, coupling=-1.0):
    """G+ sites lead, then G- sites; one clique on the first two sites of each group.

    Under its own model a group's sites have singleton ``on`` (often active)
    and the other group's sites ``off`` (rarely active).
    """
    d = d_plus + d_minus
    plus = {s: (on if s < d_plus else off) for s in range(d)}
    minus = {s: (off if s < d_plus else on) for s in range(d)}
    tp = ParamVector.from_dicts(d, plus, {(0, 1): coupling})
    tm = ParamVector.from_dicts(d, minus, {(d_plus, d_plus + 1): coupling})
    return PlantedPair(AutologisticModel.from_theta(tp), AutologisticModel.from_theta(tm), d_plus, d_minus)


def embed(pair, n, n_sites=200, seed=0, dense_noise=40, dense_rate=0.35, sparse_rate=0.08,
          mz_start=1000.0, rho=0.003):
    """Draw ``n`` vectors per group and scatter the planted sites among noise sites.

    Noise sites are independent Bernoulli with the same rate in both groups;
    ``dense_noise`` of them are frequent enough to survive frequency filtering.
    Returns ``(bin_plus, bin_minus, planted_sites)`` with 1-based site numbers.
    """
    rng = np.random.default_rng(seed)
    d = pair.plus.d
    if n_sites < d + dense_noise:
        raise ValueError("not enough sites for the planted block and the noise")
    planted = np.sort(rng.choice(n_sites, size=d, replace=False))
    rng.shuffle(planted)
    noise_cols = np.setdiff1d(np.arange(n_sites), planted)
    rates = np.full(noise_cols.size, sparse_rate)
    rates[rng.choice(noise_cols.size, size=dense_noise, replace=False)] = dense_rate
    seeds = rng.integers(0, 2**31, size=2)
    groups = []
    for model, s, name in ((pair.plus, seeds[0], "plus"), (pair.minus, seeds[1], "minus")):
        X = np.zeros((n, n_sites), dtype=np.uint8)
        X[:, planted] = sample_vectors(model.theta, n, seed=int(s))
        X[:, noise_cols] = rng.random((n, noise_cols.size)) < rates
        groups.append(X)
    sites = np.arange(1, n_sites + 1)
    mz = mz_start * (1.0 + rho) ** np.arange(n_sites)
    make = lambda X, g: BinaryDataset(X, g, sites, mz, tuple(f"{g}{i}" for i in range(n)), rho)
    return make(groups[0], "plus"), make(groups[1], "minus"), tuple(int(p) + 1 for p in planted)
