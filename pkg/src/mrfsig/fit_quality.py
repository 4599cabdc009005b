"""Goodness of fit: rank of the observed log-likelihood among simulated replicas."""
import math
from dataclasses import dataclass

import numpy as np

from .gibbs_core import DEFAULT_BURN_IN, DEFAULT_THIN, log_prob, sample_vectors
from .spectra_io import BinaryDataset

DEFAULT_REPLICAS = 1000


@dataclass(eq=False)
class FitQualityReport:
    ll_observed: float
    ll_simulated: np.ndarray
    quantile_q: float
    z_stat: float
    n: int

    def histogram(self, bins=30):
        counts, edges = np.histogram(self.ll_simulated, bins=bins)
        return edges, counts

    def to_json(self, bins=30):
        edges, counts = self.histogram(bins)
        return {
            "ll_observed": float(self.ll_observed),
            "quantile_q": float(self.quantile_q),
            "z_stat": float(self.z_stat),
            "n": self.n,
            "replicas": int(len(self.ll_simulated)),
            "histogram": {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
        }


def quality_of_fit(model, dataset, replicas=DEFAULT_REPLICAS, seed=0,
                   burn_in=DEFAULT_BURN_IN, thin=DEFAULT_THIN):
    """Quantile ``Q`` of the data log-likelihood among ``replicas`` Gibbs-simulated datasets.

    Replica ``r`` uses seed ``seed + r``.  The rank counts simulated values
    strictly below the observed one, plus one, capped at ``replicas``.
    """
    X = dataset.vectors if isinstance(dataset, BinaryDataset) else np.asarray(dataset, dtype=np.uint8)
    n = X.shape[0]
    if n < 1 or replicas < 1:
        raise ValueError("need a nonempty dataset and at least one replica")
    ll_obs = float(np.sum(log_prob(model, X)))
    sims = np.empty(replicas)
    for r in range(replicas):
        Y = sample_vectors(model.theta, n, burn_in, thin, seed + r)
        sims[r] = np.sum(log_prob(model, Y))
    rank = min(int(np.sum(sims < ll_obs)) + 1, replicas)
    q = rank / replicas
    return FitQualityReport(ll_obs, sims, q, math.sqrt(n) * (q - 0.5), n)
