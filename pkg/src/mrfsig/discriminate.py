"""Separators between two autologistic models: ideal, estimated, evaluated.

A separator is the affine rule ``f(x) = <u, U(x)> + intercept`` and decides
G+ when ``f(x) > 0`` and G- when ``f(x) < 0``.  Ties are errors for both
groups.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainError, MRFError
from .gibbs_core import (
    AutologisticModel,
    ParamVector,
    all_configs,
    energy,
    exact_probabilities,
)
from .mple import MpleConfig, fit_dataset
from .spectra_io import BinaryDataset

logger = logging.getLogger(__name__)

DIAGNOSTIC_MAX_D = 10


def _vectors(data):
    X = data.vectors if isinstance(data, BinaryDataset) else np.asarray(data, dtype=np.uint8)
    return X.reshape(-1, X.shape[-1]) if X.ndim == 1 else X


def _theta(obj):
    return obj.theta if isinstance(obj, AutologisticModel) else obj


def _coord_key(c):
    return f"{c[0]},{c[1]}" if isinstance(c, tuple) else str(c)


@dataclass(frozen=True, eq=False)
class Separator:
    """``f(x) = <u, U(x)> + intercept``.

    For the estimated form ``u = beta * theta_minus - theta_plus``.  When the
    regression came out with a non-negative ``w+`` coefficient the raw
    direction is kept, ``plus_coef`` records it and ``flags`` says so.
    """

    u: ParamVector
    beta: float
    intercept: float
    form: str
    plus_coef: float = -1.0
    flags: tuple = ()

    @property
    def d(self):
        return self.u.d

    def value(self, x):
        return energy(self.u, x) + self.intercept

    def decide(self, x):
        """+1, -1 or 0 (tie) per vector."""
        return np.sign(self.value(x))

    def to_json(self):
        u = {_coord_key(c): float(v) for c, v in zip(self.u.coords, self.u.flat) if v != 0.0}
        return {
            "d": self.d,
            "u": u,
            "beta": float(self.beta),
            "intercept": float(self.intercept),
            "form": self.form,
            "plus_coef": float(self.plus_coef),
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, obj):
        d = int(obj["d"])
        singles, pairs = {}, {}
        for k, v in obj["u"].items():
            if "," in k:
                pairs[tuple(int(i) for i in k.split(","))] = float(v)
            else:
                singles[int(k)] = float(v)
        return cls(ParamVector.from_dicts(d, singles, pairs), float(obj["beta"]),
                   float(obj["intercept"]), obj["form"], float(obj.get("plus_coef", -1.0)),
                   tuple(obj.get("flags", ())))


@dataclass(frozen=True)
class PlanarPoint:
    w_plus: float
    w_minus: float
    label: int = 0


@dataclass(frozen=True)
class PerformanceRecord:
    p_plus: float
    p_minus: float
    perf: float
    method: str
    folds: int = 0
    failed_folds: int = 0

    @classmethod
    def of(cls, p_plus, p_minus, method, folds=0, failed_folds=0):
        return cls(float(p_plus), float(p_minus), 0.5 * (float(p_plus) + float(p_minus)),
                   method, int(folds), int(failed_folds))

    def to_json(self):
        out = {"p_plus": self.p_plus, "p_minus": self.p_minus, "perf": self.perf, "method": self.method}
        if self.method == "leave-one-out":
            out.update(folds=self.folds, failed_folds=self.failed_folds)
        return out


def ideal_separator(p, q):
    """Bayes rule between ``p`` (G+) and ``q`` (G-) with equal priors."""
    if p.d != q.d:
        raise DomainError(f"dimension mismatch: {p.d} vs {q.d}")
    return Separator(q.theta - p.theta, 1.0, float(q.log_z - p.log_z), "ideal")


def planar_recode(x, theta_plus, theta_minus, label=0):
    """``W(x) = (<theta+, U(x)>, <theta-, U(x)>)``; batches give an ``(m, 2)`` array."""
    tp, tm = _theta(theta_plus), _theta(theta_minus)
    if tp.d != tm.d:
        raise DomainError(f"dimension mismatch: {tp.d} vs {tm.d}")
    x = np.asarray(x, dtype=np.uint8)
    if x.ndim == 1:
        return PlanarPoint(energy(tp, x), energy(tm, x), int(label))
    return np.column_stack([energy(tp, x), energy(tm, x)])


def estimate_separator(bg_plus, bg_minus, theta_plus, theta_minus,
                       n_samples=10_000, seed=0):
    """Least-squares regression of +/-1 labels on ``(w+, w-, 1)``, normalised to ``-w+``."""
    Xp, Xm = _vectors(bg_plus), _vectors(bg_minus)
    if Xp.shape[0] == 0 or Xm.shape[0] == 0:
        raise DomainError("both groups must be nonempty")
    if Xp.shape[1] != Xm.shape[1]:
        raise DomainError("groups disagree on d")
    tp, tm = _theta(theta_plus), _theta(theta_minus)
    W = np.vstack([planar_recode(Xp, tp, tm), planar_recode(Xm, tp, tm)])
    y = np.concatenate([np.ones(Xp.shape[0]), -np.ones(Xm.shape[0])])
    A = np.column_stack([W, np.ones(W.shape[0])])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    c1, c2, c0 = (float(c) for c in coef)
    if rank < 3:
        logger.info("planar clouds are collinear (rank %d); using the ideal form", rank)
        mp = AutologisticModel.from_theta(tp, n_samples=n_samples, seed=seed)
        mm = AutologisticModel.from_theta(tm, n_samples=n_samples, seed=seed)
        sep = ideal_separator(mp, mm)
        return Separator(sep.u, 1.0, sep.intercept, "ideal", flags=("collinear-fallback",))
    if c1 < 0:
        beta = -c2 / c1
        return Separator(beta * tm - tp, beta, -c0 / c1, "estimated")
    logger.warning("regression gave a non-negative w+ coefficient (%.3g); keeping raw direction", c1)
    return Separator(c2 * tm + c1 * tp, c2, c0, "estimated", c1,
                     ("non-negative-plus-coefficient",))


def evaluate_training(sep, bg_plus, bg_minus):
    """Resubstitution frequencies of correct decisions; ties count as errors."""
    fp = np.atleast_1d(sep.value(_vectors(bg_plus)))
    fm = np.atleast_1d(sep.value(_vectors(bg_minus)))
    return PerformanceRecord.of(np.mean(fp > 0), np.mean(fm < 0), "training")


def exact_performance(sep, p, q):
    """``p+ = pi+(f > 0)``, ``p- = pi-(f < 0)`` by enumeration."""
    X, pp = exact_probabilities(p)
    _, pq = exact_probabilities(q)
    f = sep.value(X)
    return PerformanceRecord.of(pp[f > 0].sum(), pq[f < 0].sum(), "exact")


def _fit_theta(data, cliques, config):
    return fit_dataset(data, cliques, config).theta_hat


def evaluate_loo(bg_plus, bg_minus, cliques_plus=(), cliques_minus=(), config=MpleConfig(),
                 theta_plus=None, theta_minus=None, threads=1, fold_cache=None, cache_keys=(None, None)):
    """Leave-one-out: refit the held-out group's theta, re-estimate the separator, classify.

    Vectors sharing a pattern give identical folds, so each distinct pattern
    is evaluated once and weighted by its multiplicity.  A fold whose refit
    fails counts as an error.

    ``fold_cache`` (a dict) memoises refits under ``(cache_key, pattern)``;
    callers sharing it must give equal keys only to identical group problems.
    """
    Xp, Xm = _vectors(bg_plus), _vectors(bg_minus)
    if Xp.shape[0] < 2 or Xm.shape[0] < 2:
        raise DomainError("leave-one-out needs at least 2 vectors per group")
    if theta_plus is None:
        theta_plus = _fit_theta(Xp, cliques_plus, config)
    if theta_minus is None:
        theta_minus = _fit_theta(Xm, cliques_minus, config)
    tp, tm = _theta(theta_plus), _theta(theta_minus)

    jobs = []
    for sign, X in ((1, Xp), (-1, Xm)):
        _, first, counts = np.unique(X, axis=0, return_index=True, return_counts=True)
        for row, count in zip(first, counts):
            jobs.append((sign, int(row), int(count)))

    def refit(sign, rest, x):
        cliques = cliques_plus if sign > 0 else cliques_minus
        if fold_cache is None:
            return _fit_theta(rest, cliques, config)
        key = (cache_keys[0 if sign > 0 else 1], sign, x.tobytes())
        theta = fold_cache.get(key)
        if theta is None:
            theta = fold_cache.setdefault(key, _fit_theta(rest, cliques, config))
        return theta

    def run(job):
        sign, row, _ = job
        try:
            if sign > 0:
                rest = np.delete(Xp, row, axis=0)
                sep = estimate_separator(rest, Xm, refit(1, rest, Xp[row]), tm)
                return sep.value(Xp[row]) > 0
            rest = np.delete(Xm, row, axis=0)
            sep = estimate_separator(Xp, rest, tp, refit(-1, rest, Xm[row]))
            return sep.value(Xm[row]) < 0
        except MRFError as exc:
            logger.warning("leave-one-out fold (group %+d, row %d) failed: %s", sign, row, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]

    correct = {1: 0, -1: 0}
    failed = 0
    for (sign, _, count), ok in zip(jobs, outcomes):
        if ok is None:
            failed += count
        elif ok:
            correct[sign] += count
    n_p, n_m = Xp.shape[0], Xm.shape[0]
    return PerformanceRecord.of(correct[1] / n_p, correct[-1] / n_m, "leave-one-out", n_p + n_m, failed)


# -- error diagnostics ---------------------------------------------------------

def separator_margin(f, probs, gamma):
    """Largest ``q`` with ``P(0 < f < q) <= gamma p`` and ``P(-q < f < 0) <= gamma (1 - p)``.

    ``p = P(f > 0)``.  Returns ``inf`` when neither constraint ever binds.
    """
    f = np.asarray(f, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    p = probs[f > 0].sum()

    def side(vals, mass, budget):
        if vals.size == 0:
            return math.inf
        uniq, inv = np.unique(vals, return_inverse=True)
        cum = np.cumsum(np.bincount(inv, weights=mass, minlength=uniq.size))
        over = np.flatnonzero(cum > budget)
        return float(uniq[over[0]]) if over.size else math.inf

    pos, neg = f > 0, f < 0
    return min(side(f[pos], probs[pos], gamma * p), side(-f[neg], probs[neg], gamma * (1.0 - p)))


@dataclass(eq=False)
class SeparatorDiagnostics:
    coords: list
    cov: np.ndarray
    k: int
    var_bound: float
    lambda1: float
    gamma: float
    q: float = None
    q_plus: float = None
    q_minus: float = None
    notes: list = field(default_factory=list)

    def sample_size(self, kappa=0.05):
        if self.q is None or not self.q > 0:
            return None
        return sample_size_bound(self.q, self.k, self.lambda1, kappa)

    def to_json(self):
        return {
            "coords": [_coord_key(c) for c in self.coords],
            "cov": self.cov.tolist(),
            "k": self.k,
            "var_bound": self.var_bound,
            "lambda1": self.lambda1,
            "gamma": self.gamma,
            "q": "not computed" if self.q is None else self.q,
            "q_plus": self.q_plus,
            "q_minus": self.q_minus,
            "notes": list(self.notes),
        }


def _embed(theta, gamma, index):
    coords = [c for c in theta.coords if c not in theta.mask]
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (len(coords), len(coords)):
        raise DomainError(f"covariance shape {gamma.shape} does not match {len(coords)} active coordinates")
    out = np.zeros((len(index), len(index)))
    pos = [index[c] for c in coords]
    out[np.ix_(pos, pos)] = gamma
    return out


def separator_error_diagnostics(theta_plus, theta_minus, gamma_plus, gamma_minus,
                                gamma=0.05, max_d=DIAGNOSTIC_MAX_D):
    """Covariance of the separator direction, variance bound on the intercept, margin ``q``.

    ``gamma_plus``/``gamma_minus`` are the sandwich covariances over the
    non-masked coordinates of each parameter, in its coordinate order.
    """
    if gamma_plus is None or gamma_minus is None:
        raise DomainError("both covariance matrices are required")
    tp, tm = _theta(theta_plus), _theta(theta_minus)
    if tp.d != tm.d:
        raise DomainError(f"dimension mismatch: {tp.d} vs {tm.d}")
    d = tp.d
    pairs = sorted(set(tp.pairs) | set(tm.pairs))
    coords = list(range(d)) + pairs
    index = {c: i for i, c in enumerate(coords)}
    cov = _embed(tp, gamma_plus, index) + _embed(tm, gamma_minus, index)
    k = d * (d + 1) // 2
    lam = float(np.linalg.eigvalsh(0.5 * (cov + cov.T)).max(initial=0.0)) if cov.size else 0.0
    diag = SeparatorDiagnostics(coords, cov, k, float(k * np.trace(cov)), max(lam, 0.0), float(gamma))
    if d > max_d:
        diag.notes.append(f"q not computed for d={d} > {max_d}")
        return diag
    mp, mm = AutologisticModel.from_theta(tp), AutologisticModel.from_theta(tm)
    sep = ideal_separator(mp, mm)
    X = all_configs(d)
    f = sep.value(X)
    _, pp = exact_probabilities(mp)
    _, pm = exact_probabilities(mm)
    diag.q_plus = separator_margin(f, pp, gamma)
    diag.q_minus = separator_margin(f, pm, gamma)
    diag.q = min(diag.q_plus, diag.q_minus)
    return diag


def sample_size_bound(q, k, lambda1, kappa=0.05):
    """``N = ceil(max(50, 4 R / q^2, 4 k lambda1 Q / q^2))`` with normal/chi2 percentiles."""
    if not q > 0:
        raise DomainError("q must be positive")
    if not 0 < kappa < 1:
        raise DomainError("kappa must lie in (0, 1)")
    if k < 1 or lambda1 < 0:
        raise DomainError("k >= 1 and lambda1 >= 0 required")
    R = stats.norm.ppf(1.0 - kappa)
    Q = stats.chi2.ppf(1.0 - kappa, k)
    return int(math.ceil(max(50.0, 4.0 * R / q**2, 4.0 * k * lambda1 * Q / q**2)))
