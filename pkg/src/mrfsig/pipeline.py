"""Signature discovery: site selection, clique discovery, dimension grid, scores."""
import csv
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import stats

from .discriminate import (
    PerformanceRecord,
    Separator,
    estimate_separator,
    evaluate_loo,
    evaluate_training,
)
from .errors import DomainError, InsufficientFeaturesError
from .gibbs_core import DEFAULT_Z_SAMPLES, AutologisticModel, ParamVector, nor_kl
from .mple import MpleConfig, PseudoLikelihoodContext, fit_and_prune
from .spectra_io import BinaryDataset, PeakSpectrum, restrict

logger = logging.getLogger(__name__)

DEFAULT_THR = 0.2
DEFAULT_H = 10
DEFAULT_CHI2_THRESHOLD = 3.84
DEFAULT_LOO_MARGIN = 0.08
DEFAULT_CLIQUE_CAP = 6


@dataclass(frozen=True)
class PipelineConfig:
    thr: float = DEFAULT_THR
    presence: str = "min"  # site kept when min (or max) of the two frequencies reaches thr
    H: int = DEFAULT_H
    chi2_threshold: float = DEFAULT_CHI2_THRESHOLD
    loo_margin: float = DEFAULT_LOO_MARGIN
    clique_cap: int = DEFAULT_CLIQUE_CAP
    loo: bool = True
    mple: MpleConfig = MpleConfig()
    z_samples: int = DEFAULT_Z_SAMPLES
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.thr < 1.0:
            raise DomainError("thr must lie in (0, 1)")
        if self.presence not in ("min", "max"):
            raise DomainError("presence must be 'min' or 'max'")
        if self.H < 1 or self.clique_cap < 0:
            raise DomainError("H >= 1 and clique_cap >= 0 required")


class DimQuad(NamedTuple):
    d_plus: int
    c_plus: int
    d_minus: int
    c_minus: int

    @property
    def d(self):
        return self.d_plus + self.d_minus

    @classmethod
    def parse(cls, text):
        parts = [int(p) for p in str(text).replace(";", ",").split(",")]
        if len(parts) != 4:
            raise DomainError(f"dimension quadruplet needs 4 integers, got {text!r}")
        dq = cls(*parts)
        if dq.d_plus < 1 or dq.d_minus < 1 or dq.c_plus < 0 or dq.c_minus < 0:
            raise DomainError(f"invalid quadruplet {dq}")
        return dq

    def __str__(self):
        return f"({self.d_plus},{self.c_plus};{self.d_minus},{self.c_minus})"


@dataclass(frozen=True)
class SiteStats:
    site: int
    m_plus: float
    m_minus: float
    dp: float


@dataclass(frozen=True)
class CliqueCandidate:
    pair: tuple
    chi2: float


# -- selection -------------------------------------------------------------------

def site_stats(bin_plus, bin_minus):
    if not np.array_equal(bin_plus.site_index, bin_minus.site_index):
        raise DomainError("groups must share the same sites")
    mp, mm = bin_plus.frequencies(), bin_minus.frequencies()
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = mp / mm
    return [SiteStats(int(s), float(a), float(b), float(r))
            for s, a, b, r in zip(bin_plus.site_index, mp, mm, dp)]


def frequent_sites(stats_, thr, presence="min"):
    """``S-hat``: sites whose min (or max) group frequency reaches ``thr``."""
    pick = min if presence == "min" else max
    return [st for st in stats_ if pick(st.m_plus, st.m_minus) >= thr]


@dataclass(frozen=True)
class Selection:
    """Ranked frequent sites; ``plus_order`` by DP descending, ``minus_order`` ascending."""

    stats: dict
    plus_order: tuple
    minus_order: tuple
    non_discriminative: bool

    @property
    def size(self):
        return len(self.plus_order)

    def plus_sites(self, d_plus):
        return self.plus_order[:d_plus]

    def minus_sites(self, d_plus, d_minus):
        taken = set(self.plus_order[:d_plus])
        return tuple(s for s in self.minus_order if s not in taken)[:d_minus]

    def pools(self, H):
        return self.plus_order[:H], self.minus_order[:H]


def rank_sites(bin_plus, bin_minus, thr=DEFAULT_THR, presence="min"):
    kept = frequent_sites(site_stats(bin_plus, bin_minus), thr, presence)
    plus = tuple(st.site for st in sorted(kept, key=lambda st: (-st.dp, st.site)))
    minus = tuple(st.site for st in sorted(kept, key=lambda st: (st.dp, st.site)))
    flat = len({st.dp for st in kept}) <= 1
    if flat and kept:
        logger.warning("all selected sites have the same discriminating power; selection is by index only")
    return Selection({st.site: st for st in kept}, plus, minus, flat)


def feature_select(bin_plus, bin_minus, thr, H, dq, presence="min"):
    """``(G+ sites, G- sites)`` for ``dq``, in original site numbers."""
    if dq.d_plus > H or dq.d_minus > H:
        raise DomainError(f"{dq} exceeds H={H}")
    sel = rank_sites(bin_plus, bin_minus, thr, presence)
    _check_size(sel, dq)
    return sel.plus_sites(dq.d_plus), sel.minus_sites(dq.d_plus, dq.d_minus)


def _check_size(sel, dq):
    if sel.size < dq.d_plus + dq.d_minus:
        raise InsufficientFeaturesError(
            f"only {sel.size} frequent sites for d+={dq.d_plus}, d-={dq.d_minus}")


# -- cliques -----------------------------------------------------------------------

def chi2_matrix(X):
    """Pearson chi-square (1 dof, no continuity correction) for every column pair.

    Uses ``n11 n00 - n10 n01 = n n11 - c_s c_t``; pairs with an empty margin get 0.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    c = X.sum(axis=0)
    num = n * (n * (X.T @ X) - np.outer(c, c)) ** 2
    den = np.outer(c * (n - c), c * (n - c))
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    np.fill_diagonal(out, 0.0)
    return out


def chi2_pair(x, y):
    return float(chi2_matrix(np.column_stack([x, y]))[0, 1])


def potential_cliques(bg, group_sites, threshold=DEFAULT_CHI2_THRESHOLD):
    """All pairs of ``group_sites`` with chi2 above ``threshold``, best first."""
    group_sites = [int(s) for s in group_sites]
    chi = chi2_matrix(restrict(bg, group_sites).vectors)
    out = []
    for a in range(len(group_sites)):
        for b in range(a + 1, len(group_sites)):
            if chi[a, b] > threshold:
                out.append(CliqueCandidate(tuple(sorted((group_sites[a], group_sites[b]))), float(chi[a, b])))
    out.sort(key=lambda c: (-c.chi2, c.pair))
    return out


def discover_cliques(bg, group_sites, c, chi2_threshold=DEFAULT_CHI2_THRESHOLD):
    if c < 0:
        raise DomainError("c must be >= 0")
    ptc = potential_cliques(bg, group_sites, chi2_threshold)
    if c > len(ptc):
        logger.info("requested %d cliques but only %d pass chi2 > %g", c, len(ptc), chi2_threshold)
    return ptc[:c]


# -- fitting -----------------------------------------------------------------------

@dataclass(eq=False)
class PairFit:
    dim: DimQuad
    sites: tuple
    cliques_plus: list
    cliques_minus: list
    fit_plus: object
    fit_minus: object
    separator: Separator
    training: PerformanceRecord
    loo: PerformanceRecord = None

    @property
    def local_cliques_plus(self):
        return _local_pairs(self.sites, self.cliques_plus)

    @property
    def local_cliques_minus(self):
        return _local_pairs(self.sites, self.cliques_minus)


def _local_pairs(sites, cliques):
    pos = {s: i for i, s in enumerate(sites)}
    return [(pos[c.pair[0]], pos[c.pair[1]]) for c in cliques]


class _Problem:
    """Shared state of one discrimination task; memoises the per-group fits."""

    def __init__(self, bin_plus, bin_minus, config):
        self.bin_plus, self.bin_minus, self.config = bin_plus, bin_minus, config
        self.sel = rank_sites(bin_plus, bin_minus, config.thr, config.presence)
        frequent = sorted(self.sel.stats)
        self._col = {s: k for k, s in enumerate(frequent)}
        fp = restrict(bin_plus, frequent).vectors if frequent else np.zeros((bin_plus.n, 0))
        fm = restrict(bin_minus, frequent).vectors if frequent else np.zeros((bin_minus.n, 0))
        self._chi_plus, self._chi_minus = chi2_matrix(fp), chi2_matrix(fm)
        self._fits = {}
        self._folds = {}
        self._lock = threading.Lock()

    def _ptc(self, chi, sites):
        thr = self.config.chi2_threshold
        out = []
        for a in range(len(sites)):
            for b in range(a + 1, len(sites)):
                v = float(chi[self._col[sites[a]], self._col[sites[b]]])
                if v > thr:
                    out.append(CliqueCandidate(tuple(sorted((sites[a], sites[b]))), v))
        out.sort(key=lambda c: (-c.chi2, c.pair))
        return out

    def ptc_plus(self, d_plus):
        return self._ptc(self._chi_plus, self.sel.plus_sites(d_plus))

    def ptc_minus(self, d_plus, d_minus):
        return self._ptc(self._chi_minus, self.sel.minus_sites(d_plus, d_minus))

    def sites(self, d_plus, d_minus):
        return self.sel.plus_sites(d_plus) + self.sel.minus_sites(d_plus, d_minus)

    def dims(self):
        H, cap, n = self.config.H, self.config.clique_cap, self.sel.size
        out = []
        for dp in range(1, min(H, n) + 1):
            kp = min(len(self.ptc_plus(dp)), cap)
            for dm in range(1, min(H, n - dp) + 1):
                km = min(len(self.ptc_minus(dp, dm)), cap)
                out.extend(DimQuad(dp, cp, dm, cm) for cp in range(kp + 1) for cm in range(km + 1))
        return out

    def group_fit(self, sign, dp, dm, c):
        key = (sign, dp, dm, c)
        with self._lock:
            hit = self._fits.get(key)
        if hit is not None:
            return hit
        sites = self.sites(dp, dm)
        if sign > 0:
            cliques = self.ptc_plus(dp)[:c]
            data = restrict(self.bin_plus, sites)
        else:
            cliques = self.ptc_minus(dp, dm)[:c]
            data = restrict(self.bin_minus, sites)
        cfg = self.config.mple
        ctx = PseudoLikelihoodContext.build(data, _local_pairs(sites, cliques))
        result = fit_and_prune(ctx, cfg.level, cfg.prune, **cfg.fit_kw())
        with self._lock:
            self._fits.setdefault(key, (cliques, result))
            return self._fits[key]

    def fit_pair(self, dim):
        _check_size(self.sel, dim)
        sites = self.sites(dim.d_plus, dim.d_minus)
        cl_p, rp = self.group_fit(1, dim.d_plus, dim.d_minus, dim.c_plus)
        cl_m, rm = self.group_fit(-1, dim.d_plus, dim.d_minus, dim.c_minus)
        bp, bm = restrict(self.bin_plus, sites), restrict(self.bin_minus, sites)
        sep = estimate_separator(bp, bm, rp.theta_hat, rm.theta_hat,
                                 self.config.z_samples, _dim_seed(self.config.seed, dim))
        return PairFit(dim, sites, cl_p, cl_m, rp, rm, sep, evaluate_training(sep, bp, bm))

    def loo(self, pf):
        bp, bm = restrict(self.bin_plus, pf.sites), restrict(self.bin_minus, pf.sites)
        dim = pf.dim
        keys = ((dim.d_plus, dim.d_minus, dim.c_plus), (dim.d_plus, dim.d_minus, dim.c_minus))
        return evaluate_loo(bp, bm, pf.local_cliques_plus, pf.local_cliques_minus, self.config.mple,
                            pf.fit_plus.theta_hat, pf.fit_minus.theta_hat,
                            fold_cache=self._folds, cache_keys=keys)


def _dim_seed(seed, dim):
    return int(np.random.SeedSequence([int(seed), *dim]).generate_state(1)[0])


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def fit_pair(bin_plus, bin_minus, dq, config=PipelineConfig()):
    """Select sites and cliques for ``dq``, fit both models, estimate the separator."""
    if dq.d_plus > config.H or dq.d_minus > config.H:
        config = replace(config, H=max(dq.d_plus, dq.d_minus))
    problem = _Problem(bin_plus, bin_minus, config)
    pf = problem.fit_pair(dq)
    if dq.c_plus > len(pf.cliques_plus) or dq.c_minus > len(pf.cliques_minus):
        logger.info("clique counts truncated to the potential cliques available: %s", dq)
    return pf


def dim_key(dim):
    return (dim.d_plus + dim.d_minus, dim.c_plus + dim.c_minus, tuple(dim))


@dataclass(eq=False)
class GridResult:
    dim_opt: DimQuad
    signature: "Signature"
    best: PairFit
    stage1: list
    stage2: list
    clique_cap: int


def grid_search(bin_plus, bin_minus, H=None, config=PipelineConfig(), dims=None):
    """Training performance over ``D(H)``, then leave-one-out on the near-best dims."""
    if H is not None:
        config = replace(config, H=H)
    problem = _Problem(bin_plus, bin_minus, config)
    dims = problem.dims() if dims is None else [DimQuad(*d) for d in dims]
    if not dims:
        raise DomainError("D(H) is empty: not enough frequent sites")
    logger.info("grid search over %d quadruplets", len(dims))
    # warm both per-group caches first so threads do not duplicate fits
    plus_keys = sorted({(d.d_plus, d.d_minus, d.c_plus) for d in dims})
    minus_keys = sorted({(d.d_plus, d.d_minus, d.c_minus) for d in dims})
    _map(lambda k: problem.group_fit(1, *k), plus_keys, config.threads)
    _map(lambda k: problem.group_fit(-1, *k), minus_keys, config.threads)
    stage1 = _map(problem.fit_pair, dims, config.threads)

    best_train = max(pf.training.perf for pf in stage1)
    if config.loo:
        stage2 = [pf for pf in stage1 if pf.training.perf > best_train - config.loo_margin]
        loos = _map(problem.loo, stage2, config.threads)
        for pf, rec in zip(stage2, loos):
            pf.loo = rec
        best = min(stage2, key=lambda pf: (-pf.loo.perf, dim_key(pf.dim)))
    else:
        stage2 = []
        best = min(stage1, key=lambda pf: (-pf.training.perf, dim_key(pf.dim)))
    sig = build_signature(best, bin_plus, problem)
    return GridResult(best.dim, sig, best, stage1, stage2, config.clique_cap)


# -- signatures -----------------------------------------------------------------------

def compute_scores(theta_plus, theta_minus, beta, intercept):
    """``SCO = beta * theta- - theta+`` over the union support, with the separator intercept."""
    return float(beta) * theta_minus - theta_plus, float(intercept)


@dataclass(eq=False)
class Signature:
    dim: DimQuad
    beta: float
    intercept: float
    rho: float
    biomarkers: list
    cliques: list
    perf: PerformanceRecord
    training: PerformanceRecord = None
    flags: tuple = ()

    @property
    def sites(self):
        return [b["site"] for b in self.biomarkers]

    def score_vector(self):
        """Scores as a ParamVector over the signature's local coordinates."""
        pos = {s: i for i, s in enumerate(self.sites)}
        singles = {i: b["score"] for i, b in enumerate(self.biomarkers)}
        pairs = {(pos[c["s"]], pos[c["t"]]): c["score"] for c in self.cliques}
        return ParamVector.from_dicts(len(self.sites), singles, pairs)

    def tsco(self, x):
        x = np.asarray(x)
        if x.shape != (len(self.biomarkers),):
            raise DomainError(f"expected a vector over {len(self.biomarkers)} signature sites")
        pos = {s: i for i, s in enumerate(self.sites)}
        total = self.intercept
        for i, b in enumerate(self.biomarkers):
            if x[i]:
                total += b["score"]
        for c in self.cliques:
            if x[pos[c["s"]]] and x[pos[c["t"]]]:
                total += c["score"]
        return float(total)

    def to_json(self):
        return {
            "dim": list(self.dim),
            "beta": self.beta,
            "intercept": self.intercept,
            "rho": None if not math.isfinite(self.rho) else self.rho,
            "biomarkers": self.biomarkers,
            "cliques": self.cliques,
            "perf": self.perf.to_json(),
            "training": None if self.training is None else self.training.to_json(),
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, obj):
        def rec(o):
            return None if o is None else PerformanceRecord(
                float(o["p_plus"]), float(o["p_minus"]), float(o["perf"]), o["method"],
                int(o.get("folds", 0)), int(o.get("failed_folds", 0)))

        try:
            rho = obj.get("rho")
            return cls(DimQuad(*[int(v) for v in obj["dim"]]), float(obj["beta"]), float(obj["intercept"]),
                       float("nan") if rho is None else float(rho),
                       [dict(b) for b in obj["biomarkers"]], [dict(c) for c in obj["cliques"]],
                       rec(obj["perf"]), rec(obj.get("training")), tuple(obj.get("flags", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed signature: {exc}") from None


def _ci(result, coord):
    ci = result.ci.get(coord)
    return None if ci is None else [float(ci[0]), float(ci[1])]


def build_signature(pf, bin_plus, problem=None):
    """Tables of biomarkers and cliques with their parameters, intervals and scores."""
    sep = pf.separator
    tp, tm = pf.fit_plus.theta_hat, pf.fit_minus.theta_hat
    u = sep.u
    mz = dict(zip(bin_plus.site_index.tolist(), bin_plus.mz.tolist()))
    n_plus = pf.dim.d_plus
    stats_ = problem.sel.stats if problem is not None else {}
    biomarkers = []
    for i, s in enumerate(pf.sites):
        st = stats_.get(s)
        biomarkers.append({
            "site": int(s),
            "mz": float(mz[s]),
            "group": "+" if i < n_plus else "-",
            "m_plus": None if st is None else st.m_plus,
            "m_minus": None if st is None else st.m_minus,
            "theta_plus": tp[i],
            "theta_minus": tm[i],
            "ci_plus": _ci(pf.fit_plus, i),
            "ci_minus": _ci(pf.fit_minus, i),
            "score": u[i],
        })
    pos = {s: i for i, s in enumerate(pf.sites)}
    cliques = []
    for sign, group in ((1, pf.cliques_plus), (-1, pf.cliques_minus)):
        for c in group:
            key = tuple(sorted((pos[c.pair[0]], pos[c.pair[1]])))
            cliques.append({
                "s": int(c.pair[0]),
                "t": int(c.pair[1]),
                "group": "+" if sign > 0 else "-",
                "chi2": c.chi2,
                "theta_plus": tp[key],
                "theta_minus": tm[key],
                "ci_plus": _ci(pf.fit_plus, key),
                "ci_minus": _ci(pf.fit_minus, key),
                "score": u[key],
            })
    perf = pf.loo if pf.loo is not None else pf.training
    return Signature(pf.dim, sep.beta, sep.intercept, float(bin_plus.rho), biomarkers, cliques,
                     perf, pf.training, sep.flags)


def signature_vector(signature, item):
    """Restrict a spectrum, a full-grid vector set or a signature-length vector."""
    if isinstance(item, PeakSpectrum):
        rho = signature.rho
        if not (rho > 0):
            raise DomainError("signature has no rho; cannot binarize peak lists")
        peaks = np.asarray(item.peaks)
        x = np.zeros(len(signature.biomarkers), dtype=np.uint8)
        for i, b in enumerate(signature.biomarkers):
            lo, hi = b["mz"] - rho * b["mz"], b["mz"] + rho * b["mz"]
            x[i] = np.any((peaks >= lo) & (peaks <= hi))
        return x
    if isinstance(item, BinaryDataset):
        return restrict(item, signature.sites).vectors
    return np.asarray(item, dtype=np.uint8)


def classify(signature, item):
    """``(label, tsco)``; label is ``"+"`` when TSCO > 0, else ``"-"``."""
    x = signature_vector(signature, item)
    if x.ndim == 2:
        return [classify(signature, row) for row in x]
    t = signature.tsco(x)
    return ("+" if t > 0 else "-"), t


# -- Kullback-Leibler scan -----------------------------------------------------------

@dataclass(frozen=True)
class ScanRow:
    dim: DimQuad
    perf: float
    norkl: float


def kl_scan(bin_plus, bin_minus, H=None, config=PipelineConfig(), pair_fits=None):
    """Training performance and normalised KL for every quadruplet."""
    if pair_fits is None:
        cfg = replace(config, loo=False) if H is None else replace(config, loo=False, H=H)
        problem = _Problem(bin_plus, bin_minus, cfg)
        pair_fits = _map(problem.fit_pair, problem.dims(), cfg.threads)

    def row(pf):
        seed = _dim_seed(config.seed, pf.dim)
        kl = nor_kl(pf.fit_plus.theta_hat, pf.fit_minus.theta_hat, pf.dim.d_plus, pf.dim.d_minus,
                    n_samples=config.z_samples, seed=seed)
        return ScanRow(pf.dim, pf.training.perf, kl)

    return _map(row, pair_fits, config.threads)


def scan_correlation(rows):
    """Spearman rank correlation between training performance and norKL."""
    if len(rows) < 3:
        return float("nan")
    perf = [r.perf for r in rows]
    kl = [r.norkl for r in rows]
    if len(set(perf)) < 2 or len(set(kl)) < 2:
        return float("nan")
    return float(stats.spearmanr(perf, kl).statistic)


def write_scan_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d_plus", "c_plus", "d_minus", "c_minus", "perf", "norkl"])
        for r in rows:
            w.writerow([*r.dim, format(r.perf, ".17g"), format(r.norkl, ".17g")])


@dataclass(frozen=True)
class ModelPair:
    """Both fitted models of a pair fit, with attached partition functions."""

    plus: AutologisticModel
    minus: AutologisticModel
    meta: dict = field(default_factory=dict)


def fitted_models(pf, z_samples=DEFAULT_Z_SAMPLES, seed=0):
    s = _dim_seed(seed, pf.dim)
    return ModelPair(AutologisticModel.from_theta(pf.fit_plus.theta_hat, n_samples=z_samples, seed=s),
                     AutologisticModel.from_theta(pf.fit_minus.theta_hat, n_samples=z_samples, seed=s + 1))
