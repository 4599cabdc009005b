"""Autologistic distributions: energies, partition functions, Gibbs sampling, KL.

Sign convention follows ``pi(x) = exp(-<theta, U(x)>) / Z(theta)``; a positive
singleton parameter therefore makes its site *less* likely to be active.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import CapacityError, DomainError
from .spectra_io import BinaryDataset

EXACT_Z_MAX_D = 16
DEFAULT_Z_SAMPLES = 10_000
DEFAULT_BURN_IN = 100
DEFAULT_THIN = 5


def _pair_key(s, t):
    s, t = int(s), int(t)
    if s == t:
        raise DomainError(f"degenerate pair ({s}, {t})")
    return (s, t) if s < t else (t, s)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Sparse autologistic parameter.

    Coordinates are keyed by ``s`` (singleton) or ``(s, t)`` with ``s < t``
    (pair), 0-based over the ``d`` local sites.  Pairs not listed in
    ``pairs`` are implicitly zero.  ``mask`` lists coordinates pinned at 0.
    """

    d: int
    singles: np.ndarray
    pairs: tuple = ()
    pair_values: np.ndarray = None
    mask: frozenset = frozenset()

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise DomainError("ParamVector needs d >= 1")
        singles = np.array(self.singles, dtype=np.float64).reshape(-1)
        if singles.shape != (d,):
            raise DomainError(f"expected {d} singleton values, got {singles.shape[0]}")
        pairs = tuple(_pair_key(s, t) for s, t in self.pairs)
        if len(set(pairs)) != len(pairs):
            raise DomainError("duplicate pair coordinate")
        if any(t >= d or s < 0 for s, t in pairs):
            raise DomainError("pair index out of range")
        pv = np.zeros(len(pairs)) if self.pair_values is None else np.array(self.pair_values, dtype=np.float64).reshape(-1)
        if pv.shape != (len(pairs),):
            raise DomainError("pair_values must match pairs")
        mask = frozenset(_pair_key(*k) if isinstance(k, tuple) else int(k) for k in self.mask)
        for k in mask:
            if isinstance(k, tuple):
                if k not in pairs:
                    raise DomainError(f"masked pair {k} is not in the support")
                if pv[pairs.index(k)] != 0.0:
                    raise DomainError(f"masked coordinate {k} must be 0")
            elif not 0 <= k < d:
                raise DomainError(f"masked site {k} out of range")
            elif singles[k] != 0.0:
                raise DomainError(f"masked coordinate {k} must be 0")
        singles.setflags(write=False)
        pv.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "singles", singles)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "pair_values", pv)
        object.__setattr__(self, "mask", mask)

    # -- construction ---------------------------------------------------
    @classmethod
    def zeros(cls, d, pairs=(), mask=()):
        pairs = tuple(_pair_key(s, t) for s, t in pairs)
        return cls(d, np.zeros(d), pairs, np.zeros(len(pairs)), frozenset(mask))

    @classmethod
    def from_dicts(cls, d, singles=None, pairs=None, mask=()):
        s = np.zeros(d)
        for k, v in (singles or {}).items():
            s[int(k)] = v
        keys = [_pair_key(*k) for k in (pairs or {})]
        return cls(d, s, tuple(keys), np.array(list((pairs or {}).values()), dtype=float), frozenset(mask))

    @classmethod
    def full(cls, d, values=None):
        """Vector over every singleton and every pair of ``d`` sites."""
        pairs = tuple((s, t) for s in range(d) for t in range(s + 1, d))
        k = d + len(pairs)
        flat = np.zeros(k) if values is None else np.asarray(values, dtype=float)
        return cls(d, flat[:d], pairs, flat[d:])

    # -- views ------------------------------------------------------------
    @property
    def k(self):
        return self.d + len(self.pairs)

    @property
    def flat(self):
        return np.concatenate([self.singles, self.pair_values])

    @property
    def coords(self):
        return list(range(self.d)) + list(self.pairs)

    @property
    def active(self):
        return np.array([c not in self.mask for c in self.coords], dtype=bool)

    def pair_arrays(self):
        if not self.pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        arr = np.array(self.pairs, dtype=np.int64)
        return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])

    def __getitem__(self, key):
        if isinstance(key, tuple):
            key = _pair_key(*key)
            return float(self.pair_values[self.pairs.index(key)]) if key in self.pairs else 0.0
        return float(self.singles[int(key)])

    def with_flat(self, flat, mask=None):
        flat = np.asarray(flat, dtype=np.float64)
        return ParamVector(self.d, flat[: self.d], self.pairs, flat[self.d:], self.mask if mask is None else mask)

    def with_mask(self, extra):
        """Pin further coordinates at zero."""
        mask = self.mask | frozenset(_pair_key(*k) if isinstance(k, tuple) else int(k) for k in extra)
        flat = self.flat
        for i, c in enumerate(self.coords):
            if c in mask:
                flat[i] = 0.0
        return self.with_flat(flat, mask)

    def on_support(self, pairs):
        """Re-express on a pair list that contains every nonzero pair of ``self``."""
        pairs = tuple(_pair_key(s, t) for s, t in pairs)
        lookup = dict(zip(self.pairs, self.pair_values))
        missing = [p for p, v in lookup.items() if v != 0.0 and p not in pairs]
        if missing:
            raise DomainError(f"support lacks nonzero pairs {missing}")
        pv = np.array([lookup.get(p, 0.0) for p in pairs])
        mask = frozenset(c for c in self.mask if not isinstance(c, tuple) or c in pairs)
        return ParamVector(self.d, self.singles.copy(), pairs, pv, mask)

    def _union(self, other):
        if other.d != self.d:
            raise DomainError(f"dimension mismatch: {self.d} vs {other.d}")
        pairs = tuple(sorted(set(self.pairs) | set(other.pairs)))
        return self.on_support(pairs).flat, other.on_support(pairs).flat, pairs

    def __add__(self, other):
        a, b, pairs = self._union(other)
        return ParamVector(self.d, (a + b)[: self.d], pairs, (a + b)[self.d:])

    def __sub__(self, other):
        a, b, pairs = self._union(other)
        return ParamVector(self.d, (a - b)[: self.d], pairs, (a - b)[self.d:])

    def __mul__(self, c):
        return ParamVector(self.d, self.singles * c, self.pairs, self.pair_values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return (self.d == other.d and self.pairs == other.pairs and self.mask == other.mask
                and np.array_equal(self.flat, other.flat))

    __hash__ = object.__hash__

    def norm(self):
        return float(np.linalg.norm(self.flat))

    # -- serialisation ----------------------------------------------------
    def to_json(self):
        return {
            "d": self.d,
            "singles": {str(s): float(v) for s, v in enumerate(self.singles)},
            "pairs": {f"{s},{t}": float(v) for (s, t), v in zip(self.pairs, self.pair_values)},
            "mask": [f"{c[0]},{c[1]}" if isinstance(c, tuple) else str(c) for c in sorted(self.mask, key=_coord_order)],
        }

    @classmethod
    def from_json(cls, obj):
        d = int(obj["d"])
        singles = {int(k): float(v) for k, v in obj.get("singles", {}).items()}
        pairs = {tuple(int(i) for i in k.split(",")): float(v) for k, v in obj.get("pairs", {}).items()}
        mask = [tuple(int(i) for i in m.split(",")) if "," in str(m) else int(m) for m in obj.get("mask", [])]
        return cls.from_dicts(d, singles, pairs, mask)


def _coord_order(c):
    return (1, c) if isinstance(c, tuple) else (0, (c, -1))


def _check_x(theta, X):
    X = np.asarray(X, dtype=np.uint8)
    if X.shape[-1] != theta.d:
        raise DomainError(f"vector length {X.shape[-1]} does not match d={theta.d}")
    return X


def sufficient_stats(x, pairs):
    """``U(x)`` over singletons followed by the listed pairs."""
    x = np.asarray(x, dtype=np.uint8)
    pairs = list(pairs)
    pair_part = [x[..., s] * x[..., t] for s, t in pairs]
    if pair_part:
        return np.concatenate([x, np.stack(pair_part, axis=-1)], axis=-1)
    return x.copy()


def energy(theta, x):
    """``<theta, U(x)>`` for one vector or a batch (rows)."""
    X = _check_x(theta, x)
    single = X.ndim == 1
    X2 = np.ascontiguousarray(X.reshape(-1, theta.d))
    pi, pj = theta.pair_arrays()
    e = kernels.energies(X2, theta.flat, pi, pj)
    return float(e[0]) if single else e


def all_configs(d):
    """Every binary vector of length ``d``; row r holds the bits of r."""
    if d > 26:
        raise CapacityError(f"refusing to enumerate 2**{d} configurations")
    r = np.arange(2**d, dtype=np.int64)
    return ((r[:, None] >> np.arange(d)) & 1).astype(np.uint8)


def log_partition_exact(theta, max_d=EXACT_Z_MAX_D):
    if theta.d > max_d:
        raise CapacityError(f"exact Z limited to d <= {max_d} (got {theta.d}); use log_partition_mc")
    return float(logsumexp(-energy(theta, all_configs(theta.d))))


def log_partition_mc(theta, n_samples=DEFAULT_Z_SAMPLES, seed=0):
    """``log Z`` from the mean of ``exp(-energy)`` over uniform binary vectors."""
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.integers(0, 2, size=(int(n_samples), theta.d), dtype=np.uint8)
    return float(theta.d * math.log(2.0) + logsumexp(-energy(theta, W)) - math.log(n_samples))


@dataclass(frozen=True)
class AutologisticModel:
    theta: ParamVector
    log_z: float
    log_z_method: str = "exact"
    n_samples: int = 0
    seed: int = None
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_theta(cls, theta, max_d=EXACT_Z_MAX_D, n_samples=DEFAULT_Z_SAMPLES, seed=0):
        """Attach ``log Z``: exact up to ``max_d`` sites, Monte Carlo beyond."""
        if theta.d <= max_d:
            return cls(theta, log_partition_exact(theta, max_d), "exact")
        return cls(theta, log_partition_mc(theta, n_samples, seed), "monte-carlo", int(n_samples), int(seed))

    @property
    def d(self):
        return self.theta.d

    def to_json(self):
        out = self.theta.to_json()
        out.update(log_z=self.log_z, log_z_method=self.log_z_method, seed=self.seed)
        if self.n_samples:
            out["n_samples"] = self.n_samples
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(ParamVector.from_json(obj), float(obj["log_z"]), obj.get("log_z_method", "exact"),
                   int(obj.get("n_samples", 0)), obj.get("seed"))


def log_prob(model, x):
    return -energy(model.theta, x) - model.log_z


def sample_vectors(theta, n, burn_in=DEFAULT_BURN_IN, thin=DEFAULT_THIN, seed=0):
    """Raw ``(n, d)`` uint8 draws from a single systematic-scan Gibbs chain."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if thin < 1 or burn_in < 0:
        raise DomainError("thin must be >= 1 and burn_in >= 0")
    rng = np.random.default_rng(seed)
    x0 = rng.integers(0, 2, size=theta.d, dtype=np.uint8)
    U = rng.random((burn_in + n * thin, theta.d))
    pi, pj = theta.pair_arrays()
    return kernels.gibbs(theta.flat, pi, pj, x0, U, int(burn_in), int(thin), int(n))


def gibbs_sample(model, n, burn_in=DEFAULT_BURN_IN, thin=DEFAULT_THIN, seed=0, group="simulated"):
    theta = model.theta if isinstance(model, AutologisticModel) else model
    X = sample_vectors(theta, n, burn_in, thin, seed)
    return BinaryDataset(X, group, np.arange(1, theta.d + 1), np.full(theta.d, np.nan))


def exact_probabilities(model):
    """``(configs, probs)`` by enumeration."""
    theta = model.theta if isinstance(model, AutologisticModel) else model
    X = all_configs(theta.d)
    lw = -energy(theta, X)
    return X, np.exp(lw - logsumexp(lw))


def moments(theta, pairs, exact_max_d=EXACT_Z_MAX_D, n_samples=DEFAULT_Z_SAMPLES, seed=0):
    """``E[U]`` over singletons plus ``pairs``: exact enumeration or Gibbs average."""
    if theta.d <= exact_max_d:
        X, p = exact_probabilities(theta)
        return p @ sufficient_stats(X, pairs).astype(np.float64)
    X = sample_vectors(theta, n_samples, seed=seed)
    return sufficient_stats(X, pairs).astype(np.float64).mean(axis=0)


def kl_distance(p, q, exact_max_d=EXACT_Z_MAX_D, n_samples=DEFAULT_Z_SAMPLES, seed=0):
    """Symmetrised divergence ``sum (P - Q) log(P / Q)`` through the moment identity."""
    tp = p.theta if isinstance(p, AutologisticModel) else p
    tq = q.theta if isinstance(q, AutologisticModel) else q
    if tp.d != tq.d:
        raise DomainError(f"dimension mismatch: {tp.d} vs {tq.d}")
    diff = tq - tp
    pairs = diff.pairs
    ep = moments(tp, pairs, exact_max_d, n_samples, seed)
    eq = moments(tq, pairs, exact_max_d, n_samples, seed + 1)
    return max(0.0, float(diff.flat @ (ep - eq)))


def nor_kl(p, q, d_plus, d_minus, **kw):
    if d_plus + d_minus <= 0:
        raise DomainError("d_plus + d_minus must be positive")
    return kl_distance(p, q, **kw) / math.sqrt(d_plus + d_minus)
