"""Maximum pseudo-likelihood estimation for autologistic models.

All empirical quantities are computed on the distinct rows of the dataset
weighted by their frequency, which is exact and keeps the cost independent
of ``n`` once every pattern has been seen.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .errors import DomainError, NumericalError, RankDeficiencyError
from .gibbs_core import ParamVector, sample_vectors
from .spectra_io import BinaryDataset

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.05
DEFAULT_MAX_ITER = 200
DEFAULT_GRAD_TOL = 1e-4
DEFAULT_CI_LEVEL = 0.90
PIVOT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PseudoLikelihoodContext:
    """Dataset patterns, allowed cliques and the zero-mask of one fit."""

    patterns: np.ndarray
    weights: np.ndarray
    n: int
    cliques: tuple
    mask: frozenset = frozenset()

    @classmethod
    def build(cls, data, cliques=(), mask=()):
        X = data.vectors if isinstance(data, BinaryDataset) else np.asarray(data, dtype=np.uint8)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DomainError("pseudo-likelihood needs a nonempty 2-D dataset")
        patterns, counts = np.unique(X, axis=0, return_counts=True)
        template = ParamVector.zeros(X.shape[1], cliques, mask)
        return cls(np.ascontiguousarray(patterns, dtype=np.uint8), counts / X.shape[0],
                   int(X.shape[0]), template.pairs, template.mask)

    @property
    def d(self):
        return self.patterns.shape[1]

    def template(self):
        return ParamVector.zeros(self.d, self.cliques, self.mask)

    @property
    def active_coords(self):
        t = self.template()
        return [c for c in t.coords if c not in t.mask]

    def with_mask(self, extra):
        return PseudoLikelihoodContext(self.patterns, self.weights, self.n, self.cliques,
                                       self.template().with_mask(extra).mask)

    def _theta(self, T):
        if isinstance(T, ParamVector):
            if T.d != self.d:
                raise DomainError(f"dimension mismatch: d={T.d} vs {self.d}")
            T = T.on_support(self.cliques)
            if any(T[c] != 0.0 for c in self.mask):
                raise DomainError("parameter violates the context mask")
            return T.flat
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (self.d + len(self.cliques),):
            raise DomainError("flat parameter has the wrong length")
        return T


def _one(ctx, x):
    x = np.asarray(x, dtype=np.uint8)
    if x.shape != (ctx.d,):
        raise DomainError(f"vector length {x.shape} does not match d={ctx.d}")
    return x.reshape(1, -1)


def _pairs(ctx):
    return ctx.template().pair_arrays()


def lpl(ctx, x, T):
    """Log pseudo-likelihood of a single vector."""
    pi, pj = _pairs(ctx)
    value, _ = kernels.pl_value_grad(_one(ctx, x), np.ones(1), ctx._theta(T), pi, pj)
    return value


def lpl_gradient(ctx, x, T):
    """Analytic gradient over the active coordinates."""
    pi, pj = _pairs(ctx)
    _, g = kernels.pl_value_grad(_one(ctx, x), np.ones(1), ctx._theta(T), pi, pj)
    return g[ctx.template().active]


def lpl_hessian(ctx, x, T):
    pi, pj = _pairs(ctx)
    act = ctx.template().active
    H = kernels.pl_hessian(_one(ctx, x), np.ones(1), ctx._theta(T), pi, pj)
    return H[np.ix_(act, act)]


def mean_lpl(ctx, T):
    """Empirical objective: mean log pseudo-likelihood over the dataset."""
    pi, pj = _pairs(ctx)
    value, _ = kernels.pl_value_grad(ctx.patterns, ctx.weights, ctx._theta(T), pi, pj)
    return value


def empirical_gradient(ctx, T):
    pi, pj = _pairs(ctx)
    _, g = kernels.pl_value_grad(ctx.patterns, ctx.weights, ctx._theta(T), pi, pj)
    return g[ctx.template().active]


def empirical_hessian(ctx, T):
    pi, pj = _pairs(ctx)
    act = ctx.template().active
    H = kernels.pl_hessian(ctx.patterns, ctx.weights, ctx._theta(T), pi, pj)
    return H[np.ix_(act, act)]


@dataclass(eq=False)
class MpleResult:
    theta_hat: ParamVector
    n: int
    iterations: int
    final_grad_norm: float
    converged: bool
    active_coords: list
    gamma: np.ndarray = None
    level: float = DEFAULT_CI_LEVEL
    eliminated: list = field(default_factory=list)
    singular_coords: tuple = ()
    objective: np.ndarray = None

    def std_errors(self):
        if self.gamma is None:
            return None
        return np.sqrt(np.clip(np.diag(self.gamma), 0.0, None) / self.n)

    @property
    def ci(self):
        """``{coord: (lo, hi)}`` Gaussian intervals at ``level``."""
        se = self.std_errors()
        if se is None:
            return {}
        z = stats.norm.ppf(0.5 + self.level / 2.0)
        return {c: (self.theta_hat[c] - z * s, self.theta_hat[c] + z * s)
                for c, s in zip(self.active_coords, se)}

    def to_json(self):
        def key(c):
            return f"{c[0]},{c[1]}" if isinstance(c, tuple) else str(c)

        se = self.std_errors()
        return {
            "theta_hat": self.theta_hat.to_json(),
            "n": self.n,
            "iterations": self.iterations,
            "final_grad_norm": self.final_grad_norm,
            "converged": self.converged,
            "level": self.level,
            "gamma_diag": None if self.gamma is None else {key(c): float(g) for c, g in zip(self.active_coords, np.diag(self.gamma))},
            "std_errors": None if se is None else {key(c): float(s) for c, s in zip(self.active_coords, se)},
            "ci": {key(c): [float(lo), float(hi)] for c, (lo, hi) in self.ci.items()},
            "eliminated": [key(c) for c in self.eliminated],
            "singular_coords": [key(c) for c in self.singular_coords],
        }


def _invert_nsd(H, coords):
    """Inverse of a negative definite Hessian via Cholesky of ``-H``."""
    P = -0.5 * (H + H.T)
    k = P.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    try:
        Lc = np.linalg.cholesky(P)
        ok = np.all(np.diag(Lc) ** 2 > PIVOT_TOL)
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        vals, vecs = np.linalg.eigh(P)
        null = vecs[:, vals <= PIVOT_TOL * max(1.0, vals.max(initial=0.0))]
        if null.shape[1] == 0:
            null = vecs[:, :1]
        bad = [coords[i] for i in np.flatnonzero(np.max(np.abs(null), axis=1) > 1e-3)]
        raise RankDeficiencyError(f"pseudo-likelihood Hessian is singular in {bad}", bad)
    Linv = np.linalg.inv(Lc)
    return -(Linv.T @ Linv)


def asymptotic_covariance(ctx, theta_hat):
    """Sandwich estimate ``H^-1 Sigma H^-1`` over the active coordinates."""
    pi, pj = _pairs(ctx)
    act = ctx.template().active
    T = ctx._theta(theta_hat)
    H = kernels.pl_hessian(ctx.patterns, ctx.weights, T, pi, pj)[np.ix_(act, act)]
    _, grads = kernels.pl_obs(ctx.patterns, T, pi, pj)
    G = grads[:, act]
    Sigma = (G * ctx.weights[:, None]).T @ G
    Hinv = _invert_nsd(H, ctx.active_coords)
    gamma = Hinv @ Sigma @ Hinv
    return 0.5 * (gamma + gamma.T)


def sigma_gibbs(ctx, theta_hat, theta_true, n_samples=10_000, seed=0):
    """Cross-check of ``Sigma`` using Gibbs draws from ``theta_true``."""
    pi, pj = _pairs(ctx)
    act = ctx.template().active
    X = sample_vectors(theta_true.on_support(ctx.cliques), n_samples, seed=seed)
    _, grads = kernels.pl_obs(X, ctx._theta(theta_hat), pi, pj)
    G = grads[:, act]
    return G.T @ G / n_samples


def fit(ctx, step=DEFAULT_STEP, max_iter=DEFAULT_MAX_ITER, grad_tol=DEFAULT_GRAD_TOL,
        level=DEFAULT_CI_LEVEL, covariance=True):
    """Gradient ascent on the mean log pseudo-likelihood from ``T = 0``."""
    if step <= 0:
        raise DomainError("step must be positive")
    template = ctx.template()
    pi, pj = template.pair_arrays()
    theta, iters, gnorm, values, status = kernels.ascent(
        ctx.patterns, ctx.weights, template.flat, template.active, pi, pj,
        float(step), int(max_iter), float(grad_tol))
    if status == 2:
        raise NumericalError(f"non-finite pseudo-likelihood gradient after {iters} steps "
                             f"(d={ctx.d}, step={step}); reduce the step size")
    theta_hat = template.with_flat(theta)
    if status != 0:
        logger.debug("MPLE stopped at max_iter=%d with |grad|=%.3g", max_iter, gnorm)
    result = MpleResult(theta_hat, ctx.n, int(iters), float(gnorm), status == 0,
                        ctx.active_coords, level=level, objective=np.asarray(values))
    if covariance:
        try:
            result.gamma = asymptotic_covariance(ctx, theta_hat)
        except RankDeficiencyError as exc:
            result.singular_coords = exc.coords
    return result


def prune_insignificant(ctx, result, level=DEFAULT_CI_LEVEL, **fit_kw):
    """Zero every coordinate whose confidence interval holds 0, refit, repeat."""
    eliminated = list(result.eliminated)
    while True:
        if result.gamma is None:
            drop = list(result.singular_coords) or list(result.active_coords)
        else:
            result.level = level
            drop = [c for c, (lo, hi) in result.ci.items() if lo <= 0.0 <= hi]
        if not drop:
            result.eliminated = eliminated
            return result
        eliminated.extend(drop)
        ctx = ctx.with_mask(drop)
        if not ctx.active_coords:
            warnings.warn("every coordinate was eliminated; returning the zero model", RuntimeWarning, stacklevel=2)
            return MpleResult(ctx.template(), ctx.n, 0, 0.0, True, [], np.zeros((0, 0)), level, eliminated)
        result = fit(ctx, level=level, **fit_kw)


def fit_and_prune(ctx, level=DEFAULT_CI_LEVEL, prune=True, **fit_kw):
    result = fit(ctx, level=level, **fit_kw)
    return prune_insignificant(ctx, result, level, **fit_kw) if prune else result


@dataclass(frozen=True)
class MpleConfig:
    """Fit settings shared by the discrimination and pipeline layers."""

    step: float = DEFAULT_STEP
    max_iter: int = DEFAULT_MAX_ITER
    grad_tol: float = DEFAULT_GRAD_TOL
    level: float = DEFAULT_CI_LEVEL
    prune: bool = True

    def fit_kw(self):
        return {"step": self.step, "max_iter": self.max_iter, "grad_tol": self.grad_tol}


def fit_dataset(data, cliques=(), config=MpleConfig(), mask=()):
    """Build the context for ``data`` and run the configured fit (with pruning if enabled)."""
    ctx = PseudoLikelihoodContext.build(data, cliques, mask)
    return fit_and_prune(ctx, config.level, config.prune, **config.fit_kw())
