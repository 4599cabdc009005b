"""Vectorised numpy twins of the numba kernels (fallback path)."""
import numpy as np
from scipy.special import expit


def _coupling(d, theta, pi, pj):
    J = np.zeros((d, d))
    np.add.at(J, (pi, pj), theta[d:])
    np.add.at(J, (pj, pi), theta[d:])
    return J


def _fields(X, theta, pi, pj):
    d = X.shape[1]
    Xf = X.astype(np.float64)
    return -(theta[:d] + Xf @ _coupling(d, theta, pi, pj))


def energies(X, theta, pi, pj):
    d = X.shape[1]
    Xf = X.astype(np.float64)
    return Xf @ theta[:d] + (Xf[:, pi] * Xf[:, pj]) @ theta[d:]


def _obs_grads(Xf, a, pi, pj):
    res = Xf - expit(a)
    return np.hstack([-res, -(res[:, pi] * Xf[:, pj] + res[:, pj] * Xf[:, pi])])


def pl_obs(X, theta, pi, pj):
    Xf = X.astype(np.float64)
    a = _fields(X, theta, pi, pj)
    lpl = np.sum(Xf * a - np.logaddexp(0.0, a), axis=1)
    return lpl, _obs_grads(Xf, a, pi, pj)


def pl_value_grad(X, w, theta, pi, pj):
    lpl, grads = pl_obs(X, theta, pi, pj)
    return float(w @ lpl), w @ grads


def pl_hessian(X, w, theta, pi, pj):
    m, d = X.shape
    K = theta.shape[0]
    Xf = X.astype(np.float64)
    a = _fields(X, theta, pi, pj)
    p = expit(a)
    curv = -(w[:, None] * p * (1.0 - p))
    A = np.zeros((m, d, K))
    A[:, np.arange(d), np.arange(d)] = -1.0
    ks = d + np.arange(len(pi))
    A[:, pi, ks] = -Xf[:, pj]
    A[:, pj, ks] = -Xf[:, pi]
    A = A.reshape(m * d, K)
    return (A * curv.reshape(-1, 1)).T @ A


def ascent(X, w, theta0, active, pi, pj, step, max_iter, tol):
    theta = theta0.copy()
    values = []
    it = 0
    status = 1
    while True:
        value, grad = pl_value_grad(X, w, theta, pi, pj)
        values.append(value)
        gnorm = float(np.sqrt(np.sum(grad[active] ** 2)))
        if not (np.isfinite(gnorm) and np.isfinite(value)):
            status = 2
            break
        if gnorm < tol:
            status = 0
            break
        if it == max_iter:
            break
        theta[active] += step * grad[active]
        it += 1
    return theta, it, gnorm, np.asarray(values), status


def gibbs(theta, pi, pj, x0, U, burn_in, thin, n):
    # a single chain is sequential; only the conditional field is vectorised
    d = x0.shape[0]
    J = _coupling(d, theta, pi, pj)
    x = x0.astype(np.float64)
    out = np.empty((n, d), dtype=np.uint8)
    kept = 0
    sweep = 0
    while kept < n:
        for s in range(d):
            a = -(theta[s] + J[s] @ x)
            x[s] = 1.0 if U[sweep, s] < expit(a) else 0.0
        sweep += 1
        if sweep > burn_in and (sweep - burn_in) % thin == 0:
            out[kept] = x
            kept += 1
    return out
