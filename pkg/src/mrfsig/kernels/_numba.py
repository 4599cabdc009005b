"""Loop kernels compiled with numba.

Every function here has a vectorised twin in ``_numpy`` with the same
signature; the two are checked against each other in the test-suite.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True, nogil=True)
def _log1pexp(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(cache=True, nogil=True)
def _adjacency(d, pi, pj):
    deg = np.zeros(d + 1, dtype=np.int64)
    for k in range(pi.shape[0]):
        deg[pi[k] + 1] += 1
        deg[pj[k] + 1] += 1
    ptr = np.cumsum(deg)
    fill = ptr[:-1].copy()
    pk = np.empty(2 * pi.shape[0], dtype=np.int64)
    pt = np.empty(2 * pi.shape[0], dtype=np.int64)
    for k in range(pi.shape[0]):
        i, j = pi[k], pj[k]
        pk[fill[i]] = k
        pt[fill[i]] = j
        fill[i] += 1
        pk[fill[j]] = k
        pt[fill[j]] = i
        fill[j] += 1
    return ptr, pk, pt


@njit(cache=True, nogil=True)
def energies(X, theta, pi, pj):
    m, d = X.shape
    out = np.zeros(m)
    for r in range(m):
        e = 0.0
        for s in range(d):
            if X[r, s]:
                e += theta[s]
        for k in range(pi.shape[0]):
            if X[r, pi[k]] and X[r, pj[k]]:
                e += theta[d + k]
        out[r] = e
    return out


@njit(cache=True, nogil=True)
def _field(X, r, s, theta, ptr, pk, pt):
    d = X.shape[1]
    a = -theta[s]
    for q in range(ptr[s], ptr[s + 1]):
        if X[r, pt[q]]:
            a -= theta[d + pk[q]]
    return a


@njit(cache=True, nogil=True)
def pl_value_grad(X, w, theta, pi, pj):
    m, d = X.shape
    ptr, pk, pt = _adjacency(d, pi, pj)
    grad = np.zeros(theta.shape[0])
    value = 0.0
    for r in range(m):
        wr = w[r]
        for s in range(d):
            a = _field(X, r, s, theta, ptr, pk, pt)
            xs = X[r, s]
            # one exp serves both log(1 + e^a) and the sigmoid
            e = math.exp(-abs(a))
            if a > 0.0:
                value += wr * (xs * a - a - math.log1p(e))
                h = 1.0 / (1.0 + e)
            else:
                value += wr * (xs * a - math.log1p(e))
                h = e / (1.0 + e)
            res = wr * (xs - h)
            grad[s] -= res
            for q in range(ptr[s], ptr[s + 1]):
                if X[r, pt[q]]:
                    grad[d + pk[q]] -= res
    return value, grad


@njit(cache=True, nogil=True)
def pl_obs(X, theta, pi, pj):
    m, d = X.shape
    ptr, pk, pt = _adjacency(d, pi, pj)
    lpl = np.zeros(m)
    grads = np.zeros((m, theta.shape[0]))
    for r in range(m):
        for s in range(d):
            a = _field(X, r, s, theta, ptr, pk, pt)
            xs = X[r, s]
            lpl[r] += xs * a - _log1pexp(a)
            res = xs - _sigmoid(a)
            grads[r, s] -= res
            for q in range(ptr[s], ptr[s + 1]):
                if X[r, pt[q]]:
                    grads[r, d + pk[q]] -= res
    return lpl, grads


@njit(cache=True, nogil=True)
def pl_hessian(X, w, theta, pi, pj):
    m, d = X.shape
    K = theta.shape[0]
    ptr, pk, pt = _adjacency(d, pi, pj)
    H = np.zeros((K, K))
    idx = np.empty(K, dtype=np.int64)
    val = np.empty(K)
    for r in range(m):
        for s in range(d):
            a = _field(X, r, s, theta, ptr, pk, pt)
            p = _sigmoid(a)
            c = -w[r] * p * (1.0 - p)
            # sparse A(s,x): -1 on s, -x_t on pair (s,t)
            nz = 0
            idx[nz] = s
            val[nz] = -1.0
            nz += 1
            for q in range(ptr[s], ptr[s + 1]):
                if X[r, pt[q]]:
                    idx[nz] = d + pk[q]
                    val[nz] = -1.0
                    nz += 1
            for u in range(nz):
                for v in range(nz):
                    H[idx[u], idx[v]] += c * val[u] * val[v]
    return H


@njit(cache=True, nogil=True)
def ascent(X, w, theta0, active, pi, pj, step, max_iter, tol):
    theta = theta0.copy()
    values = np.empty(max_iter + 1)
    gnorm = 0.0
    it = 0
    status = 1
    while True:
        value, grad = pl_value_grad(X, w, theta, pi, pj)
        values[it] = value
        gnorm = 0.0
        for k in range(theta.shape[0]):
            if active[k]:
                gnorm += grad[k] * grad[k]
        gnorm = math.sqrt(gnorm)
        if not (math.isfinite(gnorm) and math.isfinite(value)):
            status = 2
            break
        if gnorm < tol:
            status = 0
            break
        if it == max_iter:
            break
        for k in range(theta.shape[0]):
            if active[k]:
                theta[k] += step * grad[k]
        it += 1
    return theta, it, gnorm, values[: it + 1], status


@njit(cache=True, nogil=True)
def gibbs(theta, pi, pj, x0, U, burn_in, thin, n):
    d = x0.shape[0]
    ptr, pk, pt = _adjacency(d, pi, pj)
    x = x0.copy()
    out = np.empty((n, d), dtype=np.uint8)
    kept = 0
    sweep = 0
    while kept < n:
        for s in range(d):
            a = -theta[s]
            for q in range(ptr[s], ptr[s + 1]):
                if x[pt[q]]:
                    a -= theta[d + pk[q]]
            x[s] = 1 if U[sweep, s] < _sigmoid(a) else 0
        sweep += 1
        if sweep >= burn_in and (sweep - burn_in) % thin == 0 and sweep > burn_in:
            out[kept] = x
            kept += 1
    return out
