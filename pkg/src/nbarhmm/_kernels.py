"""Compiled inner loops shared by the likelihood and the state sampler."""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def forward_segments(logpi, logP, logD, starts):
    """Scaled forward recursion for several concatenated series.

    ``logP[k]`` is the transition into week ``k`` and ``logD[k]`` the masked
    log emission (zero where a week has no emission term). Returns one
    log-likelihood per segment; a step whose row vector vanishes yields -inf.
    """
    n_seg = starts.shape[0] - 1
    out = np.empty(n_seg)
    alpha = np.empty(3)
    nxt = np.empty(3)
    for g in range(n_seg):
        lo = starts[g]
        hi = starts[g + 1]
        ll = 0.0
        dead = False
        for k in range(lo, hi):
            m = max(logD[k, 0], max(logD[k, 1], logD[k, 2]))
            if m == -np.inf or np.isnan(m):
                dead = True
                break
            if k == lo:
                for j in range(3):
                    nxt[j] = np.exp(logpi[j] + logD[k, j] - m)
            else:
                for j in range(3):
                    acc = 0.0
                    for i in range(3):
                        acc += alpha[i] * np.exp(logP[k, i, j])
                    nxt[j] = acc * np.exp(logD[k, j] - m)
            tot = nxt[0] + nxt[1] + nxt[2]
            if not tot > 0.0:
                dead = True
                break
            ll += m + np.log(tot)
            for j in range(3):
                alpha[j] = nxt[j] / tot
        out[g] = -np.inf if dead else ll
    return out


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _draw(logw):
    m = -np.inf
    for v in range(logw.shape[0]):
        if logw[v] > m:
            m = logw[v]
    if m == -np.inf:
        return -1
    tot = 0.0
    w = np.empty(logw.shape[0])
    for v in range(logw.shape[0]):
        w[v] = np.exp(logw[v] - m)
        tot += w[v]
    u = np.random.random() * tot
    acc = 0.0
    for v in range(logw.shape[0]):
        acc += w[v]
        if u < acc:
            return v
    return logw.shape[0] - 1


@njit(cache=True)
def pair_gibbs(logpi, logP, logD, states, sweeps, burn, seed):
    """Sweeps of blocked Gibbs over overlapping pairs (s_k, s_k+1).

    Updates ``states`` in place and returns per-week visit counts over the
    sweeps after ``burn``. Returns a (0, 3) array if some pair has no
    admissible configuration.
    """
    _seed(seed)
    n = states.shape[0]
    counts = np.zeros((n, 3))
    logw = np.empty(9)
    for sweep in range(sweeps):
        for k in range(n - 1):
            for i in range(3):
                if k == 0:
                    left = logpi[i]
                else:
                    left = logP[k, states[k - 1], i]
                for j in range(3):
                    v = left + logD[k, i] + logP[k + 1, i, j] + logD[k + 1, j]
                    if k + 2 < n:
                        v += logP[k + 2, j, states[k + 2]]
                    logw[3 * i + j] = v
            pick = _draw(logw)
            if pick < 0:
                return np.zeros((0, 3))
            states[k] = pick // 3
            states[k + 1] = pick % 3
        if sweep >= burn:
            for k in range(n):
                counts[k, states[k]] += 1.0
    return counts


@njit(cache=True)
def batch_log_likelihood(X, y, lagmean, emits, label, lgy1, starts,
                         zeta, beta, a, c, logpi):
    """Per-segment log-likelihood with factors built on the fly.

    Same quantities as the vectorized factor builders followed by
    ``forward_segments``; zero counts skip the log-gamma terms.
    """
    n_seg = starts.shape[0] - 1
    d = X.shape[1]
    logp = np.log(c) - np.log1p(c)
    log1mp = -np.log1p(c)
    lga = np.empty(3)
    for s in range(3):
        lga[s] = math.lgamma(a[s])
    out = np.empty(n_seg)
    alpha = np.empty(3)
    nxt = np.empty(3)
    ld = np.empty(3)
    q = np.empty(6)
    P = np.empty((3, 3))
    for g in range(n_seg):
        ll = 0.0
        dead = False
        for k in range(starts[g], starts[g + 1]):
            # emission factors
            if emits[k]:
                yk = y[k]
                for s in range(3):
                    if s == 0:
                        r = a[0]
                    else:
                        eta = 0.0
                        for j in range(d):
                            eta += beta[s - 1, j] * X[k, j]
                        r = a[s]
                        if lagmean[k] > 0.0:
                            r += np.exp(eta) * lagmean[k]
                    if not np.isfinite(r):
                        ld[s] = -np.inf
                    elif yk == 0.0:
                        ld[s] = r * logp
                    elif r == a[s]:
                        ld[s] = math.lgamma(r + yk) - lga[s] - lgy1[k] + r * logp + yk * log1mp
                    else:
                        ld[s] = math.lgamma(r + yk) - math.lgamma(r) - lgy1[k] + r * logp + yk * log1mp
            else:
                ld[0] = 0.0
                ld[1] = 0.0
                ld[2] = 0.0
            if label[k]:
                ld[1] = -np.inf
                ld[2] = -np.inf
            m = max(ld[0], max(ld[1], ld[2]))
            if m == -np.inf or np.isnan(m):
                dead = True
                break
            if k == starts[g]:
                for j in range(3):
                    nxt[j] = np.exp(logpi[j] + ld[j] - m)
            else:
                for t in range(6):
                    acc = 0.0
                    for j in range(d):
                        acc += zeta[t, j] * X[k, j]
                    q[t] = acc
                # rows: (diag, q, q) with diagonal as reference
                _softmax_row(0.0, q[0], q[1], P, 0, 0, 1, 2)
                _softmax_row(0.0, q[2], q[3], P, 1, 1, 0, 2)
                _softmax_row(0.0, q[4], q[5], P, 2, 2, 0, 1)
                for j in range(3):
                    acc = 0.0
                    for i in range(3):
                        acc += alpha[i] * P[i, j]
                    nxt[j] = acc * np.exp(ld[j] - m)
            tot = nxt[0] + nxt[1] + nxt[2]
            if not tot > 0.0:
                dead = True
                break
            ll += m + np.log(tot)
            for j in range(3):
                alpha[j] = nxt[j] / tot
        out[g] = -np.inf if dead else ll
    return out


@njit(cache=True)
def _softmax_row(v0, v1, v2, P, row, c0, c1, c2):
    m = max(v0, max(v1, v2))
    e0 = np.exp(v0 - m)
    e1 = np.exp(v1 - m)
    e2 = np.exp(v2 - m)
    tot = e0 + e1 + e2
    P[row, c0] = e0 / tot
    P[row, c1] = e1 / tot
    P[row, c2] = e2 / tot
