"""Numba-jitted DP kernels; numerically identical to the numpy backend."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lse2(a, b):
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


@njit(cache=True)
def rnnt_forward_backward(blank, emit):
    T, U1 = blank.shape
    U = U1 - 1
    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + blank[t - 1, u] if t > 0 else NEG_INF
            b = alpha[t, u - 1] + emit[t, u - 1] if u > 0 else NEG_INF
            alpha[t, u] = _lse2(a, b)
    log_z = alpha[T - 1, U] + blank[T - 1, U]

    beta = np.full((T, U1), NEG_INF)
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t + 1 < T:
                cont = beta[t + 1, u]
            else:
                cont = 0.0 if u == U else NEG_INF
            b_term = blank[t, u] + cont
            e_term = emit[t, u] + beta[t, u + 1] if u < U else NEG_INF
            beta[t, u] = _lse2(b_term, e_term)

    grad_blank = np.zeros((T, U1))
    grad_emit = np.zeros((T, U))
    for t in range(T):
        for u in range(U1):
            if t + 1 < T:
                cont = beta[t + 1, u]
            else:
                cont = 0.0 if u == U else NEG_INF
            if cont != NEG_INF:
                grad_blank[t, u] = -math.exp(alpha[t, u] + blank[t, u] + cont - log_z)
            if u < U:
                grad_emit[t, u] = -math.exp(alpha[t, u] + emit[t, u]
                                            + beta[t, u + 1] - log_z)
    return -log_z, grad_blank, grad_emit


@njit(cache=True)
def edit_dp(ref, hyp):
    n = len(ref)
    m = len(hyp)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        dp[i, 0] = i
    for j in range(m + 1):
        dp[0, j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        for j in range(1, m + 1):
            sub = dp[i - 1, j - 1] + (0 if ri == hyp[j - 1] else 1)
            dele = dp[i - 1, j] + 1
            ins = dp[i, j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            dp[i, j] = best
    return dp
