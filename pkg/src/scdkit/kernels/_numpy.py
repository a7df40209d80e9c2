"""Pure-numpy reference implementations of the DP kernels.

Same algorithms as the numba backend; used as the fallback when numba is
unavailable or disabled via SCDKIT_NO_NUMBA=1, and as the comparison
baseline in the kernel benchmark.
"""

from __future__ import annotations

import math

import numpy as np

NEG_INF = -np.inf


def _lse2(a, b):
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def rnnt_forward_backward(blank, emit):
    """Transducer NLL and its gradient over the (t, u) lattice.

    blank: (T, U+1) log-prob of emitting blank at (t, u).
    emit:  (T, U)   log-prob of emitting target token u at (t, u).
    Returns (nll, grad_blank, grad_emit); gradients are of the NLL.
    """
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
            b_term = blank[t, u] + cont if cont != NEG_INF else NEG_INF
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


def edit_dp(ref, hyp):
    """Unit-cost Levenshtein DP table over two int sequences."""
    n = len(ref)
    m = len(hyp)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
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
