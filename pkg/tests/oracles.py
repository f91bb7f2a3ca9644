"""Independent reference implementations used to check the library.

These are deliberately naive (explicit loops, explicit inverses, brute-force
search) so they share no code path with the implementation under test.
"""

from __future__ import annotations

from itertools import product

import numpy as np


def lag_embed_loop(x: np.ndarray, offsets) -> np.ndarray:
    T, D = x.shape
    out = np.zeros((T, D * len(offsets)))
    for t in range(T):
        for j, o in enumerate(offsets):
            if 0 <= t + o < T:
                for d in range(D):
                    out[t, j * D + d] = x[t + o, d]
    return out


def covariance_loop(X: np.ndarray) -> np.ndarray:
    T, D = X.shape
    R = np.zeros((D, D))
    for t in range(T):
        for i in range(D):
            for j in range(D):
                R[i, j] += X[t, i] * X[t, j]
    return R / (T - 1)


def gevd_explicit_inverse(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of inv(B) @ A."""
    lam = np.linalg.eigvals(np.linalg.inv(B) @ A)
    return np.sort(lam.real)[::-1]


def random_spd(n: int, rng) -> np.ndarray:
    M = rng.standard_normal((n, n))
    return M @ M.T + n * 0.1 * np.eye(n)


def brute_force_cca(X: np.ndarray, Y: np.ndarray, step_deg: float = 0.5) -> float:
    """Max |corr(X u, Y v)| over a grid of unit directions u, v (2-channel views)."""
    ang = np.deg2rad(np.arange(0.0, 180.0, step_deg))
    U = np.stack([np.cos(ang), np.sin(ang)])  # w and -w only flip the sign
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    Sxx, Syy, Sxy = Xc.T @ Xc, Yc.T @ Yc, Xc.T @ Yc
    vx = np.einsum("in,ij,jn->n", U, Sxx, U)
    vy = np.einsum("in,ij,jn->n", U, Syy, U)
    C = (U.T @ Sxy @ U) / np.sqrt(np.outer(vx, vy))
    return float(np.abs(C).max())


def cca_svd(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Canonical correlations as singular values of the whitened cross-covariance."""
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    Qx, _ = np.linalg.qr(Xc)
    Qy, _ = np.linalg.qr(Yc)
    return np.linalg.svd(Qx.T @ Qy, compute_uv=False)


def midranks(x):
    x = list(x)
    return [sum(1 for y in x if y < v) + 0.5 * (sum(1 for y in x if y == v) + 1) for v in x]


def wilcoxon_enumeration(a, b):
    """(less, greater) tail probabilities by listing every sign pattern."""
    d = [ai - bi for ai, bi in zip(a, b) if ai != bi]
    r = midranks([abs(v) for v in d])
    w = sum(ri for ri, v in zip(r, d) if v > 0)
    stats = [sum(ri for ri, s in zip(r, signs) if s) for signs in product((False, True), repeat=len(d))]
    n = len(stats)
    eps = 1e-9
    return sum(s <= w + eps for s in stats) / n, sum(s >= w - eps for s in stats) / n


def bh_by_hand(p):
    m = len(p)
    out = []
    for pi in p:
        # smallest p_(j) * m / j over all j whose p_(j) >= pi
        ranked = sorted(p)
        cands = [ranked[j] * m / (j + 1) for j in range(m) if ranked[j] >= pi]
        out.append(min(1.0, min(cands)))
    return out


def quantile_sort_index(values, q):
    s = sorted(values)
    h = (len(s) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def p_value_count(observed, null):
    c = sorted(null)[len(null) // 2] if len(null) % 2 else 0.5 * (sorted(null)[len(null) // 2 - 1] + sorted(null)[len(null) // 2])
    return sum(1 for v in null if abs(v - c) >= abs(observed - c)) / len(null)
