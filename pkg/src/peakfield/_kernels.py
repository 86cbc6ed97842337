"""Compiled Gray-code sweeps over the spin hypercube.

Both kernels visit only the half of the cube with the last spin fixed at
+1; the S-K energy is even in the spins, so the other half repeats the same
values and the lowest index of each pair lies in the visited half.
Energies are in raw units ``E(s) = s^T Z s``.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _setup(Z):
    n = Z.shape[0]
    W = Z + Z.T
    c = 0.0
    for k in range(n):
        c += Z[k, k]
        W[k, k] = 0.0
    h = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += W[i, j]
        h[i] = s
    return W, h, c + 0.5 * h.sum()


@njit(cache=True)
def sk_gray_max(Z):
    """Maximum energy and its lowest configuration index."""
    n = Z.shape[0]
    W, h, e = _setup(Z)
    sigma = np.ones(n)
    best = e
    best_idx = 0
    g = 0
    for i in range(1, 1 << (n - 1)):
        k = 0
        while not (i >> k) & 1:
            k += 1
        sk = sigma[k]
        e -= 2.0 * sk * h[k]
        for j in range(n):
            h[j] -= 2.0 * sk * W[j, k]
        sigma[k] = -sk
        g ^= 1 << k
        if e > best or (e == best and g < best_idx):
            best = e
            best_idx = g
    return best, best_idx


@njit(cache=True)
def sk_gray_collect(Z, threshold, out):
    """Write indices with energy >= threshold into ``out``; -1 on overflow."""
    n = Z.shape[0]
    full = (1 << n) - 1
    cap = out.shape[0]
    W, h, e = _setup(Z)
    sigma = np.ones(n)
    count = 0
    g = 0
    for i in range(0, 1 << (n - 1)):
        if i > 0:
            k = 0
            while not (i >> k) & 1:
                k += 1
            sk = sigma[k]
            e -= 2.0 * sk * h[k]
            for j in range(n):
                h[j] -= 2.0 * sk * W[j, k]
            sigma[k] = -sk
            g ^= 1 << k
        if e >= threshold:
            if count + 2 > cap:
                return -1
            out[count] = g
            out[count + 1] = g ^ full
            count += 2
    return count


@njit(cache=True)
def doob_node(Y, YV, base, scale, f_base, istar, n_groups):
    """Inner sums for one node of the Doob martingale.

    Row ``r`` gives ``g = (max_i(base_i + scale YV[r, i]) - f_base) / scale``
    and the residual ``g - YV[r, istar] >= 0`` against the current maximiser,
    which vanishes whenever the maximiser does not move. Returns the sum of
    residuals and, for ``2 n_groups`` contiguous groups of rows (the first
    ``n_groups`` cover the first half), the sums of ``Y[r]`` times the residual.
    """
    m, d = Y.shape
    half = m // 2
    sums = np.zeros((2 * n_groups, d))
    total = 0.0
    for r in range(2 * half):
        linear = base[istar] + scale * YV[r, istar]
        best = linear
        for i in range(YV.shape[1]):
            v = base[i] + scale * YV[r, i]
            if v > best:
                best = v
        if best == linear:
            continue
        res = (best - linear) / scale
        total += res
        h = r // half
        k = h * n_groups + ((r - h * half) * n_groups) // half
        for j in range(d):
            sums[k, j] += Y[r, j] * res
    return total, sums
