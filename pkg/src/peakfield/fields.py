"""Gaussian field families and their exact samplers.

Every field is a linear image of a vector of i.i.d. standard normals (the
*driver*): edge weights for the directed polymer, the disorder matrix for
S-K, one normal per block, ``(Z, Z_1..Z_N)`` for the shifted field and
``Gamma`` for an explicit factorisation. Structured fields never build the
``N x N`` covariance; they answer covariance queries through oracles.

Indices are 0-based. Directed-polymer paths are ranked in lexicographic order
of their move strings with right (R) before up (U); S-K configurations map
index ``i`` to spins ``s_k = -1`` iff bit ``k`` of ``i`` is set.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np

from ._kernels import sk_gray_collect, sk_gray_max
from ._rng import make_rng

ENUMERATION_LIMIT = 1 << 20
SK_ENUMERATION_LIMIT = 24
LEVEL_SET_CAP = 10**6
ROW_NORM_TOL = 1e-12
PSD_TOL = 1e-10
CLIP_WARN = 1e-8


class FieldError(ValueError):
    """Invalid field parameters."""


class NotEnumerableError(FieldError):
    """The operation needs every field value but the index set is too large."""


class LevelSetOverflow(RuntimeError):
    """A level set exceeded the configured cap; the threshold is too low."""


def _check_normalization(value: str) -> str:
    value = {"paper-raw": "raw", "unit-variance": "unit"}.get(value, value)
    if value not in ("raw", "unit"):
        raise FieldError(f"normalization must be 'raw' or 'unit', got {value!r}")
    return value


class GaussianField:
    """Common interface of all field families.

    Subclasses provide ``size``, ``driver_dim``, ``raw_max_variance`` and the
    raw value/covariance machinery; ``scale`` multiplies raw values so that
    ``normalization='unit'`` gives maximal variance one.
    """

    kind: str = ""
    normalization: str = "raw"

    # -- descriptors -------------------------------------------------------
    @property
    def size(self) -> int:
        raise NotImplementedError

    @property
    def driver_dim(self) -> int:
        raise NotImplementedError

    @property
    def raw_max_variance(self) -> float:
        raise NotImplementedError

    @property
    def scale(self) -> float:
        if self.normalization == "unit":
            return 1.0 / math.sqrt(self.raw_max_variance)
        return 1.0

    @property
    def max_variance(self) -> float:
        return self.raw_max_variance * self.scale**2

    @property
    def enumerable(self) -> bool:
        return self.size <= ENUMERATION_LIMIT

    def params(self) -> dict:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "size": self.size, "normalization": self.normalization, **self.params()}

    def _check_index(self, i) -> int:
        i = int(i)
        if not 0 <= i < self.size:
            raise IndexError(f"index {i} outside [0, {self.size})")
        return i

    # -- covariance oracles ------------------------------------------------
    def variance_of(self, i) -> float:
        return self.covariance(i, i)

    def covariance(self, i, j) -> float:
        raise NotImplementedError

    def covariance_block(self, rows, cols) -> np.ndarray:
        """Covariance submatrix ``R[rows][:, cols]``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return np.array([[self.covariance(i, j) for j in cols] for i in rows], dtype=float).reshape(
            rows.size, cols.size
        )

    def covariance_matrix(self) -> np.ndarray:
        self.require_enumerable()
        idx = np.arange(self.size)
        return self.covariance_block(idx, idx)

    # -- sampling ----------------------------------------------------------
    def draw_drivers(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.standard_normal((int(size), self.driver_dim))

    def require_enumerable(self) -> None:
        if not self.enumerable:
            raise NotEnumerableError(
                f"{self.kind} field with N={self.size} exceeds the enumeration limit {ENUMERATION_LIMIT}"
            )

    def values(self, drivers) -> np.ndarray:
        """All field values, shape ``(B, N)``, for a batch of drivers."""
        self.require_enumerable()
        return self._values(np.atleast_2d(np.asarray(drivers, dtype=float)))

    def _values(self, drivers: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_of(self, driver, i) -> float:
        return float(self.values(driver)[0, self._check_index(i)])

    def values_at(self, drivers, idx) -> np.ndarray:
        """Value of index ``idx[b]`` under driver ``drivers[b]``."""
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        idx = np.broadcast_to(np.asarray(idx, dtype=np.int64), (drivers.shape[0],))
        return np.array([self.value_of(d, i) for d, i in zip(drivers, idx)])

    def supremum(self, drivers) -> tuple[np.ndarray, np.ndarray]:
        """Maxima and lowest maximising indices for a batch of drivers."""
        vals = self.values(drivers)
        arg = np.argmax(vals, axis=1)
        return vals[np.arange(vals.shape[0]), arg], arg.astype(np.int64)

    def draw_suprema(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.supremum(self.draw_drivers(rng, size))[0]

    def level_set(self, driver, threshold: float, cap: int = LEVEL_SET_CAP) -> np.ndarray:
        """Ascending indices whose value is ``>= threshold``."""
        vals = self.values(driver)[0]
        idx = np.flatnonzero(vals >= threshold)
        if idx.size > cap:
            raise LevelSetOverflow(f"level set has {idx.size} > {cap} indices")
        return idx


# ---------------------------------------------------------------------------
# directed polymer


@dataclass(frozen=True, eq=False)
class DirectedPolymer(GaussianField):
    """Monotone lattice paths from ``(0,0)`` to ``(n,n)`` with i.i.d. edge weights."""

    n: int
    normalization: str = "raw"
    kind = "directed-polymer"

    def __post_init__(self):
        if int(self.n) < 1:
            raise FieldError("directed polymer needs n >= 1")
        if int(self.n) > 30:
            raise FieldError("directed polymer path ranks overflow 64 bits beyond n = 30")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "normalization", _check_normalization(self.normalization))

    @property
    def size(self) -> int:
        return math.comb(2 * self.n, self.n)

    @property
    def driver_dim(self) -> int:
        return 2 * self.n * (self.n + 1)

    @property
    def raw_max_variance(self) -> float:
        return float(2 * self.n)

    def params(self) -> dict:
        return {"n": self.n}

    # edge ids: horizontal (x,y)->(x+1,y) first, then vertical (x,y)->(x,y+1)
    def h_edge(self, x, y):
        return x * (self.n + 1) + y

    def v_edge(self, x, y):
        return self.n * (self.n + 1) + x * self.n + y

    @cached_property
    def _comb(self) -> np.ndarray:
        m = 2 * self.n + 1
        table = np.zeros((m, m), dtype=np.int64)
        for a in range(m):
            for b in range(a + 1):
                table[a, b] = math.comb(a, b)
        return table

    def _n_starting_with_r(self, r: int, u: int) -> int:
        # completions with r rights and u ups that begin with R
        return math.comb(r + u - 1, r - 1) if r > 0 else 0

    def unrank(self, i) -> np.ndarray:
        """Move string (0 = right, 1 = up) of path ``i``."""
        i = self._check_index(i)
        r = u = self.n
        moves = np.empty(2 * self.n, dtype=np.int8)
        for pos in range(2 * self.n):
            c = self._n_starting_with_r(r, u)
            if i < c:
                moves[pos] = 0
                r -= 1
            else:
                i -= c
                moves[pos] = 1
                u -= 1
        return moves

    def rank(self, moves) -> int:
        moves = np.asarray(moves)
        if moves.size != 2 * self.n or int(moves.sum()) != self.n:
            raise FieldError("not a monotone path move string")
        r = u = self.n
        out = 0
        for m in moves:
            if m:
                out += self._n_starting_with_r(r, u)
                u -= 1
            else:
                r -= 1
        return out

    def path_edges(self, moves) -> np.ndarray:
        x = y = 0
        edges = np.empty(len(moves), dtype=np.int64)
        for k, m in enumerate(moves):
            if m:
                edges[k] = self.v_edge(x, y)
                y += 1
            else:
                edges[k] = self.h_edge(x, y)
                x += 1
        return edges

    @cached_property
    def all_path_edges(self) -> np.ndarray:
        """Edge ids of every path, shape ``(N, 2n)``, rows in rank order."""
        self.require_enumerable()
        n = self.n
        moves = np.ones((self.size, 2 * n), dtype=np.int64)
        # R-position tuples in lexicographic order enumerate move strings in rank order
        for row, rpos in enumerate(combinations(range(2 * n), n)):
            moves[row, list(rpos)] = 0
        xs = np.cumsum(1 - moves, axis=1) - (1 - moves)
        ys = np.cumsum(moves, axis=1) - moves
        return np.where(moves == 0, xs * (n + 1) + ys, n * (n + 1) + xs * n + ys)

    def _incidence(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros((idx.size, self.driver_dim))
        for row, i in enumerate(idx):
            out[row, self.path_edges(self.unrank(i))] = 1.0
        return out

    def covariance(self, i, j) -> float:
        a = set(self.path_edges(self.unrank(i)).tolist())
        b = set(self.path_edges(self.unrank(j)).tolist())
        return len(a & b) * self.scale**2

    def covariance_block(self, rows, cols) -> np.ndarray:
        return (self._incidence(rows) @ self._incidence(cols).T) * self.scale**2

    def _values(self, drivers):
        edges = self.all_path_edges
        out = np.zeros((drivers.shape[0], self.size))
        # accumulate edge by edge so each value is the left-to-right path sum
        for k in range(edges.shape[1]):
            out += drivers[:, edges[:, k]]
        return out * self.scale if self.scale != 1.0 else out

    def value_of(self, driver, i) -> float:
        driver = np.asarray(driver, dtype=float).ravel()
        total = 0.0
        for e in self.path_edges(self.unrank(i)):
            total += driver[e]
        return total * self.scale

    def _split(self, drivers):
        n = self.n
        b = drivers.shape[0]
        hz = drivers[:, : n * (n + 1)].reshape(b, n, n + 1)
        vz = drivers[:, n * (n + 1):].reshape(b, n + 1, n)
        return hz, vz

    def supremum(self, drivers):
        """Last-passage dynamic programme in ``O(n^2)`` per driver.

        Alongside the best prefix value each lattice site carries the move
        string of its lexicographically smallest optimal prefix, encoded as an
        integer, which resolves ties toward the lowest path rank.
        """
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        n = self.n
        hz, vz = self._split(drivers)
        b = drivers.shape[0]
        best = np.empty((n + 1, n + 1, b))
        key = np.zeros((n + 1, n + 1, b), dtype=np.int64)
        best[0, 0] = 0.0
        for x in range(n + 1):
            for y in range(n + 1):
                if x == 0 and y == 0:
                    continue
                if y == 0:
                    best[x, 0] = best[x - 1, 0] + hz[:, x - 1, 0]
                    key[x, 0] = 2 * key[x - 1, 0]
                    continue
                if x == 0:
                    best[0, y] = best[0, y - 1] + vz[:, 0, y - 1]
                    key[0, y] = 2 * key[0, y - 1] + 1
                    continue
                from_left = best[x - 1, y] + hz[:, x - 1, y]
                from_below = best[x, y - 1] + vz[:, x, y - 1]
                key_left = 2 * key[x - 1, y]
                key_below = 2 * key[x, y - 1] + 1
                take_left = (from_left > from_below) | ((from_left == from_below) & (key_left < key_below))
                best[x, y] = np.where(take_left, from_left, from_below)
                key[x, y] = np.where(take_left, key_left, key_below)
        return best[n, n] * self.scale, self._rank_keys(key[n, n])

    def _rank_keys(self, keys: np.ndarray) -> np.ndarray:
        n = self.n
        comb = self._comb
        r = np.full(keys.shape, n, dtype=np.int64)
        u = np.full(keys.shape, n, dtype=np.int64)
        ranks = np.zeros(keys.shape, dtype=np.int64)
        for pos in range(2 * n):
            bit = (keys >> (2 * n - 1 - pos)) & 1
            starts_r = np.where(r > 0, comb[np.maximum(r + u - 1, 0), np.maximum(r - 1, 0)], 0)
            ranks += np.where(bit == 1, starts_r, 0)
            r -= 1 - bit
            u -= bit
        return ranks

    def _completion_potential(self, hz, vz) -> np.ndarray:
        n = self.n
        g = np.full((n + 1, n + 1), -np.inf)
        g[n, n] = 0.0
        for x in range(n, -1, -1):
            for y in range(n, -1, -1):
                if x == n and y == n:
                    continue
                right = hz[x, y] + g[x + 1, y] if x < n else -np.inf
                up = vz[x, y] + g[x, y + 1] if y < n else -np.inf
                g[x, y] = max(right, up)
        return g

    def level_set(self, driver, threshold: float, cap: int = LEVEL_SET_CAP) -> np.ndarray:
        """Pruned depth-first enumeration of the paths with value ``>= threshold``.

        A partial path is extended only while its value plus the best possible
        completion can still reach the threshold. Leaves are accepted on their
        exact left-to-right sum, so the pruning slack never changes the result.
        """
        driver = np.asarray(driver, dtype=float).ravel()
        hz, vz = self._split(driver[None, :])
        hz, vz = hz[0], vz[0]
        n = self.n
        g = self._completion_potential(hz, vz)
        raw_threshold = threshold / self.scale
        slack = 1e-9 * (1.0 + float(np.abs(driver).sum()))
        found: list[int] = []
        # stack entries: x, y, prefix value, rank offset
        stack = [(0, 0, 0.0, 0)]
        while stack:
            x, y, p, rk = stack.pop()
            if p + g[x, y] < raw_threshold - slack:
                continue
            if x == n and y == n:
                if p * self.scale >= threshold:
                    found.append(rk)
                    if len(found) > cap:
                        raise LevelSetOverflow(f"level set exceeds {cap} paths")
                continue
            r, u = n - x, n - y
            if y < n:
                stack.append((x, y + 1, p + vz[x, y], rk + self._n_starting_with_r(r, u)))
            if x < n:
                stack.append((x + 1, y, p + hz[x, y], rk))
        return np.asarray(found, dtype=np.int64)


def build_directed_polymer(n: int, normalization: str = "raw") -> DirectedPolymer:
    return DirectedPolymer(n, normalization)


# ---------------------------------------------------------------------------
# Sherrington-Kirkpatrick


@dataclass(frozen=True, eq=False)
class SKModel(GaussianField):
    """``X_s = (2n)^{-1/2} sum_{i,j} s_i s_j Z_ij`` over all ordered pairs.

    Under this convention each value has variance ``n/2``.
    """

    n: int
    normalization: str = "raw"
    limit: int = SK_ENUMERATION_LIMIT
    kind = "sk"

    def __post_init__(self):
        if int(self.n) < 1:
            raise FieldError("S-K model needs n >= 1")
        if int(self.n) > int(self.limit):
            raise FieldError(f"S-K n={self.n} exceeds the sweep limit {self.limit}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "normalization", _check_normalization(self.normalization))

    @property
    def size(self) -> int:
        return 1 << self.n

    @property
    def driver_dim(self) -> int:
        return self.n * self.n

    @property
    def raw_max_variance(self) -> float:
        return self.n / 2.0

    def params(self) -> dict:
        return {"n": self.n}

    def spins(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        bits = (idx[:, None] >> np.arange(self.n)) & 1
        return 1.0 - 2.0 * bits

    def covariance(self, i, j) -> float:
        s = self.spins([self._check_index(i), self._check_index(j)])
        overlap = float(s[0] @ s[1])
        return overlap * overlap / (2 * self.n) * self.scale**2

    def covariance_block(self, rows, cols) -> np.ndarray:
        overlap = self.spins(rows) @ self.spins(cols).T
        return overlap**2 / (2 * self.n) * self.scale**2

    @property
    def _norm(self) -> float:
        return self.scale / math.sqrt(2 * self.n)

    def _energies(self, z: np.ndarray, idx) -> np.ndarray:
        s = self.spins(idx)
        return ((s @ z) * s).sum(axis=1)

    def _values(self, drivers):
        out = np.empty((drivers.shape[0], self.size))
        idx = np.arange(self.size)
        for b in range(drivers.shape[0]):
            out[b] = self._energies(drivers[b].reshape(self.n, self.n), idx)
        return out * self._norm

    def value_of(self, driver, i) -> float:
        z = np.asarray(driver, dtype=float).reshape(self.n, self.n)
        return float(self._energies(z, [self._check_index(i)])[0] * self._norm)

    def supremum(self, drivers):
        """Gray-code sweep reusing ``O(n)`` work per configuration."""
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        vals = np.empty(drivers.shape[0])
        arg = np.empty(drivers.shape[0], dtype=np.int64)
        for b in range(drivers.shape[0]):
            z = drivers[b].reshape(self.n, self.n)
            _, idx = sk_gray_max(np.ascontiguousarray(z))
            arg[b] = idx
            # report the directly evaluated energy, not the running sum
            vals[b] = self._energies(z, [idx])[0] * self._norm
        return vals, arg

    def level_set(self, driver, threshold: float, cap: int = LEVEL_SET_CAP) -> np.ndarray:
        z = np.ascontiguousarray(np.asarray(driver, dtype=float).reshape(self.n, self.n))
        raw = threshold / self._norm if np.isfinite(threshold) else threshold
        slack = 1e-9 * (1.0 + float(np.abs(z).sum()))
        out = np.empty(min(cap + 2, self.size), dtype=np.int64)
        count = sk_gray_collect(z, raw - slack if np.isfinite(raw) else -np.inf, out)
        if count < 0:
            raise LevelSetOverflow(f"level set exceeds {cap} configurations")
        idx = np.sort(out[:count])
        keep = self._energies(z, idx) * self._norm >= threshold
        idx = idx[keep]
        if idx.size > cap:
            raise LevelSetOverflow(f"level set exceeds {cap} configurations")
        return idx


def build_sk(n: int, normalization: str = "raw", limit: int = SK_ENUMERATION_LIMIT) -> SKModel:
    return SKModel(n, normalization, limit)


# ---------------------------------------------------------------------------
# block field


@dataclass(frozen=True, eq=False)
class BlockField(GaussianField):
    """``K`` independent standard normals, each copied ``N/K`` times in contiguous blocks."""

    K: int
    N: int
    kind = "block"

    def __post_init__(self):
        K, N = int(self.K), int(self.N)
        if K < 1 or N < 1:
            raise FieldError("block field needs K >= 1 and N >= 1")
        if N % K:
            raise FieldError(f"K={K} does not divide N={N}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "N", N)

    @property
    def size(self) -> int:
        return self.N

    @property
    def driver_dim(self) -> int:
        return self.K

    @property
    def raw_max_variance(self) -> float:
        return 1.0

    @property
    def copies(self) -> int:
        return self.N // self.K

    def params(self) -> dict:
        return {"K": self.K, "N": self.N}

    def block_of(self, idx):
        return np.asarray(idx, dtype=np.int64) // self.copies

    def covariance(self, i, j) -> float:
        return float(self.block_of(self._check_index(i)) == self.block_of(self._check_index(j)))

    def covariance_block(self, rows, cols) -> np.ndarray:
        return (self.block_of(rows)[:, None] == self.block_of(cols)[None, :]).astype(float)

    def _values(self, drivers):
        return np.repeat(drivers, self.copies, axis=1)

    def value_of(self, driver, i) -> float:
        return float(np.asarray(driver, dtype=float).ravel()[self.block_of(self._check_index(i))])

    def values_at(self, drivers, idx):
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        return drivers[np.arange(drivers.shape[0]), self.block_of(idx)]

    def supremum(self, drivers):
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        arg = np.argmax(drivers, axis=1)
        return drivers[np.arange(drivers.shape[0]), arg], arg.astype(np.int64) * self.copies

    def level_set(self, driver, threshold: float, cap: int = LEVEL_SET_CAP) -> np.ndarray:
        blocks = np.flatnonzero(np.asarray(driver, dtype=float).ravel() >= threshold)
        if blocks.size * self.copies > cap:
            raise LevelSetOverflow(f"level set has {blocks.size * self.copies} > {cap} indices")
        return (blocks[:, None] * self.copies + np.arange(self.copies)).ravel()


def build_block(K: int, N: int) -> BlockField:
    return BlockField(K, N)


# ---------------------------------------------------------------------------
# shifted field


@dataclass(frozen=True, eq=False)
class ShiftedField(GaussianField):
    """``X_i = Z + Z_i`` with ``Var Z = 1 - alpha^2/2`` and ``Var Z_i = alpha^2/2``."""

    N: int
    alpha: float
    kind = "shifted"

    def __post_init__(self):
        if int(self.N) < 1:
            raise FieldError("shifted field needs N >= 1")
        a = float(self.alpha)
        if not 0.0 < a * a / 2.0 < 1.0 or a <= 0:
            raise FieldError(f"alpha must lie in (0, sqrt(2)), got {a}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "alpha", a)

    @property
    def size(self) -> int:
        return self.N

    @property
    def driver_dim(self) -> int:
        return self.N + 1

    @property
    def raw_max_variance(self) -> float:
        return 1.0

    @property
    def common_sd(self) -> float:
        return math.sqrt(1.0 - self.alpha**2 / 2.0)

    @property
    def own_sd(self) -> float:
        return self.alpha / math.sqrt(2.0)

    def params(self) -> dict:
        return {"N": self.N, "alpha": self.alpha}

    def covariance(self, i, j) -> float:
        return 1.0 if self._check_index(i) == self._check_index(j) else self.common_sd**2

    def covariance_block(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.full((rows.size, cols.size), self.common_sd**2)
        out[rows[:, None] == cols[None, :]] = 1.0
        return out

    def _values(self, drivers):
        return self.common_sd * drivers[:, :1] + self.own_sd * drivers[:, 1:]

    def value_of(self, driver, i) -> float:
        d = np.asarray(driver, dtype=float).ravel()
        return float(self.common_sd * d[0] + self.own_sd * d[1 + self._check_index(i)])

    def values_at(self, drivers, idx):
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        own = drivers[np.arange(drivers.shape[0]), 1 + np.asarray(idx, dtype=np.int64)]
        return self.common_sd * drivers[:, 0] + self.own_sd * own

    def supremum(self, drivers):
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        arg = np.argmax(drivers[:, 1:], axis=1)
        own = drivers[np.arange(drivers.shape[0]), 1 + arg]
        return self.common_sd * drivers[:, 0] + self.own_sd * own, arg.astype(np.int64)

    def draw_suprema(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Suprema drawn without materialising the ``N`` individual shocks.

        The maximum of ``N`` i.i.d. standard normals is ``Phi^{-1}(U^{1/N})``;
        it is evaluated as ``ndtri_exp(log(U)/N)`` to keep precision when
        ``U^{1/N}`` is close to one.
        """
        from scipy.special import ndtri_exp

        common = rng.standard_normal(size)
        # midpoints of a 2^-53 grid keep u strictly inside (0, 1)
        u = (rng.integers(0, 1 << 53, size=size) + 0.5) / float(1 << 53)
        top = ndtri_exp(np.log(u) / self.N)
        return self.common_sd * common + self.own_sd * top


def build_shifted(N: int, alpha: float) -> ShiftedField:
    return ShiftedField(N, alpha)


# ---------------------------------------------------------------------------
# explicit factorisation


@dataclass(frozen=True, eq=False)
class ExplicitField(GaussianField):
    """``X_i = <v_i, Gamma> + mu_i`` for factor rows ``v_i`` of norm at most one."""

    factor: np.ndarray
    means: np.ndarray | None = None
    normalization: str = "raw"
    kind = "explicit"

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.factor, dtype=float))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise FieldError("factor must be a non-empty matrix")
        norms = np.linalg.norm(v, axis=1)
        if norms.max() > 1.0 + ROW_NORM_TOL:
            raise FieldError(f"factor row norm {norms.max():.6g} exceeds 1")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "factor", v)
        if self.means is not None:
            mu = np.asarray(self.means, dtype=float).ravel().copy()
            if mu.size != v.shape[0]:
                raise FieldError("means must have one entry per factor row")
            mu.setflags(write=False)
            object.__setattr__(self, "means", mu)
        object.__setattr__(self, "normalization", _check_normalization(self.normalization))

    @property
    def size(self) -> int:
        return self.factor.shape[0]

    @property
    def driver_dim(self) -> int:
        return self.factor.shape[1]

    @property
    def raw_max_variance(self) -> float:
        return float(np.max(np.einsum("ij,ij->i", self.factor, self.factor)))

    @property
    def scaled_factor(self) -> np.ndarray:
        return self.factor * self.scale

    @property
    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.scaled_factor, axis=1)

    def params(self) -> dict:
        return {"dim": self.driver_dim, "centered": self.means is None}

    def covariance(self, i, j) -> float:
        v = self.scaled_factor
        return float(v[self._check_index(i)] @ v[self._check_index(j)])

    def covariance_block(self, rows, cols) -> np.ndarray:
        v = self.scaled_factor
        return v[np.asarray(rows, dtype=np.int64)] @ v[np.asarray(cols, dtype=np.int64)].T

    def _values(self, drivers):
        out = drivers @ self.scaled_factor.T
        return out + self.means if self.means is not None else out

    def values_at(self, drivers, idx):
        drivers = np.atleast_2d(np.asarray(drivers, dtype=float))
        idx = np.broadcast_to(np.asarray(idx, dtype=np.int64), (drivers.shape[0],))
        out = np.einsum("bd,bd->b", drivers, self.scaled_factor[idx])
        return out + self.means[idx] if self.means is not None else out


def psd_factor(cov, warn_tol: float = CLIP_WARN, reject_tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric square-root factor of a covariance, clipping tiny negative eigenvalues."""
    c = np.asarray(cov, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise FieldError("covariance must be a square matrix")
    if not np.allclose(c, c.T, rtol=0, atol=1e-12 * max(1.0, np.abs(c).max())):
        raise FieldError("covariance must be symmetric")
    c = (c + c.T) / 2.0
    trace = float(np.trace(c))
    lam, vec = np.linalg.eigh(c)
    if lam.min() < -reject_tol * max(trace, 1e-300):
        raise FieldError(f"covariance is not PSD (smallest eigenvalue {lam.min():.3g})")
    clipped = float(-lam[lam < 0].sum())
    if clipped > warn_tol * trace:
        warnings.warn(f"clipped {clipped:.3g} negative eigenvalue mass from covariance", RuntimeWarning)
    return vec * np.sqrt(np.clip(lam, 0.0, None))


def build_explicit(factor=None, means=None, covariance=None, normalization: str = "raw") -> ExplicitField:
    if (factor is None) == (covariance is None):
        raise FieldError("give exactly one of factor or covariance")
    if covariance is not None:
        factor = psd_factor(covariance)
    return ExplicitField(np.asarray(factor, dtype=float), means, normalization)


def load_covariance_csv(path: str | Path) -> np.ndarray:
    """Dense, row-major, header-free covariance matrix."""
    cov = np.loadtxt(path, delimiter=",", ndmin=2)
    if cov.shape[0] != cov.shape[1]:
        raise FieldError(f"{path}: covariance is {cov.shape[0]}x{cov.shape[1]}, not square")
    return cov


def build_independent(N: int) -> BlockField:
    return BlockField(N, N)


def orthonormal(N: int) -> ExplicitField:
    return ExplicitField(np.eye(N))


def as_explicit(field: GaussianField) -> ExplicitField:
    """Explicit representation with the same covariance, rescaled to maximal variance one."""
    if isinstance(field, ExplicitField):
        return ExplicitField(field.scaled_factor / math.sqrt(field.max_variance), field.means)
    cov = field.covariance_matrix() / field.max_variance
    factor = psd_factor(cov)
    # rounding in the square root can push a unit row norm just past one
    target = np.sqrt(np.clip(np.diag(cov), 0.0, 1.0))
    factor = factor / np.maximum(np.linalg.norm(factor, axis=1) / target, 1.0)[:, None]
    for _ in range(8):
        over = np.einsum("ij,ij->i", factor, factor) > target**2
        if not over.any():
            break
        factor[over] *= 1.0 - 4.0 * np.finfo(float).eps
    return ExplicitField(factor)


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True, eq=False)
class FieldSample:
    """One realisation: the driver normals plus the RNG coordinates that made them."""

    field: GaussianField
    driver: np.ndarray
    seed: int | None = None
    stream: int | None = None

    def __post_init__(self):
        d = np.asarray(self.driver, dtype=float).ravel().copy()
        if d.size != self.field.driver_dim:
            raise FieldError(f"driver has {d.size} entries, field expects {self.field.driver_dim}")
        d.setflags(write=False)
        object.__setattr__(self, "driver", d)

    def value_of(self, i) -> float:
        return self.field.value_of(self.driver, i)

    def values(self) -> np.ndarray:
        return self.field.values(self.driver)[0]

    def supremum(self) -> tuple[float, int]:
        vals, arg = self.field.supremum(self.driver[None, :])
        return float(vals[0]), int(arg[0])

    def level_set(self, threshold: float, cap: int = LEVEL_SET_CAP) -> np.ndarray:
        return self.field.level_set(self.driver, threshold, cap)


def sample(field: GaussianField, seed: int, stream: int = 0) -> FieldSample:
    driver = field.draw_drivers(make_rng(seed, stream), 1)[0]
    return FieldSample(field, driver, seed, stream)


def sample_batch(field: GaussianField, seed: int, stream: int, size: int) -> np.ndarray:
    return field.draw_drivers(make_rng(seed, stream), size)
