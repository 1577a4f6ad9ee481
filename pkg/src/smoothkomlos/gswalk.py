"""Gram-Schmidt walk.

Each iteration picks a pivot among the alive coordinates (uniformly at random,
kept until it freezes), moves along the direction ``u`` with ``u_pivot = 1``,
``u_frozen = 0`` and the remaining alive entries minimizing
``||v_pivot + sum_i u_i v_i||``, and takes the largest step that stays in the
cube in one of the two directions, chosen so the walk is a martingale.

Randomness: a walk on ``n`` coordinates consumes exactly ``2n`` uniforms from
``make_rng(seed)``; iteration ``k`` reads the pair ``(2k, 2k + 1)`` as
(pivot draw, sign draw). :func:`walk_step` draws the same pair per call, so
iterating it reproduces :func:`gs_walk` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from smoothkomlos.instances import KomlosMatrix
from smoothkomlos.rng import make_rng

LSTSQ_RCOND = 1e-10
FREEZE_TOL = 1e-12
_CHOL_FLOOR = 1e-8
# rebuild the stacked Gram matrix from scratch this often to bound rank-one drift
_GRAM_REFRESH = 64


class WalkError(RuntimeError):
    pass


@dataclass(frozen=True)
class WalkState:
    point: np.ndarray
    alive: np.ndarray
    pivot: int | None = None
    iteration: int = 0

    @classmethod
    def start(cls, point) -> "WalkState":
        z = np.array(point, dtype=float)
        _check_start(z)
        z = _snap(z)
        alive = np.flatnonzero(np.abs(z) < 1.0)
        return cls(z, alive, None, 0)

    @property
    def done(self) -> bool:
        return self.alive.size == 0


def _check_start(z):
    if z.ndim != 1:
        raise ValueError(f"start point must be a vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)) or np.any(np.abs(z) > 1.0):
        raise ValueError("start point must lie in the cube [-1, 1]^n")


def _snap(z):
    z = z.copy()
    hit = np.abs(z) >= 1.0 - FREEZE_TOL
    z[hit] = np.sign(z[hit])
    return z


def _as_vectors(vectors):
    if isinstance(vectors, KomlosMatrix):
        return vectors.entries
    V = np.asarray(vectors, dtype=float)
    if V.ndim != 2:
        raise ValueError(f"vectors must be an m x n matrix, got shape {V.shape}")
    return V


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _step_sizes(x, u, alive, k):
    """Largest steps along +u and -u keeping x in the cube, with the blocking coordinates."""
    dplus = np.inf
    dminus = np.inf
    iplus = -1
    iminus = -1
    for j in range(k):
        i = alive[j]
        ui = u[i]
        if ui > 0.0:
            sp = (1.0 - x[i]) / ui
            sm = (1.0 + x[i]) / ui
        elif ui < 0.0:
            sp = (1.0 + x[i]) / -ui
            sm = (1.0 - x[i]) / -ui
        else:
            continue
        if sp < dplus:
            dplus = sp
            iplus = i
        if sm < dminus:
            dminus = sm
            iminus = i
    return dplus, dminus, iplus, iminus


@njit(cache=True)
def _move_and_freeze(x, u, alive, k, step, blocker, tol):
    """Apply ``x += step * u`` on alive coordinates, snap the blocker, compact ``alive``.

    Returns the new alive count and a flag per removed index via ``frozen``.
    """
    for j in range(k):
        i = alive[j]
        x[i] += step * u[i]
    x[blocker] = 1.0 if x[blocker] > 0.0 else -1.0
    kk = 0
    for j in range(k):
        i = alive[j]
        xi = x[i]
        if xi >= 1.0 - tol:
            x[i] = 1.0
        elif xi <= -1.0 + tol:
            x[i] = -1.0
        else:
            alive[kk] = i
            kk += 1
    return kk


@njit(cache=True)
def _choose_sign(dplus, dminus, draw):
    # +dplus with probability dminus / (dplus + dminus)
    if draw * (dplus + dminus) < dminus:
        return dplus, True
    return -dminus, False


@njit(cache=True)
def _direction_into(V, alive, k, pivot, u, rcond):
    """Write the walk direction for ``pivot`` into ``u`` (alive entries only).

    When the other alive columns span the whole space, the minimum-norm
    least-squares solution is ``-V_r^T (V_r V_r^T)^{-1} v_p``; this d x d
    Cholesky route is taken if the factorization is well conditioned,
    otherwise ``lstsq`` with cutoff ``rcond``.
    """
    m = V.shape[0]
    for j in range(k):
        u[alive[j]] = 0.0
    u[pivot] = 1.0
    if k == 1:
        return
    idx = np.empty(k - 1, np.int64)
    c = 0
    for j in range(k):
        if alive[j] != pivot:
            idx[c] = alive[j]
            c += 1
    if k - 1 >= m:
        G = np.zeros((m, m))
        for c in range(k - 1):
            col = idx[c]
            for a in range(m):
                va = V[a, col]
                if va != 0.0:
                    for b in range(a + 1):
                        G[a, b] += va * V[b, col]
        top = 0.0
        for a in range(m):
            top = max(top, G[a, a])
        ok = top > 0.0
        L = np.zeros((m, m))
        for a in range(m):
            if not ok:
                break
            for b in range(a + 1):
                acc = G[a, b]
                for t in range(b):
                    acc -= L[a, t] * L[b, t]
                if a == b:
                    # pivot floor keeps cond(G) below ~1e8, i.e. cond(V_r) below ~1e4
                    if acc <= _CHOL_FLOOR * top:
                        ok = False
                        break
                    L[a, a] = np.sqrt(acc)
                else:
                    L[a, b] = acc / L[b, b]
        if ok:
            w = np.empty(m)
            for a in range(m):
                acc = -V[a, pivot]
                for t in range(a):
                    acc -= L[a, t] * w[t]
                w[a] = acc / L[a, a]
            for a in range(m - 1, -1, -1):
                acc = w[a]
                for t in range(a + 1, m):
                    acc -= L[t, a] * w[t]
                w[a] = acc / L[a, a]
            for c in range(k - 1):
                col = idx[c]
                acc = 0.0
                for a in range(m):
                    acc += V[a, col] * w[a]
                u[col] = acc
            return
    sub = np.empty((m, k - 1))
    for c in range(k - 1):
        sub[:, c] = V[:, idx[c]]
    rhs = -V[:, pivot].copy()
    sol = np.linalg.lstsq(sub, rhs, rcond)[0]
    for c in range(k - 1):
        u[idx[c]] = sol[c]


@njit(cache=True)
def _walk_generic(V, x, unif, rcond, tol):
    m, n = V.shape
    alive = np.empty(n, np.int64)
    k = 0
    for i in range(n):
        if abs(x[i]) < 1.0 - tol:
            alive[k] = i
            k += 1
        else:
            x[i] = 1.0 if x[i] > 0.0 else -1.0
    u = np.zeros(n)
    pivot = -1
    it = 0
    while k > 0:
        if pivot < 0:
            pos = int(unif[2 * it] * k)
            if pos >= k:
                pos = k - 1
            pivot = alive[pos]
        _direction_into(V, alive, k, pivot, u, rcond)
        dplus, dminus, iplus, iminus = _step_sizes(x, u, alive, k)
        step, up = _choose_sign(dplus, dminus, unif[2 * it + 1])
        blocker = iplus if up else iminus
        k = _move_and_freeze(x, u, alive, k, step, blocker, tol)
        if abs(x[pivot]) == 1.0:
            pivot = -1
        it += 1
    return x, it


@njit(cache=True)
def _gram(Ma, k, d):
    G = np.eye(d)
    for a in range(d):
        for b in range(a + 1):
            s = 0.0
            for j in range(k):
                s += Ma[a, j] * Ma[b, j]
            G[a, b] += s
    return G


@njit(cache=True)
def _spd_solve(G, mp, L, z):
    """Solve ``(G - mp mp^T) z = mp`` by Cholesky; only the lower triangle of G is read."""
    d = mp.shape[0]
    for a in range(d):
        for b in range(a + 1):
            s = G[a, b] - mp[a] * mp[b]
            for c in range(b):
                s -= L[a, c] * L[b, c]
            if a == b:
                L[a, a] = np.sqrt(s)
            else:
                L[a, b] = s / L[b, b]
    for a in range(d):
        s = mp[a]
        for c in range(a):
            s -= L[a, c] * z[c]
        z[a] = s / L[a, a]
    for a in range(d - 1, -1, -1):
        s = z[a]
        for c in range(a + 1, d):
            s -= L[c, a] * z[c]
        z[a] = s / L[a, a]


@njit(cache=True)
def _walk_stacked(M, x, unif, tol):
    # Direction for the matrix [M; I_n]: the alive non-pivot block A satisfies
    # u_A = -(M_A^T M_A + I)^{-1} M_A^T m_p = -M_A^T (I_d + M_A M_A^T)^{-1} m_p.
    # Columns live in a working buffer (ids, xa, Ma, live) of width w; frozen
    # columns are masked out and the buffer is compacted once half of it is dead.
    # The buffer keeps increasing index order, so rank among live slots is the
    # same as rank in the sorted alive set.
    d, n = M.shape
    ids = np.empty(n, np.int64)
    xa = np.empty(n)
    live = np.empty(n)
    Ma = np.empty((d, n))
    w = 0
    for i in range(n):
        if abs(x[i]) < 1.0 - tol:
            ids[w] = i
            xa[w] = x[i]
            live[w] = 1.0
            w += 1
        else:
            x[i] = 1.0 if x[i] > 0.0 else -1.0
    for a in range(d):
        for j in range(w):
            Ma[a, j] = M[a, ids[j]]
    k = w
    G = _gram(Ma, w, d)  # lower triangle of I + sum over alive of m_i m_i^T
    L = np.zeros((d, d))
    mp = np.empty(d)
    z = np.empty(d)
    u = np.empty(n)
    pivot = -1  # slot of the pivot within the buffer
    it = 0
    since_refresh = 0
    while k > 0:
        if pivot < 0:
            rank = int(unif[2 * it] * k)
            if rank >= k:
                rank = k - 1
            c = -1
            for j in range(w):
                if live[j] != 0.0:
                    c += 1
                    if c == rank:
                        pivot = j
                        break
        for a in range(d):
            mp[a] = Ma[a, pivot]
        _spd_solve(G, mp, L, z)
        for j in range(w):
            u[j] = 0.0
        for a in range(d):
            za = z[a]
            for j in range(w):
                u[j] -= Ma[a, j] * za
        for j in range(w):
            u[j] *= live[j]
        u[pivot] = 1.0
        dplus = np.inf
        dminus = np.inf
        jplus = -1
        jminus = -1
        for j in range(w):
            # frozen slots have u = 0, so both comparisons are false for them
            uj = u[j]
            au = abs(uj)
            xs = math.copysign(1.0, uj) * xa[j]
            if 1.0 - xs < dplus * au:
                dplus = (1.0 - xs) / au
                jplus = j
            if 1.0 + xs < dminus * au:
                dminus = (1.0 + xs) / au
                jminus = j
        if unif[2 * it + 1] * (dplus + dminus) < dminus:
            step = dplus
            blocker = jplus
        else:
            step = -dminus
            blocker = jminus
        for j in range(w):
            xa[j] += step * u[j]
        xa[blocker] = 1.0 if xa[blocker] > 0.0 else -1.0
        for j in range(w):
            if live[j] != 0.0:
                xj = xa[j]
                if xj >= 1.0 - tol or xj <= -1.0 + tol:
                    x[ids[j]] = 1.0 if xj > 0.0 else -1.0
                    live[j] = 0.0
                    k -= 1
                    since_refresh += 1
                    for a in range(d):
                        ca = Ma[a, j]
                        for b in range(a + 1):
                            G[a, b] -= ca * Ma[b, j]
        if live[pivot] == 0.0:
            pivot = -1
        if 2 * k < w:
            kk = 0
            for j in range(w):
                if live[j] != 0.0:
                    if j == pivot:
                        pivot = kk
                    ids[kk] = ids[j]
                    xa[kk] = xa[j]
                    kk += 1
            for a in range(d):
                kk = 0
                for j in range(w):
                    if live[j] != 0.0:
                        Ma[a, kk] = Ma[a, j]
                        kk += 1
            w = k
            for j in range(w):
                live[j] = 1.0
        if since_refresh >= _GRAM_REFRESH:
            G = _gram_masked(Ma, live, w, d)
            since_refresh = 0
        it += 1
    return x, it


@njit(cache=True)
def _gram_masked(Ma, live, w, d):
    G = np.eye(d)
    for a in range(d):
        for b in range(a + 1):
            s = 0.0
            for j in range(w):
                s += Ma[a, j] * Ma[b, j] * live[j]
            G[a, b] += s
    return G


# ---------------------------------------------------------------------------
# public API


def direction(V, alive, pivot) -> np.ndarray:
    """Walk direction for ``pivot`` given the alive index set (minimum-norm least squares)."""
    V = np.ascontiguousarray(_as_vectors(V), dtype=float)
    alive = np.asarray(alive, dtype=np.int64)
    u = np.zeros(V.shape[1])
    _direction_into(V, alive, alive.size, int(pivot), u, LSTSQ_RCOND)
    return u


def walk_step(state: WalkState, vectors, rng: np.random.Generator) -> WalkState:
    """One walk iteration; draws a (pivot, sign) pair of uniforms from ``rng``."""
    if state.done:
        raise WalkError("walk_step called on a finished walk")
    V = _as_vectors(vectors)
    pivot_draw, sign_draw = rng.random(2)
    alive = state.alive
    k = alive.size
    pivot = state.pivot
    if pivot is None or abs(state.point[pivot]) == 1.0:
        pivot = int(alive[min(int(pivot_draw * k), k - 1)])
    u = direction(V, alive, pivot)
    x = state.point.copy()
    work = alive.copy()
    dplus, dminus, iplus, iminus = _step_sizes(x, u, work, k)
    if not (dplus > 0.0 or dminus > 0.0):
        raise WalkError("degenerate step: both step sizes are zero")
    step, up = _choose_sign(dplus, dminus, sign_draw)
    kk = _move_and_freeze(x, u, work, k, step, iplus if up else iminus, FREEZE_TOL)
    new_pivot = None if abs(x[pivot]) == 1.0 else pivot
    return WalkState(x, work[:kk].copy(), new_pivot, state.iteration + 1)


def _run(V, start, seed, stacked):
    n = V.shape[1]
    if start is None:
        z = np.zeros(n)
    else:
        z = np.array(start, dtype=float)
        _check_start(z)
        if z.shape[0] != n:
            raise ValueError(f"start has length {z.shape[0]}, expected {n}")
    unif = make_rng(seed).random(2 * n)
    if stacked:
        x, iters = _walk_stacked(np.ascontiguousarray(V), z, unif, FREEZE_TOL)
    else:
        x, iters = _walk_generic(np.ascontiguousarray(V), z, unif, LSTSQ_RCOND, FREEZE_TOL)
    return x, int(iters)


def gs_walk(vectors, start=None, seed: int = 0, *, return_iterations: bool = False):
    """Round ``start`` (default 0) to a +-1 coloring with the Gram-Schmidt walk.

    With column norms at most B, ``sum_j (x_j - start_j) v_j`` is B-subgaussian
    and ``E[x] = start``.
    """
    V = _as_vectors(vectors)
    x, iters = _run(V, start, seed, stacked=False)
    return (x, iters) if return_iterations else x


def stacked_matrix(M) -> np.ndarray:
    """``[M; I_n]``, the (d + n) x n matrix the stacked walk balances."""
    M = _as_vectors(M)
    return np.vstack([M, np.eye(M.shape[1])])


def sample_stacked(M, seed: int, *, return_iterations: bool = False):
    """Walk from 0 on ``[M; I_n]``; returns the coloring ``x`` and ``Mx``.

    Uses the closed form of the least-squares direction for the identity
    block, so the cost per step is O(d * alive) rather than a dense solve.
    """
    A = _as_vectors(M)
    x, iters = _run(A, None, seed, stacked=True)
    mx = A @ x
    if return_iterations:
        return x, mx, iters
    return x, mx
