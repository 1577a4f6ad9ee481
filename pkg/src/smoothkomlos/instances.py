"""Komlos instances: generators, Gaussian smoothing, discrepancy and text I/O."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from smoothkomlos.rng import make_rng

NORM_TOL = 1e-12

GENERATORS = ("zero", "repeat_unit", "random_unit_columns", "orthonormal_cycle", "sparse_tcol")


class InstanceError(ValueError):
    """Raised for malformed matrices, bad generator names or invalid noise settings."""


def _as_array(A):
    if isinstance(A, (KomlosMatrix, SmoothedMatrix)):
        return A.entries
    return np.asarray(A, dtype=float)


@dataclass(frozen=True)
class KomlosMatrix:
    """A d x n matrix whose columns have Euclidean norm at most one.

    Column ``j`` of ``entries`` is the vector ``v_j``.
    """

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2:
            raise InstanceError(f"expected a 2-d matrix, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise InstanceError(f"need d >= 1 and n >= 1, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InstanceError("matrix contains NaN or Inf")
        norms = np.linalg.norm(a, axis=0)
        worst = int(np.argmax(norms))
        if norms[worst] > 1.0 + NORM_TOL:
            raise InstanceError(f"column {worst} has norm {norms[worst]!r} > 1")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.entries, axis=0)


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float
    seed: int

    def __post_init__(self):
        if not (0.0 < self.sigma <= 1.0):
            raise InstanceError(f"sigma must lie in (0, 1], got {self.sigma}")
        if self.seed < 0:
            raise InstanceError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class SmoothedMatrix:
    """``entries = base.entries + R`` with R i.i.d. N(0, sigma^2/d)."""

    base: KomlosMatrix
    noise_config: NoiseConfig
    entries: np.ndarray = field(repr=False)

    @property
    def noise(self) -> np.ndarray:
        return self.entries - self.base.entries

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def n(self) -> int:
        return self.base.n


def _parse_kind(kind: str, d: int):
    name, _, arg = kind.partition(":")
    if name not in GENERATORS:
        raise InstanceError(f"unknown generator {kind!r}; choose from {', '.join(GENERATORS)}")
    if name != "sparse_tcol":
        if arg:
            raise InstanceError(f"generator {name!r} takes no parameter")
        return name, None
    t = int(arg) if arg else math.ceil(d / 4)
    if not 1 <= t <= d:
        raise InstanceError(f"sparse_tcol needs 1 <= t <= d, got t={t}, d={d}")
    return name, t


def make_instance(kind: str, d: int, n: int, seed: int = 0) -> KomlosMatrix:
    """Build a test-corpus instance.

    ``kind`` is one of ``GENERATORS``; ``sparse_tcol`` accepts a column
    weight suffix, e.g. ``"sparse_tcol:8"`` (default ``ceil(d/4)``).
    """
    if d < 1 or n < 1:
        raise InstanceError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    name, t = _parse_kind(kind, d)
    rng = make_rng(seed)
    if name == "zero":
        a = np.zeros((d, n))
    elif name == "repeat_unit":
        a = np.zeros((d, n))
        a[0, :] = 1.0
    elif name == "orthonormal_cycle":
        a = np.zeros((d, n))
        a[np.arange(n) % d, np.arange(n)] = 1.0
    elif name == "random_unit_columns":
        a = rng.standard_normal((d, n))
        norms = np.linalg.norm(a, axis=0)
        # a zero Gaussian column has probability zero; guard anyway
        norms[norms == 0.0] = 1.0
        a /= norms
    else:
        a = np.zeros((d, n))
        for j in range(n):
            rows = rng.choice(d, size=t, replace=False)
            a[rows, j] = 1.0
        a /= math.sqrt(t)
    return KomlosMatrix(a)


def add_noise(M: KomlosMatrix, cfg: NoiseConfig) -> SmoothedMatrix:
    """Return ``M + R`` where R has i.i.d. N(0, sigma^2/d) entries drawn from ``cfg.seed``."""
    rng = make_rng(cfg.seed)
    R = rng.standard_normal((M.d, M.n)) * (cfg.sigma / math.sqrt(M.d))
    entries = M.entries + R
    entries.setflags(write=False)
    return SmoothedMatrix(M, cfg, entries)


def discrepancy(A, x) -> float:
    """Return ``||A x||_inf``."""
    a = _as_array(A)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise InstanceError(f"coloring of length {x.shape} does not match matrix of shape {a.shape}")
    return float(np.max(np.abs(a @ x)))


def exhaustive_min_discrepancy(A, max_n: int = 22):
    """Minimum of ``||Ax||_inf`` over all 2^n colorings, with a minimizer.

    Only colorings with ``x_1 = +1`` are enumerated (the norm is sign-symmetric).
    """
    a = _as_array(A)
    n = a.shape[1]
    if n > max_n:
        raise InstanceError(f"exhaustive search limited to n <= {max_n}, got n={n}")
    best, best_x = math.inf, None
    rest = np.array(list(itertools.product((1.0, -1.0), repeat=n - 1))).reshape(2 ** (n - 1), n - 1)
    signs = np.hstack([np.ones((rest.shape[0], 1)), rest])
    for chunk in np.array_split(signs, max(1, signs.shape[0] // 65536)):
        vals = np.max(np.abs(chunk @ a.T), axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, best_x = float(vals[k]), chunk[k].copy()
    return best, best_x


def write_matrix(A, path) -> None:
    """Write the text format: ``"d n"`` then d rows of n floats (17 significant digits)."""
    a = _as_array(A)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(format(v, ".17g") for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    """Parse the text format written by :func:`write_matrix`; rejects NaN/Inf."""
    tokens = Path(path).read_text().split()
    if len(tokens) < 2:
        raise InstanceError(f"{path}: missing 'd n' header")
    try:
        d, n = int(tokens[0]), int(tokens[1])
        values = [float(t) for t in tokens[2:]]
    except ValueError as exc:
        raise InstanceError(f"{path}: {exc}") from None
    if d < 1 or n < 1 or len(values) != d * n:
        raise InstanceError(f"{path}: header says {d}x{n}, found {len(values)} entries")
    a = np.array(values).reshape(d, n)
    if not np.all(np.isfinite(a)):
        raise InstanceError(f"{path}: NaN or Inf entry")
    return a
