"""Tail, MGF and exponential-moment checks for sampled vectors.

A *sampler* is any callable ``sampler(count, seed) -> ndarray`` returning a
``(count, dim)`` array of independent draws, or an already drawn array of
that shape (the count must then match).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from smoothkomlos.rng import make_rng

DEFAULT_THRESHOLDS = (1.0, 1.5, 2.0, 2.5, 3.0, 4.0)
DEFAULT_LAMBDAS = (0.5, 1.0, 2.0)
# exp(x) overflows float64 just above 709
EXP_LIMIT = 700.0


def _draw(sampler, count, rng):
    if callable(sampler):
        Y = sampler(count, int(rng.integers(2**63)))
    else:
        Y = sampler
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != count:
        raise ValueError(f"sampler produced shape {Y.shape}, expected ({count}, dim)")
    return Y


def random_directions(count: int, dim: int, rng) -> np.ndarray:
    g = rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _directions(directions, dim, rng, extra):
    if isinstance(directions, (int, np.integer)):
        U = random_directions(int(directions), dim, rng)
    else:
        U = np.atleast_2d(np.asarray(directions, dtype=float))
        U = U / np.linalg.norm(U, axis=1, keepdims=True)
    if extra is not None:
        E = np.atleast_2d(np.asarray(extra, dtype=float))
        U = np.vstack([U, E / np.linalg.norm(E, axis=1, keepdims=True)])
    if U.shape[1] != dim:
        raise ValueError(f"directions have dimension {U.shape[1]}, samples have {dim}")
    return U


@dataclass
class TailReport:
    directions: int
    thresholds: list
    worst_ratio: float
    prefactor: float
    samples: int
    passed: bool
    min_prefactor: float
    worst_direction: int
    worst_threshold: float
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def tail_test(sampler, directions=50, thresholds=DEFAULT_THRESHOLDS, samples: int = 10_000,
              prefactor: float = 1.0, seed: int = 0, *, extra_directions=None, label: str = "") -> TailReport:
    """Compare ``Pr[|<Y,u>| >= t]`` with ``2 * prefactor * exp(-t^2/8)``.

    A (u, t) cell passes if the empirical tail is within three binomial
    standard errors of the bound; ``worst_ratio`` is the largest
    tail/bound over cells and ``min_prefactor`` the smallest prefactor that
    would make every raw ratio at most one.
    """
    n_dirs = directions if isinstance(directions, (int, np.integer)) else len(directions)
    if n_dirs < 10 and extra_directions is None and isinstance(directions, (int, np.integer)):
        raise ValueError("need at least 10 directions")
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    t = np.asarray(thresholds, dtype=float)
    base = np.exp(-t * t / 8.0)
    if np.any(base < 10.0 / samples):
        raise ValueError(f"thresholds beyond Monte Carlo resolution for {samples} samples")
    rng = make_rng(seed, 0)
    Y = _draw(sampler, samples, rng)
    U = _directions(directions, Y.shape[1], rng, extra_directions)
    proj = np.abs(Y @ U.T)  # (samples, dirs)
    tails = (proj[:, :, None] >= t[None, None, :]).mean(axis=0)  # (dirs, thresholds)
    bound = 2.0 * prefactor * base
    capped = np.minimum(bound, 1.0)
    slack = 3.0 * np.sqrt(capped * (1.0 - capped) / samples)
    ok = tails <= bound + slack
    ratio = tails / bound[None, :]
    wd, wt = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    return TailReport(
        directions=U.shape[0], thresholds=[float(v) for v in t], worst_ratio=float(ratio[wd, wt]),
        prefactor=float(prefactor), samples=samples, passed=bool(ok.all()),
        min_prefactor=float(np.max(tails / (2.0 * base)[None, :])),
        worst_direction=int(wd), worst_threshold=float(t[wt]), label=label,
    )  # fmt: skip


@dataclass
class MGFReport:
    alpha: float
    lambdas: list
    directions: int
    samples: int
    worst_excess: float
    passed: bool
    cells: list = field(default_factory=list)
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def mgf_test(sampler, directions=50, lambdas=DEFAULT_LAMBDAS, alpha: float = 1.0, samples: int = 10_000,
             seed: int = 0, *, label: str = "") -> MGFReport:
    """Check ``E[exp(lam <Y,u>)] <= exp(alpha^2 lam^2 / 2) * (1 + 3 * rel. stderr)`` per (u, lam)."""
    lam = np.asarray(lambdas, dtype=float)
    if np.any(lam * alpha > 3.0):
        raise ValueError("lambda * alpha must be <= 3 for a usable Monte Carlo estimate")
    rng = make_rng(seed, 0)
    Y = _draw(sampler, samples, rng)
    U = _directions(directions, Y.shape[1], rng, None)
    proj = Y @ U.T
    cells = []
    worst = -math.inf
    passed = True
    for li in lam:
        vals = np.exp(li * proj)  # (samples, dirs)
        est = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(samples)
        bound = math.exp(alpha * alpha * li * li / 2.0)
        allowed = bound * (1.0 + 3.0 * se / est)
        excess = est / allowed
        worst = max(worst, float(excess.max()))
        passed &= bool(np.all(est <= allowed))
        k = int(np.argmax(excess))
        cells.append({"lambda": float(li), "bound": bound, "worst_estimate": float(est[k]),
                      "worst_stderr": float(se[k]), "worst_direction": k})
    return MGFReport(float(alpha), [float(v) for v in lam], U.shape[0], samples, worst, passed, cells, label)


@dataclass
class ExpMomentResult:
    estimate: float
    stderr: float
    lam: float
    samples: int
    bound: float = math.nan
    passed: bool | None = None


def lemma5_bound(C1: float, c2: float, slack: float = 0.05) -> float:
    """``1 + 32 C1 / c2^2 + slack``."""
    return 1.0 + 32.0 * C1 / (c2 * c2) + slack


def exp_moment(X, lam: float, *, C1: float | None = None, d: int | None = None,
               slack: float = 0.05) -> ExpMomentResult:
    """Empirical ``E[exp(X^2 / lam^2)]`` for non-negative samples ``X``.

    With ``C1`` and ``d`` given, also compares against the bound with
    ``c2 = lam / sqrt(log d)``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    X = np.asarray(X, dtype=float)
    if X.size < 1000:
        raise ValueError("need at least 1000 samples")
    if np.any(X < 0):
        raise ValueError("X must be non-negative")
    arg = X * X / (lam * lam)
    if np.any(arg > EXP_LIMIT):
        raise OverflowError(f"X^2/lambda^2 reaches {arg.max():.4g} > {EXP_LIMIT}; exp would overflow")
    vals = np.exp(arg)
    est = math.fsum(vals) / vals.size
    with np.errstate(over="ignore"):
        se = float(vals.std(ddof=1) / math.sqrt(vals.size))
    res = ExpMomentResult(est, se, float(lam), int(X.size))
    if C1 is not None and d is not None:
        res.bound = lemma5_bound(C1, lam / math.sqrt(math.log(d)), slack)
        res.passed = est <= res.bound
    return res


def pair_features(xs, ys, r: float):
    """``(|eps_bar| + |theta_bar|)`` with ``eps_bar = <x, y>/sqrt(n)`` and ``theta_bar = <Mx, My>/r``."""
    n = xs.coloring.size
    eps_bar = float(xs.coloring @ ys.coloring) / math.sqrt(n)
    theta_bar = float(xs.disc_vector @ ys.disc_vector) / r
    return abs(eps_bar) + abs(theta_bar)


def pool_pair_features(pool, r: float) -> np.ndarray:
    """``|eps_bar| + |theta_bar|`` over all unordered pairs of a sample pool."""
    X = np.array([s.coloring for s in pool])
    D = np.array([s.disc_vector for s in pool])
    n = X.shape[1]
    iu = np.triu_indices(len(pool), k=1)
    eps_bar = (X @ X.T)[iu] / math.sqrt(n)
    theta_bar = (D @ D.T)[iu] / r
    return np.abs(eps_bar) + np.abs(theta_bar)


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() if hasattr(r, "to_dict") else asdict(r) for r in reports], sort_keys=True)


# ---------------------------------------------------------------------------
# samplers over the walk distributions


def walk_sum_sampler(V):
    """Draws of ``sum_j x_j v_j`` for the plain walk from 0 on the columns of ``V``."""
    from smoothkomlos.gswalk import gs_walk
    from smoothkomlos.rng import derive_seed

    V = np.asarray(getattr(V, "entries", V), dtype=float)

    def draw(count, seed):
        return np.array([V @ gs_walk(V, None, derive_seed(seed, i)) for i in range(count)])

    return draw


def stacked_joint_sampler(M):
    """Draws of the joint vector ``(x, Mx)`` from the stacked walk."""
    from smoothkomlos.gswalk import sample_stacked
    from smoothkomlos.rng import derive_seed

    M = np.asarray(getattr(M, "entries", M), dtype=float)

    def draw(count, seed):
        return np.array([np.concatenate(sample_stacked(M, derive_seed(seed, i))) for i in range(count)])

    return draw


def truncated_arrays(M, window, count: int, seed: int, max_tries: int = 10_000):
    """Truncated samples as two arrays ``(colorings, disc_vectors)`` plus the sample list."""
    from smoothkomlos.truncation import sample_truncated_many

    pool = sample_truncated_many(M, window, count, seed, max_tries)
    return np.array([s.coloring for s in pool]), np.array([s.disc_vector for s in pool]), pool
