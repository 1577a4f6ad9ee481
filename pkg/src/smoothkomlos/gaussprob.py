"""Gaussian probability kernels for the feasibility events of a fixed coloring.

For a coloring x the row sums ``(Rx)_i`` are i.i.d. N(0, 1/delta^2) with
``delta = sqrt(d) / (sigma sqrt(n))``; for two colorings the pair
``((Rx)_i, (Ry)_i)`` is bivariate normal with correlation ``eps = <x,y>/n``.
All products over rows are accumulated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, roots_legendre

QUAD_NODES = 64
MAX_EPS = 0.99
CLAIM3_EPS = 0.5

_LOG_2PI = math.log(2.0 * math.pi)
# below this scaled width the midpoint series is more accurate than a log-CDF difference
_NARROW = 1e-3


@dataclass(frozen=True)
class KernelParams:
    """Instance sizes plus the acceptance half-width ``Delta``."""

    d: int
    n: int
    sigma: float
    Delta: float

    def __post_init__(self):
        if self.d < 1 or self.n < 1 or not self.sigma > 0 or not self.Delta > 0:
            raise ValueError(f"invalid kernel parameters {self!r}")

    @property
    def delta(self) -> float:
        return math.sqrt(self.d) / (self.sigma * math.sqrt(self.n))

    @classmethod
    def desk(cls, d: int, n: int, sigma: float, scaled_halfwidth: float = 0.03) -> "KernelParams":
        """Desk-scale default: ``delta * Delta = scaled_halfwidth``."""
        delta = math.sqrt(d) / (sigma * math.sqrt(n))
        return cls(d, n, sigma, scaled_halfwidth / delta)


@dataclass(frozen=True)
class PairStats:
    eps: float
    inner_disc: float
    norm_x: float
    norm_y: float

    def __post_init__(self):
        if abs(self.eps) > 1.0:
            raise ValueError(f"|eps| must be <= 1, got {self.eps}")

    @classmethod
    def from_samples(cls, x, y, mx, my) -> "PairStats":
        x = np.asarray(x, dtype=float)
        return cls(
            float(x @ y) / x.size, float(np.dot(mx, my)), float(np.linalg.norm(mx)), float(np.linalg.norm(my))
        )


# ---------------------------------------------------------------------------
# univariate


def _log_diff_ndtr(lo, hi, gap=None):
    """``log(Phi(hi) - Phi(lo))`` for ``lo <= hi``, stable in both tails and for tiny gaps.

    Pass the exact width ``gap = hi - lo`` when known; recomputing it from the
    endpoints cancels for narrow intervals away from zero.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    # reflect so the interval never lies entirely in the upper tail
    flip = lo > 0.0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la = log_ndtr(a)
    lb = log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log(-np.expm1(la - lb))
        # narrow intervals: the log-CDF difference cancels, integrate the density around the midpoint
        gap = b - a if gap is None else np.broadcast_to(np.asarray(gap, dtype=float), b.shape)
        m = 0.5 * (a + b)
        narrow = gap * (1.0 + np.abs(m)) < _NARROW
        if np.any(narrow):
            m2, g2 = m * m, gap * gap
            series = g2 * (m2 - 1.0) / 24.0 + g2 * g2 * (m2 * m2 - 6.0 * m2 + 3.0) / 1920.0
            mid = -0.5 * m2 - 0.5 * _LOG_2PI + np.log(gap) + np.log1p(series)
            out = np.where(narrow, mid, out)
    return out


def log_interval_prob(center, halfwidth, std):
    """``log Pr[N(0, std^2) in [center - halfwidth, center + halfwidth]]``."""
    if np.any(np.asarray(halfwidth) < 0) or std <= 0:
        raise ValueError("need halfwidth >= 0 and std > 0")
    c = np.asarray(center, dtype=float)
    lo = (np.abs(c) - halfwidth) / std
    hi = (np.abs(c) + halfwidth) / std
    out = _log_diff_ndtr(lo, hi, 2.0 * np.asarray(halfwidth, dtype=float) / std)
    return float(out) if out.ndim == 0 else out


def interval_prob(center, halfwidth, std):
    """``Pr[N(0, std^2) in [center +- halfwidth]]``, absolute accuracy ~1e-16."""
    if np.any(np.asarray(halfwidth) < 0) or std <= 0:
        raise ValueError("need halfwidth >= 0 and std > 0")
    c = np.abs(np.asarray(center, dtype=float))
    lo = (c - halfwidth) / std
    hi = (c + halfwidth) / std
    # with c >= 0 the upper tail difference is the accurate one
    out = ndtr(-lo) - ndtr(-hi)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# bivariate


def bivariate_density(s, t, eps):
    if abs(eps) >= 1.0:
        raise ValueError(f"density needs |eps| < 1, got {eps}")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    q = 1.0 - eps * eps
    out = np.exp(-(s * s + t * t - 2.0 * eps * s * t) / (2.0 * q)) / (2.0 * math.pi * math.sqrt(q))
    return float(out) if out.ndim == 0 else out


def log_bivariate_density(s, t, eps):
    if abs(eps) >= 1.0:
        raise ValueError(f"density needs |eps| < 1, got {eps}")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    q = 1.0 - eps * eps
    return -(s * s + t * t - 2.0 * eps * s * t) / (2.0 * q) - _LOG_2PI - 0.5 * math.log(q)


_NODE_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _nodes(k: int):
    if k not in _NODE_CACHE:
        _NODE_CACHE[k] = roots_legendre(k)
    return _NODE_CACHE[k]


def log_bivariate_rect_prob(a, b, halfwidth, eps, delta, nodes: int = QUAD_NODES):
    """Log of the standard-correlated-normal mass of ``delta * ([a +- h] x [b +- h])``.

    Outer Gauss-Legendre over the first coordinate, exact conditional normal
    interval probability for the second. Vectorized over ``a``, ``b``.
    """
    if abs(eps) > MAX_EPS:
        raise ValueError(f"|eps| must be <= {MAX_EPS}, got {eps}")
    if halfwidth <= 0 or delta <= 0:
        raise ValueError("need halfwidth > 0 and delta > 0")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # joint sign flip leaves the measure unchanged; make the first center non-negative
    sgn = np.where(a < 0.0, -1.0, 1.0)
    a = a * sgn
    b = b * sgn
    x, wts = _nodes(nodes)
    h = delta * halfwidth
    s = delta * a[..., None] + h * x  # outer nodes, shape (..., nodes)
    q = math.sqrt(1.0 - eps * eps)
    mid = eps * s
    lo = (delta * (b[..., None] - halfwidth) - mid) / q
    hi = (delta * (b[..., None] + halfwidth) - mid) / q
    inner = _log_diff_ndtr(lo, hi, 2.0 * delta * halfwidth / q)
    log_phi = -0.5 * s * s - 0.5 * _LOG_2PI
    terms = np.log(wts) + log_phi + inner
    top = np.max(terms, axis=-1, keepdims=True)
    out = math.log(h) + np.squeeze(top, -1) + np.log(np.sum(np.exp(terms - top), axis=-1))
    return float(out) if out.ndim == 0 else out


def bivariate_rect_prob(a, b, halfwidth, eps, delta, nodes: int = QUAD_NODES):
    out = np.exp(log_bivariate_rect_prob(a, b, halfwidth, eps, delta, nodes))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# coloring-level probabilities


def _disc(M, x):
    M = getattr(M, "entries", M)
    x = np.asarray(x, dtype=float)
    if M.shape[1] != x.shape[0]:
        raise ValueError(f"coloring of length {x.shape[0]} does not match {M.shape}")
    return M @ x


def log_p_x_from_disc(mx, params: KernelParams) -> float:
    """``log P_x`` given the discrepancy vector ``Mx``."""
    return float(np.sum(log_interval_prob(np.asarray(mx, dtype=float), params.Delta, 1.0 / params.delta)))


def log_p_x(M, x, params: KernelParams) -> float:
    return log_p_x_from_disc(_disc(M, x), params)


def p_x(M, x, params: KernelParams) -> float:
    return math.exp(log_p_x(M, x, params))


def log_p_xy_from_disc(mx, my, eps, params: KernelParams) -> float:
    rows = log_bivariate_rect_prob(np.asarray(mx), np.asarray(my), params.Delta, eps, params.delta)
    return float(np.sum(rows))


def log_p_xy(M, x, y, params: KernelParams) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eps = float(x @ y) / x.size
    return log_p_xy_from_disc(_disc(M, x), _disc(M, y), eps, params)


def p_xy(M, x, y, params: KernelParams) -> float:
    return math.exp(log_p_xy(M, x, y, params))


def log_p_ref(params: KernelParams, r: float) -> float:
    """Log of the reference probability ``(2 delta Delta / sqrt(2 pi))^d exp(-delta^2 r^2 / 2)``.

    This is the center-density approximation of ``P_x`` for ``||Mx||_2 = r``:
    each row interval ``[a +- Delta]`` has length ``2 Delta``.
    """
    if r < 0:
        raise ValueError("radius must be non-negative")
    dd = params.delta * params.Delta
    return params.d * (math.log(2.0 * dd) - 0.5 * _LOG_2PI) - 0.5 * params.delta**2 * r * r


def p_ref(params: KernelParams, r: float) -> float:
    return math.exp(log_p_ref(params, r))


def claim4_band(mx, params: KernelParams) -> float:
    """Bound on ``|log P_x - log((2 delta Delta/sqrt(2pi))^d exp(-delta^2 ||Mx||^2/2))|``."""
    dl, D = params.delta, params.Delta
    return 2.0 * dl * dl * D * (float(np.sum(np.abs(mx))) + params.d * D)


def window_slack(params: KernelParams, r: float, width: float) -> float:
    """Allowance for ``||Mx||_2`` ranging over ``[r, r + width]`` instead of equal to ``r``."""
    return 10.0 * width * params.delta**2 * r


def center_slack(a, b, params: KernelParams):
    """Per-row slack ``4 delta^2 Delta (|a| + |b| + 2 Delta)``."""
    dl, D = params.delta, params.Delta
    return 4.0 * dl * dl * D * (np.abs(a) + np.abs(b) + 2.0 * D)


def pair_slack(mx, my, params: KernelParams) -> float:
    """The explicit ``delta_1``: per-row center slack summed over rows."""
    return float(np.sum(center_slack(np.asarray(mx), np.asarray(my), params)))


def log_beta_bound(stats: PairStats, params: KernelParams, delta1: float) -> float:
    if abs(stats.eps) > CLAIM3_EPS:
        raise ValueError(f"beta bound needs |eps| <= {CLAIM3_EPS}, got {stats.eps}")
    d, dl2, e = params.d, params.delta**2, stats.eps
    return delta1 + d * e * e + d * dl2 * e * e + dl2 * e * stats.inner_disc


def beta_bound(stats: PairStats, params: KernelParams, delta1: float) -> float:
    return math.exp(log_beta_bound(stats, params, delta1))


def log_z_bound(stats: PairStats, params: KernelParams, r: float) -> float:
    """The restated exponent ``d eps^2 + 2 delta^2 eps^2 r^2 + 2 delta^2 |eps <Mx,My>|``."""
    d, dl2, e = params.d, params.delta**2, stats.eps
    return d * e * e + 2.0 * dl2 * e * e * r * r + 2.0 * dl2 * abs(e * stats.inner_disc)


def center_density_ratio(a, b, eps, params: KernelParams):
    """``mu_eps(delta a, delta b) / mu(delta a, delta b)`` and its closed-form upper bound.

    Returns ``(ratio, bound)`` with
    ``bound = exp(eps^2 + delta^2 eps^2 (a^2 + b^2) + 2 delta^2 eps a b)``.
    """
    if abs(eps) > CLAIM3_EPS:
        raise ValueError(f"needs |eps| <= {CLAIM3_EPS}, got {eps}")
    dl = params.delta
    s = dl * np.asarray(a, dtype=float)
    t = dl * np.asarray(b, dtype=float)
    log_ratio = log_bivariate_density(s, t, eps) - log_bivariate_density(s, t, 0.0)
    log_bound = eps * eps + eps * eps * (s * s + t * t) + 2.0 * eps * s * t
    return np.exp(log_ratio), np.exp(log_bound)
