"""Monte Carlo first and second moments of the weighted solution count S.

``E[S] = E_x[P_x]`` and ``E[S^2] = E_{x,y}[P_xy]`` with x, y independent draws
from the truncated distribution. Probabilities are carried relative to the
reference ``p`` (log space), so values near 1e-13 never lose precision.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from smoothkomlos import gaussprob as gp
from smoothkomlos.rng import derive_seed
from smoothkomlos.truncation import TruncationWindow, sample_truncated

BATCH = 64

CSV_FIELDS = (
    "d", "n", "sigma", "Delta", "window_r", "window_w", "p_ref_log", "first", "first_se",
    "second", "second_se", "ratio", "eventE", "claim3_viol", "lambda_min", "pairs", "seed",
)  # fmt: skip


def lambda_min(d: int, n: int, sigma: float) -> float:
    return math.sqrt(min(n / d, sigma**2 * n**2 / (2 * d**2), sigma**2 * n**1.5 / (2 * d**1.5))) / 3.0


@dataclass
class PairRecord:
    """Per-pair quantities, all probabilities as logs."""

    log_px: float
    log_py: float
    log_pxy: float
    eps: float
    inner_disc: float
    norm_x: float
    norm_y: float
    event: bool
    log_beta: float = math.nan
    log_z: float = math.nan
    claim3_violation: bool = False


@dataclass
class MomentReport:
    d: int
    n: int
    sigma: float
    Delta: float
    window_r: float
    window_w: float
    p_ref_log: float
    first_moment: float  # in units of p_ref
    first_se: float
    second_moment: float  # in units of p_ref^2
    second_se: float
    ratio: float
    ratio_se: float
    event_E_freq: float
    claim3_violations: int
    pairs: int
    lambda_min: float
    seed: int
    mean_beta: float = math.nan
    mean_exp_z: float = math.nan
    extras: dict = field(default_factory=dict)

    @property
    def p_ref(self) -> float:
        return math.exp(self.p_ref_log)

    def csv_row(self) -> dict:
        return {
            "d": self.d, "n": self.n, "sigma": self.sigma, "Delta": self.Delta,
            "window_r": self.window_r, "window_w": self.window_w, "p_ref_log": self.p_ref_log,
            "first": self.first_moment, "first_se": self.first_se,
            "second": self.second_moment, "second_se": self.second_se, "ratio": self.ratio,
            "eventE": self.event_E_freq, "claim3_viol": self.claim3_violations,
            "lambda_min": self.lambda_min, "pairs": self.pairs, "seed": self.seed,
        }  # fmt: skip

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=json_default)


def json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def fmt_float(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for rep in reports:
        row = rep.csv_row()
        w.writerow([fmt_float(row[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def fsum_mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    m = fsum_mean(v)
    if v.size < 2:
        return m, 0.0
    var = math.fsum((v - m) ** 2) / (v.size - 1)
    return m, math.sqrt(var / v.size)


# ---------------------------------------------------------------------------
# per-sample and per-pair evaluation


def evaluate_pair(xs, ys, params: gp.KernelParams) -> PairRecord:
    """Exact ``P_x``, ``P_y`` and ``P_xy`` (or the weak bound) for two truncated samples."""
    n = xs.coloring.size
    ip = float(xs.coloring @ ys.coloring)
    eps = ip / n
    inner = float(xs.disc_vector @ ys.disc_vector)
    lx = gp.log_p_x_from_disc(xs.disc_vector, params)
    ly = gp.log_p_x_from_disc(ys.disc_vector, params)
    event = abs(ip) > n / 2
    rec = PairRecord(lx, ly, math.nan, eps, inner, xs.norm, ys.norm, event)
    if event or abs(eps) > gp.MAX_EPS:
        rec.log_pxy = min(lx, ly)
        return rec
    rec.log_pxy = gp.log_p_xy_from_disc(xs.disc_vector, ys.disc_vector, eps, params)
    stats = gp.PairStats(eps, inner, xs.norm, ys.norm)
    delta1 = gp.pair_slack(xs.disc_vector, ys.disc_vector, params)
    rec.log_beta = gp.log_beta_bound(stats, params, delta1)
    rec.claim3_violation = rec.log_pxy > lx + ly + rec.log_beta
    return rec


def _pair_batch(args):
    M, window, params, seed, start, stop, max_tries = args
    out = []
    for k in range(start, stop):
        xs = sample_truncated(M, window, derive_seed(seed, k, 0), max_tries)
        ys = sample_truncated(M, window, derive_seed(seed, k, 1), max_tries)
        rec = evaluate_pair(xs, ys, params)
        r = window.r
        rec.log_z = gp.log_z_bound(gp.PairStats(rec.eps, rec.inner_disc, xs.norm, ys.norm), params, r)
        out.append(rec)
    return out


def _first_batch(args):
    M, window, params, seed, start, stop, max_tries = args
    return [
        gp.log_p_x_from_disc(sample_truncated(M, window, derive_seed(seed, k), max_tries).disc_vector, params)
        for k in range(start, stop)
    ]


def _run_batches(fn, M, window, params, seed, count, workers, max_tries):
    M = np.asarray(getattr(M, "entries", M), dtype=float)
    jobs = [(M, window, params, seed, s, min(s + BATCH, count), max_tries) for s in range(0, count, BATCH)]
    if workers is None or workers <= 1 or len(jobs) == 1:
        results = [fn(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, jobs))
    # batch order is fixed by index, so the worker count never changes the output
    return [r for batch in results for r in batch]


def sample_pairs(M, window, params, pairs: int, seed: int, workers=1, max_tries: int = 10_000):
    """Evaluate ``pairs`` fresh independent pairs; pair k uses streams ``(seed, k, 0/1)``."""
    return _run_batches(_pair_batch, M, window, params, seed, pairs, workers, max_tries)


# ---------------------------------------------------------------------------
# estimators


def estimate_first_moment(M, window: TruncationWindow, params, samples: int, seed: int, workers=1, max_tries=10_000):
    """``(E[S], stderr)`` as the mean of ``P_x`` over truncated samples."""
    if samples < 100:
        raise ValueError("need at least 100 samples")
    logs = _run_batches(_first_batch, M, window, params, seed, samples, workers, max_tries)
    lref = gp.log_p_ref(params, window.r)
    m, se = _mean_se(np.exp(np.asarray(logs) - lref))
    scale = math.exp(lref)
    return m * scale, se * scale


@dataclass
class SecondMoment:
    estimate: float
    stderr: float
    event_E_freq: float
    claim3_violations: int


def second_moment_from_records(records, log_scale: float) -> SecondMoment:
    vals = np.exp(np.array([r.log_pxy for r in records]) - 2.0 * log_scale)
    m, se = _mean_se(vals)
    freq = sum(r.event for r in records) / len(records)
    viol = sum(r.claim3_violation for r in records)
    return SecondMoment(m, se, freq, viol)


def estimate_second_moment(M, window, params, pairs: int, seed: int, workers=1, max_tries=10_000) -> SecondMoment:
    """``E[S^2]`` as the mean of ``P_xy`` over fresh pairs, with event-E frequency and Claim-3 checks."""
    if pairs < 100:
        raise ValueError("need at least 100 pairs")
    records = sample_pairs(M, window, params, pairs, seed, workers, max_tries)
    lref = gp.log_p_ref(params, window.r)
    sm = second_moment_from_records(records, lref)
    scale = math.exp(2.0 * lref)
    return SecondMoment(sm.estimate * scale, sm.stderr * scale, sm.event_E_freq, sm.claim3_violations)


def report_from_records(records, M_shape, window, params, seed) -> MomentReport:
    """Ratio ``E[S^2]/E[S]^2`` from one pool of pairs, with a delta-method standard error.

    ``E[S]`` is estimated from both members of every pair, which are independent.
    """
    d, n = M_shape
    lref = gp.log_p_ref(params, window.r)
    px = np.exp(np.array([r.log_px for r in records]) - lref)
    py = np.exp(np.array([r.log_py for r in records]) - lref)
    pxy = np.exp(np.array([r.log_pxy for r in records]) - 2.0 * lref)
    a_k = 0.5 * (px + py)
    A = fsum_mean(a_k)
    B = fsum_mean(pxy)
    N = len(records)
    _, first_se = _mean_se(a_k)
    _, second_se = _mean_se(pxy)
    ratio = B / (A * A)
    infl = pxy / (A * A) - 2.0 * B * a_k / A**3
    _, ratio_se = _mean_se(infl)
    betas = [math.exp(r.log_beta) for r in records if not math.isnan(r.log_beta)]
    zs = [math.exp(r.log_z) for r in records if not math.isnan(r.log_z)]
    both = [r.log_beta <= r.log_z for r in records if not (math.isnan(r.log_beta) or math.isnan(r.log_z))]
    rep = MomentReport(
        d=d, n=n, sigma=params.sigma, Delta=params.Delta, window_r=window.r, window_w=window.width,
        p_ref_log=lref, first_moment=A, first_se=first_se, second_moment=B, second_se=second_se,
        ratio=ratio, ratio_se=ratio_se,
        event_E_freq=sum(r.event for r in records) / N,
        claim3_violations=int(sum(r.claim3_violation for r in records)),
        pairs=N, lambda_min=lambda_min(d, n, params.sigma), seed=seed,
        mean_beta=fsum_mean(betas) if betas else math.nan,
        mean_exp_z=fsum_mean(zs) if zs else math.nan,
    )  # fmt: skip
    # which of the two pair exponents (beta vs the restated Z) is tighter, pair by pair
    rep.extras["beta_tighter_frac"] = sum(both) / len(both) if both else math.nan
    return rep


def moment_ratio_sweep(make_matrix, d: int, n_list, sigma: float, pairs, seed: int, *,
                       window_samples: int = 1000, width_fraction: float | None = 0.05,
                       scaled_halfwidth: float = 0.03, workers=1, max_tries: int = 10_000):
    """One :class:`MomentReport` per ``n``.

    ``make_matrix(d, n)`` supplies the instance; ``pairs`` is an int or a list
    aligned with ``n_list``. Each ``n`` gets its own window and streams keyed
    by its position in the sweep.
    """
    from smoothkomlos.truncation import build_window

    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly ascending")
    pair_counts = list(pairs) if isinstance(pairs, (list, tuple)) else [pairs] * len(n_list)
    reports = []
    for idx, (n, npairs) in enumerate(zip(n_list, pair_counts)):
        M = make_matrix(d, n)
        width = None if width_fraction is None else width_fraction * math.sqrt(d)
        window = build_window(M, window_samples, derive_seed(seed, idx, 0), width=width)
        params = gp.KernelParams.desk(d, n, sigma, scaled_halfwidth)
        records = sample_pairs(M, window, params, npairs, derive_seed(seed, idx, 1), workers, max_tries)
        rep = report_from_records(records, (d, n), window, params, seed)
        rep.extras["window_mass"] = window.mass
        reports.append(rep)
    return reports
