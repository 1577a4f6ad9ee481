import csv
import io
import math

import numpy as np
import pytest
from scipy.special import ndtr

from smoothkomlos import gaussprob as gp
from smoothkomlos import moments as mm
from smoothkomlos.instances import make_instance
from smoothkomlos.truncation import TruncationWindow, build_window


def _zero_setup(d=8, n=512):
    M = make_instance("zero", d, n)
    w = TruncationWindow(0.0, 0.05 * math.sqrt(d), 1.0, 1000)
    return M, w, gp.KernelParams.desk(d, n, 1.0)


def test_lambda_min():
    assert mm.lambda_min(8, 1024, 1.0) == pytest.approx(math.sqrt(128) / 3, rel=1e-15)


def test_first_moment_zero_matrix():
    M, w, p = _zero_setup()
    est, se = mm.estimate_first_moment(M, w, p, 100, seed=1)
    exact = (2 * ndtr(p.delta * p.Delta) - 1) ** p.d
    assert est == pytest.approx(exact, rel=1e-12)
    assert se == 0.0


def test_first_moment_positive_and_needs_samples():
    M = make_instance("random_unit_columns", 4, 64, 2)
    p = gp.KernelParams.desk(4, 64, 1.0)
    w = build_window(M, 1000, seed=3, width=0.1)
    est, se = mm.estimate_first_moment(M, w, p, 100, seed=4)
    assert est > 0 and se >= 0
    with pytest.raises(ValueError):
        mm.estimate_first_moment(M, w, p, 99, seed=4)


def test_zero_matrix_ratio_near_one():
    M, w, p = _zero_setup()
    records = mm.sample_pairs(M, w, p, 10_000, seed=5)
    rep = mm.report_from_records(records, (8, 512), w, p, 5)
    assert 1 - 3 * rep.ratio_se <= rep.ratio <= 1.1
    assert rep.event_E_freq == 0.0
    assert rep.claim3_violations == 0
    # fresh uniform-like colorings: E[eps^2] is about 1/n
    eps2 = np.mean([r.eps**2 for r in records])
    assert eps2 == pytest.approx(1 / 512, rel=0.1)


def test_second_moment_estimator_units():
    M, w, p = _zero_setup(4, 64)
    sm = mm.estimate_second_moment(M, w, p, 128, seed=6)
    px = (2 * ndtr(p.delta * p.Delta) - 1) ** p.d
    # E[P_xy] >= (E[P_x])^2 by positive association in eps = 0 on average
    assert sm.estimate == pytest.approx(px * px, rel=0.05)
    assert sm.claim3_violations == 0


def test_event_pairs_use_weak_bound():
    M, w, p = _zero_setup(2, 8)
    from smoothkomlos.truncation import TruncatedSample

    x = np.ones(8)
    s = TruncatedSample(x, np.zeros(2), 0.0)
    rec = mm.evaluate_pair(s, s, p)
    assert rec.event and rec.log_pxy == min(rec.log_px, rec.log_py)


def test_worker_count_does_not_change_records():
    M = make_instance("random_unit_columns", 4, 32, 7)
    p = gp.KernelParams.desk(4, 32, 1.0)
    w = build_window(M, 1000, seed=8, width=0.2)
    a = mm.sample_pairs(M, w, p, 130, seed=9, workers=1)
    b = mm.sample_pairs(M, w, p, 130, seed=9, workers=2)
    assert a == b


def test_sweep_and_csv():
    reps = mm.moment_ratio_sweep(
        lambda d, n: make_instance("random_unit_columns", d, n, 1), 4, [32, 64], 1.0, [100, 100], seed=2
    )
    assert [r.n for r in reps] == [32, 64]
    text = mm.reports_to_csv(reps)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == mm.CSV_FIELDS
    assert all(math.isfinite(float(r["ratio"])) for r in rows)
    assert float(rows[1]["first"]) == reps[1].first_moment
    assert all(r["claim3_viol"] == "0" for r in rows)
    with pytest.raises(ValueError):
        mm.moment_ratio_sweep(lambda d, n: None, 4, [64, 32], 1.0, 100, seed=0)


def test_fmt_float_round_trips():
    for v in (math.pi, 1e-300, -2.5e17, 0.1):
        assert float(mm.fmt_float(v)) == v
    assert mm.fmt_float(True) == "1"
