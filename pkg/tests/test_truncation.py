import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothkomlos.gswalk import sample_stacked
from smoothkomlos.instances import make_instance
from smoothkomlos.rng import derive_seed
from smoothkomlos.truncation import (
    NormHistogram,
    TruncationFailure,
    TruncationWindow,
    build_window,
    estimate_norm_histogram,
    histogram_edges,
    sample_truncated,
    sample_truncated_many,
    select_annulus,
    stacked_norms,
    window_as_dict,
)


def _hist(counts, samples=None):
    counts = np.asarray(counts)
    edges = np.arange(counts.size + 1, dtype=float)
    return NormHistogram(edges, counts, 0, int(counts.sum()) if samples is None else samples)


def test_zero_matrix_mass_at_origin():
    h = estimate_norm_histogram(make_instance("zero", 4, 10), 1000, seed=1)
    assert h.counts[0] == 1000 and h.overflow == 0


def test_orthonormal_cycle_norm_is_sqrt_d():
    d = 5
    h = estimate_norm_histogram(make_instance("orthonormal_cycle", d, d), 1000, seed=2)
    k = int(np.searchsorted(h.edges, math.sqrt(d), side="right") - 1)
    assert h.counts[k] == 1000


def test_overflow_mass_small():
    M = make_instance("random_unit_columns", 16, 256, 3)
    h = estimate_norm_histogram(M, 10_000, seed=4)
    assert h.overflow / h.samples < 0.01


def test_histogram_needs_samples():
    with pytest.raises(ValueError):
        estimate_norm_histogram(make_instance("zero", 2, 2), 999)


def test_histogram_edges_with_width():
    e = histogram_edges(4, width=0.5)
    assert e[0] == 0.0 and e[-1] >= 6.0
    np.testing.assert_allclose(np.diff(e), 0.5)


def test_select_single_bin():
    w = select_annulus(_hist([0, 0, 7, 0]))
    assert (w.r, w.width, w.mass) == (2.0, 1.0, 1.0)


def test_select_uniform_takes_first_bin():
    w = select_annulus(_hist([5] * 8))
    assert w.r == 0.0 and w.mass == pytest.approx(1 / 8)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=30).filter(lambda c: sum(c) > 0))
def test_selected_mass_at_least_average(counts):
    h = _hist(counts, samples=sum(counts) + 3)
    w = select_annulus(h)
    assert w.mass >= h.in_range / h.bins / h.samples - 1e-15
    assert w.mass == max(counts) / h.samples


def test_window_validation_and_json():
    with pytest.raises(ValueError):
        TruncationWindow(1.0, 0.0, 0.5, 10)
    w = TruncationWindow(1.5, 0.25, 0.125, 1000)
    assert TruncationWindow.from_json(w.to_json()) == w
    assert window_as_dict(w)["samples"] == 1000
    assert w.contains(1.5) and w.contains(1.75) and not w.contains(1.76)


def test_zero_matrix_accepts_first_try():
    M = make_instance("zero", 3, 12)
    w = TruncationWindow(0.0, 0.1, 1.0, 1000)
    for s in range(20):
        assert sample_truncated(M, w, s).tries == 1


def test_failure_when_window_unreachable():
    M = make_instance("zero", 3, 12)
    w = TruncationWindow(5.0, 0.1, 0.01, 1000)
    with pytest.raises(TruncationFailure):
        sample_truncated(M, w, 0, max_tries=5)


def test_geometric_tries():
    # a window of true mass ~0.1 from quantiles of a large independent norm sample
    M = make_instance("random_unit_columns", 4, 16, 5)
    norms = stacked_norms(M, 40_000, seed=99)
    lo, hi = np.quantile(norms, [0.45, 0.55])
    w = TruncationWindow(float(lo), float(hi - lo), 0.1, 40_000)
    tries = [sample_truncated(M, w, derive_seed(7, j)).tries for j in range(500)]
    assert 8.0 <= np.mean(tries) <= 12.5


def test_norm_invariant_holds():
    M = make_instance("random_unit_columns", 4, 16, 6)
    w = build_window(M, 2000, seed=8, width=0.1)
    pool = sample_truncated_many(M, w, 10_000, seed=9)
    for s in pool:
        assert w.r <= np.linalg.norm(s.disc_vector) <= w.r + w.width
        assert s.norm == float(np.linalg.norm(s.disc_vector))


def test_sample_matches_stacked_stream():
    M = make_instance("random_unit_columns", 3, 10, 1)
    w = build_window(M, 1000, seed=2)
    s = sample_truncated(M, w, 123)
    x, mx = sample_stacked(M.entries, derive_seed(123, s.tries - 1))
    assert np.array_equal(s.coloring, x)
