import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothkomlos.instances import (
    GENERATORS,
    InstanceError,
    KomlosMatrix,
    NoiseConfig,
    add_noise,
    discrepancy,
    exhaustive_min_discrepancy,
    make_instance,
    read_matrix,
    write_matrix,
)


def test_zero_instance():
    M = make_instance("zero", 4, 8, 3)
    assert M.entries.shape == (4, 8)
    assert not M.entries.any()


def test_repeat_unit_columns():
    M = make_instance("repeat_unit", 3, 5, 0)
    for j in range(5):
        np.testing.assert_array_equal(M.entries[:, j], [1.0, 0.0, 0.0])


def test_random_unit_columns_have_unit_norm():
    M = make_instance("random_unit_columns", 16, 256, 7)
    assert np.all(np.abs(M.column_norms() - 1.0) <= 1e-12)


@pytest.mark.parametrize("kind", ["orthonormal_cycle", "sparse_tcol", "sparse_tcol:3"])
def test_other_generators_are_komlos(kind):
    M = make_instance(kind, 6, 20, 1)
    assert np.all(M.column_norms() <= 1.0 + 1e-12)


def test_generator_determinism():
    for kind in GENERATORS:
        a = make_instance(kind, 5, 9, 11).entries
        b = make_instance(kind, 5, 9, 11).entries
        assert np.array_equal(a, b)


def test_bad_generator_and_shapes():
    with pytest.raises(InstanceError):
        make_instance("nope", 2, 2)
    with pytest.raises(InstanceError):
        make_instance("zero", 0, 2)
    with pytest.raises(InstanceError):
        make_instance("sparse_tcol:9", 4, 3)


def test_komlos_matrix_rejects_long_columns_and_nan():
    with pytest.raises(InstanceError):
        KomlosMatrix(np.array([[1.0, 0.0], [0.5, 1.0]]))
    with pytest.raises(InstanceError):
        KomlosMatrix(np.array([[np.nan]]))
    with pytest.raises(InstanceError):
        KomlosMatrix(np.zeros(3))


def test_komlos_matrix_is_read_only_copy():
    a = np.eye(2)
    M = KomlosMatrix(a)
    a[0, 0] = 0.5
    assert M.entries[0, 0] == 1.0
    with pytest.raises(ValueError):
        M.entries[0, 0] = 0.0


def test_vanishing_noise():
    M = make_instance("random_unit_columns", 4, 6, 2)
    A = add_noise(M, NoiseConfig(1e-15, 5))
    assert np.max(np.abs(A.entries - M.entries)) < 1e-6


def test_noise_variance():
    M = make_instance("zero", 100, 10_000)
    A = add_noise(M, NoiseConfig(1.0, 3))
    var = A.entries.var()
    assert 0.01 * 0.99 <= var <= 0.01 * 1.01


def test_noise_determinism_and_validation():
    M = make_instance("random_unit_columns", 3, 4, 0)
    a = add_noise(M, NoiseConfig(0.5, 9)).entries
    b = add_noise(M, NoiseConfig(0.5, 9)).entries
    assert np.array_equal(a, b)
    with pytest.raises(InstanceError):
        NoiseConfig(0.0, 1)
    with pytest.raises(InstanceError):
        NoiseConfig(1.5, 1)
    with pytest.raises(InstanceError):
        NoiseConfig(0.5, -1)


def test_discrepancy_examples():
    assert discrepancy(np.eye(2), [1, -1]) == 1.0
    assert discrepancy(np.array([[1.0, 1.0], [0.0, 0.0]]), [1, 1]) == 2.0
    with pytest.raises(InstanceError):
        discrepancy(np.eye(2), [1, 1, 1])


def test_exhaustive_min_matches_brute_force():
    A = make_instance("random_unit_columns", 4, 10, 4).entries
    brute = min(discrepancy(A, x) for x in itertools.product((-1.0, 1.0), repeat=10))
    best, x = exhaustive_min_discrepancy(A)
    assert best == pytest.approx(brute, abs=1e-12)
    assert discrepancy(A, x) == pytest.approx(best, abs=1e-12)


def test_exhaustive_single_column():
    best, x = exhaustive_min_discrepancy(np.array([[0.5]]))
    assert best == 0.5 and x.tolist() == [1.0]


def test_matrix_round_trip(tmp_path):
    M = make_instance("random_unit_columns", 3, 7, 1)
    write_matrix(M, tmp_path / "m.txt")
    assert np.array_equal(read_matrix(tmp_path / "m.txt"), M.entries)


def test_read_matrix_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2 2\n1 0\n0 nan\n")
    with pytest.raises(InstanceError):
        read_matrix(p)
    p.write_text("2 2\n1 0\n0\n")
    with pytest.raises(InstanceError):
        read_matrix(p)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 12), st.integers(0, 2**32))
def test_random_columns_are_unit_for_any_size(d, n, seed):
    M = make_instance("random_unit_columns", d, n, seed)
    assert np.allclose(M.column_norms(), 1.0, atol=1e-12)
