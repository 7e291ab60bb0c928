import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarme.exceptions import DegenerateDistanceError, InvalidWeightsError
from sarme.weights import (
    EARTH_RADIUS_KM,
    build_row_normalized,
    haversine_km,
    load_coordinates_csv,
    load_dense_csv,
    load_edgelist_csv,
    save_row_normalized_csv,
    weights_from_coordinates,
)


def test_row_normalization_basic():
    A = np.array([[0.0, 2.0, 0.0], [2.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    w = build_row_normalized(A)
    assert np.allclose(w.L.sum(axis=1), 1.0)
    assert np.allclose(w.L[1], [2 / 3, 0.0, 1 / 3])
    assert w.symmetric
    assert np.allclose(w.degrees, [2.0, 3.0, 1.0])


def test_isolated_node_gives_zero_row():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 1.0
    w = build_row_normalized(A)
    assert np.all(w.L[2] == 0.0)
    assert w.degrees[2] == 0.0


@pytest.mark.parametrize("A,msg", [
    (np.ones((2, 3)), "square"),
    (np.array([[0.0, -1.0], [1.0, 0.0]]), "negative"),
    (np.array([[1.0, 1.0], [1.0, 0.0]]), "diagonal"),
])
def test_invalid_weight_matrices(A, msg):
    with pytest.raises(InvalidWeightsError, match=msg):
        build_row_normalized(A)


def test_symmetric_flag_is_exact():
    A = np.array([[0.0, 1.0], [1.0 + 1e-12, 0.0]])
    assert not build_row_normalized(A).symmetric


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=10_000))
def test_row_sums_are_one_or_zero(n, seed):
    rng = np.random.default_rng(seed)
    A = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.4), 1)
    A = A + A.T
    w = build_row_normalized(A)
    sums = w.L.sum(axis=1)
    assert np.all((np.abs(sums - 1.0) < 1e-12) | (sums == 0.0))


def test_real_spectrum_matches_direct_eigenvalues():
    rng = np.random.default_rng(3)
    A = np.triu(rng.random((20, 20)) < 0.3, 1).astype(float)
    A = A + A.T
    w = build_row_normalized(A)
    direct = np.sort(np.linalg.eigvals(w.L).real)
    assert np.allclose(np.sort(w.laplacian_eigenvalues), direct, atol=1e-9)
    # row-normalization bounds the spectral radius by one
    assert np.abs(w.laplacian_eigenvalues).max() <= 1.0 + 1e-12


def test_haversine_quarter_meridian():
    # pole to equator along a meridian is a quarter of a great circle
    coords = np.array([[90.0, 0.0], [0.0, 0.0]])
    d = haversine_km(coords)
    assert d[0, 0] == 0.0
    assert np.isclose(d[0, 1], np.pi / 2 * EARTH_RADIUS_KM, rtol=1e-12)
    assert np.isclose(d[0, 1], d[1, 0])


def test_knn_scheme_symmetrizes():
    coords = np.array([[0.0, 0.0], [0.0, 0.1], [0.0, 0.25], [0.0, 1.0]])
    w = weights_from_coordinates(coords, {"kind": "knn", "k": 1})
    assert w.symmetric
    # point 3's nearest neighbour is point 2, so the edge appears for both
    assert w.A[3, 2] == 1.0 and w.A[2, 3] == 1.0


def test_cutoff_scheme_inverse_distance():
    coords = np.array([[0.0, 0.0], [0.0, 0.5], [0.0, 3.0]])
    d = haversine_km(coords)
    w = weights_from_coordinates(coords, {"kind": "cutoff", "radius_km": 100.0,
                                          "exponent": 1.5})
    assert w.A[0, 2] == 0.0  # beyond cutoff
    assert np.isclose(w.A[0, 1], d[0, 1] ** -1.5)


def test_duplicate_coordinates_rejected_for_idw():
    coords = np.array([[10.0, 10.0], [10.0, 10.0]])
    with pytest.raises(DegenerateDistanceError):
        weights_from_coordinates(coords, {"kind": "cutoff", "radius_km": 5.0,
                                          "exponent": 1.0})
    # exponent 0 tolerates ties (uniform weights)
    w = weights_from_coordinates(coords, {"kind": "cutoff", "radius_km": 5.0,
                                          "exponent": 0.0})
    assert w.A[0, 1] == 1.0


def test_dense_csv_roundtrip(tmp_path):
    A = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 2.0, 0.0]])
    path = tmp_path / "a.csv"
    np.savetxt(path, A, delimiter=",")
    w = load_dense_csv(path)
    assert np.allclose(w.A, A)
    out = tmp_path / "l.csv"
    save_row_normalized_csv(w, out)
    assert np.allclose(np.loadtxt(out, delimiter=","), w.L)


def test_edgelist_csv(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("i,j,w\n0,1,1.0\n1,0,1.0\n1,2,0.5\n2,1,0.5\n")
    w = load_edgelist_csv(path)
    assert w.n == 3
    assert w.A[1, 2] == 0.5
    assert w.symmetric
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n0,1,1.0\n")
    with pytest.raises(InvalidWeightsError, match="header"):
        load_edgelist_csv(bad)


def test_coordinates_csv(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("id,lat,lon\n1,0.0,0.0\n2,0.0,0.3\n3,0.0,0.6\n")
    w = load_coordinates_csv(path, {"kind": "knn", "k": 1})
    assert w.n == 3
    assert w.A[0, 1] == 1.0
