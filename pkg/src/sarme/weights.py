"""Spatial/network weight matrices and their row-normalized operator.

A nonnegative weight (or adjacency) matrix ``A`` with zero diagonal is
row-normalized into ``L = D^{-1} A`` where ``D`` holds the row sums.  Rows
with zero degree (isolated nodes) are left as all-zero rows rather than
raising, since the autoregressive operator ``I - rho L`` stays well defined.

Everything is dense; the intended workloads have n up to ~1e4.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import DegenerateDistanceError, InvalidWeightsError

EARTH_RADIUS_KM = 6371.0088  # IUGG mean radius, fixed for bit-reproducibility


@dataclass(frozen=True)
class SpatialWeights:
    """Weight matrix A together with its row-normalized form L.

    Attributes
    ----------
    A : (n, n) nonnegative array with zero diagonal.
    L : (n, n) array, ``L[i] = A[i] / degrees[i]`` (zero row if isolated).
    degrees : (n,) row sums of A.
    symmetric : whether ``A == A.T`` exactly.
    meta : construction metadata (e.g. the distance-weighting scheme).
    """

    A: np.ndarray
    L: np.ndarray
    degrees: np.ndarray
    symmetric: bool
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @cached_property
    def laplacian_eigenvalues(self) -> np.ndarray:
        """Real eigenvalues of L, available when A is symmetric.

        For symmetric A, L = D^{-1}A is similar to the symmetric matrix
        D^{-1/2} A D^{-1/2} on non-isolated nodes, so its spectrum is real;
        isolated nodes contribute zero eigenvalues.  Computed once and cached
        (reused across every evaluation of the concentrated likelihood).
        """
        if not self.symmetric:
            raise ValueError("real eigenvalue shortcut requires symmetric A")
        alive = self.degrees > 0
        lam = np.zeros(self.n)
        if alive.any():
            inv_sqrt_d = 1.0 / np.sqrt(self.degrees[alive])
            sub = self.A[np.ix_(alive, alive)]
            sym = sub * inv_sqrt_d[:, None] * inv_sqrt_d[None, :]
            lam[: alive.sum()] = np.linalg.eigvalsh(sym)
        return np.sort(lam)


def build_row_normalized(A: np.ndarray, meta: dict | None = None) -> SpatialWeights:
    """Validate A and return it together with L = D^{-1}A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidWeightsError(f"A must be square, got shape {A.shape}")
    if np.any(A < 0):
        raise InvalidWeightsError("A contains negative entries")
    if np.any(np.diag(A) != 0):
        raise InvalidWeightsError("A has nonzero diagonal entries")
    degrees = A.sum(axis=1)
    L = np.zeros_like(A)
    alive = degrees > 0
    L[alive] = A[alive] / degrees[alive, None]
    symmetric = bool(np.array_equal(A, A.T))
    return SpatialWeights(A=A, L=L, degrees=degrees, symmetric=symmetric,
                          meta=dict(meta or {}))


def haversine_km(coords: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances (km) for (n, 2) lat/lon in degrees."""
    lat = np.radians(coords[:, 0])[:, None]
    lon = np.radians(coords[:, 1])[:, None]
    dlat = lat - lat.T
    dlon = lon - lon.T
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(dlon / 2.0) ** 2
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


def weights_from_coordinates(coords: np.ndarray, scheme: dict) -> SpatialWeights:
    """Build weights from lat/lon coordinates and a distance-weighting scheme.

    ``scheme`` is either ``{"kind": "knn", "k": int}`` (symmetric k-nearest
    neighbor indicator, symmetrized with max(A, A.T)) or
    ``{"kind": "cutoff", "radius_km": float, "exponent": float}`` (weight
    d^{-exponent} for pairs within the cutoff; exponent 0 gives uniform
    weights).
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InvalidWeightsError("coords must be an (n, 2) lat/lon array")
    if np.any(np.abs(coords[:, 0]) > 90) or np.any(np.abs(coords[:, 1]) > 180):
        raise InvalidWeightsError("latitude/longitude out of range")
    n = coords.shape[0]
    dist = haversine_km(coords)
    kind = scheme.get("kind")
    if kind == "knn":
        k = int(scheme["k"])
        if not 1 <= k < n:
            raise InvalidWeightsError(f"knn k must be in [1, n-1], got {k}")
        A = np.zeros((n, n))
        big = dist + np.diag(np.full(n, np.inf))
        nearest = np.argsort(big, axis=1)[:, :k]
        rows = np.repeat(np.arange(n), k)
        A[rows, nearest.ravel()] = 1.0
        A = np.maximum(A, A.T)
    elif kind == "cutoff":
        radius = float(scheme["radius_km"])
        gamma = float(scheme.get("exponent", 0.0))
        if gamma < 0:
            raise InvalidWeightsError("inverse-distance exponent must be >= 0")
        off_diag = ~np.eye(n, dtype=bool)
        within = (dist <= radius) & off_diag
        if gamma > 0 and np.any(within & (dist == 0)):
            raise DegenerateDistanceError(
                "duplicate coordinates give zero distance under inverse-distance weights")
        A = np.zeros((n, n))
        if gamma > 0:
            A[within] = dist[within] ** (-gamma)
        else:
            A[within] = 1.0
    else:
        raise InvalidWeightsError(f"unknown scheme kind: {kind!r}")
    return build_row_normalized(A, meta={"scheme": dict(scheme)})


# ---------------------------------------------------------------------------
# CSV input/output


def load_dense_csv(path) -> SpatialWeights:
    """Dense n x n adjacency CSV, no header."""
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    return build_row_normalized(A, meta={"source": "dense-csv"})


def load_edgelist_csv(path) -> SpatialWeights:
    """Edge-list CSV with header ``i,j,w`` and 0-based indices."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:3]] != ["i", "j", "w"]:
            raise InvalidWeightsError("edge list must have header i,j,w")
        edges = [(int(row["i"]), int(row["j"]), float(row["w"])) for row in reader]
    if not edges:
        raise InvalidWeightsError("empty edge list")
    n = max(max(i, j) for i, j, _ in edges) + 1
    A = np.zeros((n, n))
    for i, j, w in edges:
        A[i, j] = w
    return build_row_normalized(A, meta={"source": "edgelist-csv"})


def load_coordinates_csv(path, scheme: dict) -> SpatialWeights:
    """Coordinates CSV with header ``id,lat,lon``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:3]] != ["id", "lat", "lon"]:
            raise InvalidWeightsError("coordinates file must have header id,lat,lon")
        coords = np.array([[float(row["lat"]), float(row["lon"])] for row in reader])
    return weights_from_coordinates(coords, scheme)


def save_row_normalized_csv(weights: SpatialWeights, path) -> None:
    np.savetxt(path, weights.L, delimiter=",")
