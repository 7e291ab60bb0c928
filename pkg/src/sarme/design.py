"""Observed design matrices and measurement-error specifications.

The observed covariate matrix is always ordered ``[U_tilde | Z]``: the d1
error-prone columns come first, followed by the d2 clean columns.  Per-unit
error covariances Delta_i live in the top-left d1 x d1 block of the padded
p x p matrices Omega_i; the clean rows/columns are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import AsymmetricDeltaError, InvalidCError, NotPSDError

PSD_TOL = -1e-10  # minimum-eigenvalue tolerance for estimated covariance blocks
SYM_TOL = 1e-10


@dataclass(frozen=True)
class ObservedDesign:
    """Observed n x p covariate matrix with columns ordered [U_tilde | Z]."""

    X_tilde: np.ndarray
    d1: int
    d2: int
    column_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X_tilde, dtype=float)
        object.__setattr__(self, "X_tilde", X)
        if self.d1 < 0 or self.d2 < 0 or self.d1 + self.d2 < 1:
            raise ValueError("need d1 >= 0, d2 >= 0 and p = d1 + d2 >= 1")
        if X.ndim != 2 or X.shape[1] != self.d1 + self.d2:
            raise ValueError(f"X_tilde has shape {X.shape}, expected (n, {self.d1 + self.d2})")
        if not self.column_names:
            names = [f"u{j + 1}" for j in range(self.d1)] + [f"z{j + 1}" for j in range(self.d2)]
            object.__setattr__(self, "column_names", tuple(names))
        elif len(self.column_names) != self.p:
            raise ValueError("column_names length must equal p")

    @property
    def p(self) -> int:
        return self.d1 + self.d2

    @property
    def n(self) -> int:
        return self.X_tilde.shape[0]


@dataclass(frozen=True)
class MeasurementErrorSpec:
    """Measurement-error covariance specification.

    kind = "none":            no error-prone columns are corrected.
    kind = "known":           per-unit Omega_i stacked in ``omegas`` (n, p, p).
    kind = "estimated_shared": one shared Omega (p, p) in ``omega_shared``
                               plus ``C_hat`` (p^2, p^2), the covariance of
                               vec(Omega_hat) on its natural finite-sample
                               scale.
    ``sum_omega`` caches sum_i Omega_i, the only aggregate most formulas need.
    """

    kind: str
    omegas: np.ndarray | None = None
    omega_shared: np.ndarray | None = None
    C_hat: np.ndarray | None = None
    n_obs: int = 0
    sum_omega: np.ndarray = field(default=None, compare=False)

    def omega_i(self, i: int) -> np.ndarray:
        p = self.sum_omega.shape[0]
        if self.kind == "none":
            return np.zeros((p, p))
        if self.kind == "known":
            return self.omegas[i]
        return self.omega_shared

    def omegas_stacked(self, p: int) -> np.ndarray:
        """All n Omega_i as an (n, p, p) array."""
        if self.kind == "known":
            return self.omegas
        if self.kind == "estimated_shared":
            return np.broadcast_to(self.omega_shared, (self.n_obs, p, p))
        return np.zeros((self.n_obs, p, p))


def no_measurement_error(n: int, p: int) -> MeasurementErrorSpec:
    return MeasurementErrorSpec(kind="none", n_obs=n, sum_omega=np.zeros((p, p)))


def _check_delta(delta: np.ndarray, d1: int, label: str) -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (d1, d1):
        raise ValueError(f"{label} has shape {delta.shape}, expected ({d1}, {d1})")
    if np.max(np.abs(delta - delta.T), initial=0.0) > SYM_TOL:
        raise AsymmetricDeltaError(f"{label} is not symmetric")
    if d1 and np.linalg.eigvalsh(delta).min() < PSD_TOL:
        raise NotPSDError(f"{label} has eigenvalue below {PSD_TOL}")
    return delta


def _pad(delta: np.ndarray, d2: int) -> np.ndarray:
    d1 = delta.shape[0]
    omega = np.zeros((d1 + d2, d1 + d2))
    omega[:d1, :d1] = delta
    return omega


def assemble_omega(deltas, d2: int) -> MeasurementErrorSpec:
    """Zero-pad per-unit d1 x d1 blocks Delta_i into a Known spec."""
    deltas = [np.atleast_2d(np.asarray(d, dtype=float)) for d in deltas]
    if not deltas:
        raise ValueError("need at least one Delta_i")
    d1 = deltas[0].shape[0]
    omegas = np.stack([_pad(_check_delta(d, d1, f"Delta_{i + 1}"), d2)
                       for i, d in enumerate(deltas)])
    return MeasurementErrorSpec(kind="known", omegas=omegas, n_obs=len(deltas),
                                sum_omega=omegas.sum(axis=0))


def shared_omega(delta: np.ndarray, d2: int, n: int,
                 C_delta: np.ndarray | None = None) -> MeasurementErrorSpec:
    """Shared Omega from one estimated Delta block, optionally with the
    covariance C(vec(Delta_hat)) which is zero-padded into C(vec(Omega_hat))."""
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    d1 = delta.shape[0]
    p = d1 + d2
    omega = _pad(_check_delta(delta, d1, "Delta"), d2)
    C_hat = None
    if C_delta is not None:
        C_delta = np.asarray(C_delta, dtype=float)
        if C_delta.shape != (d1 * d1, d1 * d1):
            raise ValueError(f"C_delta has shape {C_delta.shape}, expected ({d1 * d1}, {d1 * d1})")
        if np.max(np.abs(C_delta - C_delta.T), initial=0.0) > 1e-8 * (1 + np.abs(C_delta).max()):
            raise InvalidCError("C_delta is not symmetric")
        if C_delta.size and np.linalg.eigvalsh((C_delta + C_delta.T) / 2).min() < PSD_TOL * (1 + np.abs(C_delta).max()):
            raise InvalidCError("C_delta is not positive semidefinite")
        # map vec indices of the d1 block into vec indices of the padded p block
        idx = np.array([a * p + b for a in range(d1) for b in range(d1)], dtype=int)
        C_hat = np.zeros((p * p, p * p))
        C_hat[np.ix_(idx, idx)] = C_delta
    return MeasurementErrorSpec(kind="estimated_shared", omega_shared=omega,
                                C_hat=C_hat, n_obs=n, sum_omega=n * omega)
