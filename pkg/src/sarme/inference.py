"""Corrected score, observed information and sandwich covariance.

Scaling convention: the information estimate ``I_hat`` and the score
outer-product ``Sigma_hat`` are both 1/n-normalized, so the parameter
covariance is ``I_hat^{-1} Sigma_hat I_hat^{-1} / n`` and the square roots of
its diagonal are directly the per-parameter standard errors.  Parameter
order everywhere is (delta_1..delta_p, rho, sigma2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .design import MeasurementErrorSpec, ObservedDesign
from .exceptions import InvalidCError, SingularInformationError, SingularSError
from .weights import SpatialWeights

INFO_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class ScoreVector:
    d_delta: np.ndarray
    d_rho: float
    d_sigma2: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.d_delta, [self.d_rho, self.d_sigma2]])


@dataclass(frozen=True)
class SandwichCovariance:
    I_hat: np.ndarray
    Sigma_hat: np.ndarray
    vcov: np.ndarray
    inflated: np.ndarray | None = None

    @property
    def std_errors(self) -> np.ndarray:
        used = self.vcov if self.inflated is None else self.inflated
        return np.sqrt(np.clip(np.diag(used), 0.0, None))


class _Workspace:
    """Shared pieces: S(rho), residuals, G = L S(rho)^{-1} and its traces."""

    def __init__(self, theta, Y, weights: SpatialWeights, design: ObservedDesign,
                 me: MeasurementErrorSpec, *, need_G: bool = False):
        n = weights.n
        L = weights.L
        S = np.eye(n) - theta.rho * L
        self.SY = S @ Y
        self.LY = L @ Y
        self.V_tilde = self.SY - design.X_tilde @ theta.delta
        self.L = L
        self.S = S
        self._G = None
        if need_G:
            self._G = self._solve_G()

    def _solve_G(self):
        try:
            return scipy.linalg.solve(self.S.T, self.L.T).T
        except scipy.linalg.LinAlgError as exc:
            raise SingularSError(f"I - rho L is singular: {exc}") from exc

    @property
    def G(self) -> np.ndarray:
        if self._G is None:
            self._G = self._solve_G()
        return self._G


def _omega_delta_rows(me: MeasurementErrorSpec, delta: np.ndarray) -> np.ndarray:
    """(n, p) array with rows Omega_i @ delta."""
    n, p = me.n_obs, delta.shape[0]
    if me.kind == "known":
        return np.einsum("ipq,q->ip", me.omegas, delta)
    if me.kind == "estimated_shared":
        return np.broadcast_to(me.omega_shared @ delta, (n, p))
    return np.zeros((n, p))


def _omega_quad(me: MeasurementErrorSpec, delta: np.ndarray) -> np.ndarray:
    """(n,) array with entries delta' Omega_i delta."""
    if me.kind == "known":
        return np.einsum("p,ipq,q->i", delta, me.omegas, delta)
    if me.kind == "estimated_shared":
        return np.full(me.n_obs, float(delta @ me.omega_shared @ delta))
    return np.zeros(me.n_obs)


def _omega_weighted_sum(me: MeasurementErrorSpec, w: np.ndarray) -> np.ndarray:
    """sum_i w_i Omega_i for a length-n weight vector."""
    p = me.sum_omega.shape[0]
    if me.kind == "known":
        return np.einsum("i,ipq->pq", w, me.omegas)
    if me.kind == "estimated_shared":
        return float(w.sum()) * me.omega_shared
    return np.zeros((p, p))


def corrected_loglik(theta, Y, weights: SpatialWeights, design: ObservedDesign,
                     me: MeasurementErrorSpec) -> float:
    """Corrected log-likelihood l*(theta)."""
    from .estimator import log_det_s  # local import to avoid a cycle

    n = weights.n
    ws = _Workspace(theta, Y, weights, design, me)
    quad = float(ws.V_tilde @ ws.V_tilde) - float(theta.delta @ me.sum_omega @ theta.delta)
    return (-0.5 * n * np.log(2.0 * np.pi * theta.sigma2)
            - quad / (2.0 * theta.sigma2)
            + log_det_s(theta.rho, weights))


def corrected_score(theta, Y, weights: SpatialWeights, design: ObservedDesign,
                    me: MeasurementErrorSpec) -> ScoreVector:
    """Gradient of the corrected log-likelihood at theta."""
    ws = _Workspace(theta, Y, weights, design, me, need_G=True)
    sig2 = theta.sigma2
    n = weights.n
    d_delta = (design.X_tilde.T @ ws.V_tilde + me.sum_omega @ theta.delta) / sig2
    d_rho = float(ws.LY @ ws.V_tilde) / sig2 - float(np.trace(ws.G))
    quad = float(ws.V_tilde @ ws.V_tilde) - float(theta.delta @ me.sum_omega @ theta.delta)
    d_sigma2 = -0.5 * n / sig2 + quad / (2.0 * sig2 ** 2)
    return ScoreVector(d_delta=d_delta, d_rho=d_rho, d_sigma2=d_sigma2)


def per_observation_scores(theta, Y, weights: SpatialWeights, design: ObservedDesign,
                           me: MeasurementErrorSpec) -> np.ndarray:
    """(n, p+2) matrix of per-observation scores; columns sum to the full score."""
    ws = _Workspace(theta, Y, weights, design, me, need_G=True)
    sig2 = theta.sigma2
    g_diag = np.diag(ws.G)
    s_delta = (design.X_tilde * ws.V_tilde[:, None] + _omega_delta_rows(me, theta.delta)) / sig2
    s_rho = ws.LY * ws.V_tilde / sig2 - g_diag
    s_sig = -0.5 / sig2 + (ws.V_tilde ** 2 - _omega_quad(me, theta.delta)) / (2.0 * sig2 ** 2)
    return np.column_stack([s_delta, s_rho, s_sig])


def observed_information(theta, Y, weights: SpatialWeights, design: ObservedDesign,
                         me: MeasurementErrorSpec) -> np.ndarray:
    """Consistent (1/n-scaled) estimate of the expected negative Hessian.

    Cross products of the observed design are debiased with the matching
    Omega_i sums: X'X - sum Omega_i, X'GX - sum G_ii Omega_i and
    X'G'GX - sum (G'G)_ii Omega_i.
    """
    ws = _Workspace(theta, Y, weights, design, me, need_G=True)
    X = design.X_tilde
    G = ws.G
    sig2 = theta.sigma2
    n, p = design.n, design.p
    GX = G @ X
    GtGX = G.T @ GX
    tr_G = float(np.trace(G))
    tr_GtG = float((G * G).sum())
    tr_GG = float((G * G.T).sum())
    gram = X.T @ X - me.sum_omega
    cross = X.T @ GX - _omega_weighted_sum(me, np.diag(G))
    quad_mat = X.T @ GtGX - _omega_weighted_sum(me, np.einsum("ji,ji->i", G, G))
    d_rho_block = float(theta.delta @ quad_mat @ theta.delta) / sig2 + tr_GtG + tr_GG

    info = np.zeros((p + 2, p + 2))
    info[:p, :p] = gram / sig2
    info[:p, p] = cross @ theta.delta / sig2
    info[p, :p] = info[:p, p]
    info[p, p] = d_rho_block
    info[p, p + 1] = info[p + 1, p] = tr_G / sig2
    info[p + 1, p + 1] = 0.5 * n / sig2 ** 2
    info /= n
    return (info + info.T) / 2.0


def score_outer_product(theta, Y, weights: SpatialWeights, design: ObservedDesign,
                        me: MeasurementErrorSpec) -> np.ndarray:
    """Sigma_hat = (1/n) sum_i s_i s_i' from the per-observation scores."""
    s = per_observation_scores(theta, Y, weights, design, me)
    return s.T @ s / s.shape[0]


def _sym_inv(M: np.ndarray, what: str) -> np.ndarray:
    M = (M + M.T) / 2.0
    eigs, vecs = np.linalg.eigh(M)
    if eigs.min() <= 0 or eigs.max() / eigs.min() > INFO_CONDITION_LIMIT:
        raise SingularInformationError(
            f"{what} is singular or ill conditioned (eigenvalues "
            f"[{eigs.min():.3e}, {eigs.max():.3e}])")
    return (vecs / eigs) @ vecs.T


def sandwich(theta, Y, weights: SpatialWeights, design: ObservedDesign,
             me: MeasurementErrorSpec) -> SandwichCovariance:
    """I_hat^{-1} Sigma_hat I_hat^{-1} / n with plug-in theta."""
    I_hat = observed_information(theta, Y, weights, design, me)
    Sigma_hat = score_outer_product(theta, Y, weights, design, me)
    I_inv = _sym_inv(I_hat, "observed information")
    vcov = I_inv @ Sigma_hat @ I_inv / weights.n
    vcov = (vcov + vcov.T) / 2.0
    return SandwichCovariance(I_hat=I_hat, Sigma_hat=Sigma_hat, vcov=vcov)


def d_matrix(theta, n: int) -> np.ndarray:
    """Jacobian of the corrected score with respect to vec(Omega), for a
    shared Omega with sum_i Omega_i = n Omega.

    Rows: p rows (n/sigma2) (I_p kron delta'), one zero row for rho, and the
    sigma2 row -(n/(2 sigma2^2)) (delta' kron delta').  The corrected
    likelihood contains +delta' (n Omega) delta / (2 sigma2), whose sigma2
    derivative is negative; the sign is pinned by the finite-difference
    oracle in the tests (it only moves off-diagonal elements of D C D').
    """
    delta = theta.delta
    p = delta.shape[0]
    D = np.zeros((p + 2, p * p))
    D[:p] = n * np.kron(np.eye(p), delta) / theta.sigma2
    D[p + 1] = -n * np.kron(delta, delta) / (2.0 * theta.sigma2 ** 2)
    return D


def inflate_for_estimated_omega(sw: SandwichCovariance, theta,
                                me: MeasurementErrorSpec) -> SandwichCovariance:
    """Add the estimated-Omega variance contribution.

    inflated = I^{-1} (Sigma + D C D' / n) I^{-1} / n, where D carries its
    factor n and C is the finite-sample covariance of vec(Omega_hat).
    """
    if me.C_hat is None:
        raise InvalidCError("measurement-error spec carries no C_hat")
    C = np.asarray(me.C_hat, dtype=float)
    scale = 1.0 + np.abs(C).max()
    if np.max(np.abs(C - C.T), initial=0.0) > 1e-8 * scale:
        raise InvalidCError("C_hat is not symmetric")
    if C.size and np.linalg.eigvalsh((C + C.T) / 2).min() < -1e-10 * scale:
        raise InvalidCError("C_hat is not positive semidefinite")
    n = me.n_obs
    D = d_matrix(theta, n)
    Sigma_adj = sw.Sigma_hat + D @ C @ D.T / n
    I_inv = _sym_inv(sw.I_hat, "observed information")
    inflated = I_inv @ Sigma_adj @ I_inv / n
    inflated = (inflated + inflated.T) / 2.0
    return SandwichCovariance(I_hat=sw.I_hat, Sigma_hat=sw.Sigma_hat,
                              vcov=sw.vcov, inflated=inflated)
