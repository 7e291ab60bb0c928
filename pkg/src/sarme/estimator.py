"""Bias-corrected quasi-maximum-likelihood estimation for the SAR model.

The response follows ``Y = rho L Y + X delta + V`` but the first d1 covariate
columns are only observed with additive error of known (or estimated)
covariance.  Estimation concentrates the corrected likelihood down to a 1-D
objective in rho:

* ``M2 = I - X(X'X - sum_i Omega_i)^{-1} X'`` replaces the OLS annihilator
  (it is symmetric but, unlike the OLS version, not idempotent);
* ``sigma2(rho) = Y' S(rho)' M2 S(rho) Y / n`` with ``S(rho) = I - rho L``;
* ``f(rho) = -log|S(rho)| + (n/2) log sigma2(rho)`` is minimized by Brent's
  method, or by a safeguarded Newton iteration when the weight matrix is
  symmetric (real spectrum makes the log-determinant a cheap eigenvalue sum);
* ``delta = (X'X - sum Omega)^{-1} X' S(rho) Y`` and sigma2 follow in closed
  form.

Setting all Omega_i = 0 reproduces the ordinary SAR QMLE exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from . import inference
from .design import MeasurementErrorSpec, ObservedDesign, no_measurement_error
from .exceptions import (
    NegativeProfileVarianceError,
    NoConvergenceError,
    NonInvertibleGramError,
    SingularSError,
)
from .weights import SpatialWeights

GRAM_CONDITION_LIMIT = 1e12
DEFAULT_RHO_INTERVAL = (-0.999, 0.999)
BOUNDARY_WARN_TOL = 1e-4


@dataclass(frozen=True)
class SarParams:
    """Parameter vector theta = (delta, rho, sigma2), delta = (beta, gamma)."""

    delta: np.ndarray
    rho: float
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))

    @property
    def p(self) -> int:
        return self.delta.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, [self.rho, self.sigma2]])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "SarParams":
        v = np.asarray(v, dtype=float)
        return cls(delta=v[:-2], rho=float(v[-2]), sigma2=float(v[-1]))


@dataclass(frozen=True)
class FitResult:
    params: SarParams
    vcov: np.ndarray
    std_errors: np.ndarray
    loglik: float
    optimizer: dict
    warnings: tuple = ()
    cov_detail: object = field(default=None, compare=False)


class M2Projector:
    """Corrected projector M2 with the factorized corrected Gram matrix.

    Only matrix-vector products are needed on the hot path; the dense n x n
    form and the companion matrix K are materialized lazily for diagnostics
    and tests.
    """

    def __init__(self, design: ObservedDesign, me: MeasurementErrorSpec):
        X = design.X_tilde
        sum_omega = me.sum_omega
        gram = X.T @ X - sum_omega
        gram = (gram + gram.T) / 2.0
        eigs = np.linalg.eigvalsh(gram)
        if eigs.min() <= 0 or eigs.max() / eigs.min() > GRAM_CONDITION_LIMIT:
            cond = np.inf if eigs.min() <= 0 else eigs.max() / eigs.min()
            raise NonInvertibleGramError(
                f"corrected Gram matrix X'X - sum(Omega) is near singular "
                f"(condition estimate {cond:.3e}); measurement error may be "
                f"too large relative to covariate variation")
        self.design = design
        self.me = me
        self.X = X
        self.sum_omega = sum_omega
        self._cho = scipy.linalg.cho_factor(gram)
        self.condition = float(eigs.max() / eigs.min())

    def gram_solve(self, B: np.ndarray) -> np.ndarray:
        """(X'X - sum Omega)^{-1} B."""
        return scipy.linalg.cho_solve(self._cho, B)

    def apply(self, V: np.ndarray) -> np.ndarray:
        """M2 @ V without forming M2."""
        return V - self.X @ self.gram_solve(self.X.T @ V)

    def quad(self, v: np.ndarray, w: np.ndarray) -> float:
        return float(v @ self.apply(w))

    @cached_property
    def matrix(self) -> np.ndarray:
        n = self.X.shape[0]
        return np.eye(n) - self.X @ self.gram_solve(self.X.T)

    @cached_property
    def k_matrix(self) -> np.ndarray:
        """K = X (X'X - sum Omega)^{-1} (sum Omega) (X'X - sum Omega)^{-1} X'."""
        B = self.gram_solve(self.X.T)  # (p, n)
        return B.T @ self.sum_omega @ B


def m2_projector(design: ObservedDesign, me: MeasurementErrorSpec) -> M2Projector:
    return M2Projector(design, me)


def log_det_s(rho: float, weights: SpatialWeights) -> float:
    """log|I - rho L|, via the real spectrum when A is symmetric, else LU."""
    if weights.symmetric:
        terms = 1.0 - rho * weights.laplacian_eigenvalues
        if np.any(terms <= 0):
            raise SingularSError(f"I - rho L singular or negative definite at rho={rho}")
        return float(np.log(terms).sum())
    sign, logdet = np.linalg.slogdet(np.eye(weights.n) - rho * weights.L)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularSError(f"non-positive determinant of I - rho L at rho={rho}")
    return float(logdet)


def sigma2_of_rho(rho: float, Y: np.ndarray, weights: SpatialWeights,
                  m2: M2Projector, *, raise_on_nonpositive: bool = True) -> float:
    """Profile variance Y' S(rho)' M2 S(rho) Y / n."""
    v = Y - rho * (weights.L @ Y)
    value = m2.quad(v, v) / Y.shape[0]
    if value <= 0 and raise_on_nonpositive:
        raise NegativeProfileVarianceError(
            f"profile variance {value:.3e} <= 0 at rho={rho}; the measurement "
            f"error covariance may be too large for this sample")
    return value


class _Profile:
    """Concentrated objective with the rho-quadratic coefficients cached.

    n*sigma2(rho) = q0 - 2 rho q1 + rho^2 q2 with q0 = Y'M2 Y,
    q1 = Y'M2 LY and q2 = (LY)'M2 LY, so each objective evaluation costs
    O(n) once the three quadratic forms are known.
    """

    def __init__(self, Y: np.ndarray, weights: SpatialWeights, m2: M2Projector):
        self.Y = np.asarray(Y, dtype=float)
        self.weights = weights
        self.m2 = m2
        self.n = self.Y.shape[0]
        LY = weights.L @ self.Y
        m2Y = m2.apply(self.Y)
        m2LY = m2.apply(LY)
        self.LY = LY
        self.q0 = float(self.Y @ m2Y)
        self.q1 = float(self.Y @ m2LY)
        self.q2 = float(LY @ m2LY)
        self.eigenvalues = weights.laplacian_eigenvalues if weights.symmetric else None

    def sigma2(self, rho: float) -> float:
        return (self.q0 - 2.0 * rho * self.q1 + rho ** 2 * self.q2) / self.n

    def logdet(self, rho: float) -> float:
        if self.eigenvalues is not None:
            terms = 1.0 - rho * self.eigenvalues
            if np.any(terms <= 0):
                raise SingularSError(f"I - rho L singular at rho={rho}")
            return float(np.log(terms).sum())
        return log_det_s(rho, self.weights)

    def objective(self, rho: float, *, penalize: bool = False) -> float:
        sig2 = self.sigma2(rho)
        if sig2 <= 0:
            if penalize:
                return 1e300
            raise NegativeProfileVarianceError(
                f"profile variance {sig2:.3e} <= 0 at rho={rho}")
        try:
            ld = self.logdet(rho)
        except SingularSError:
            if penalize:
                return 1e300
            raise
        return -ld + 0.5 * self.n * np.log(sig2)

    # first/second derivatives of the objective, symmetric weights only
    def d1(self, rho: float) -> float:
        lam = self.eigenvalues
        sig2 = self.sigma2(rho)
        return float((lam / (1.0 - rho * lam)).sum() + (rho * self.q2 - self.q1) / sig2)

    def d2(self, rho: float) -> float:
        lam = self.eigenvalues
        sig2 = self.sigma2(rho)
        g = (rho * self.q2 - self.q1)
        return float((lam ** 2 / (1.0 - rho * lam) ** 2).sum()
                     + self.q2 / sig2 - 2.0 * g ** 2 / (self.n * sig2 ** 2))


def concentrated_objective(rho: float, Y: np.ndarray, weights: SpatialWeights,
                           m2: M2Projector) -> float:
    """f(rho) = -log|I - rho L| + (n/2) log sigma2(rho), to be minimized."""
    return _Profile(Y, weights, m2).objective(rho)


def _brent_minimize(profile: _Profile, interval, tol: float, max_iter: int):
    res = minimize_scalar(lambda r: profile.objective(r, penalize=True),
                          bounds=interval, method="bounded",
                          options={"xatol": tol, "maxiter": max_iter})
    if not res.success:
        raise NoConvergenceError(
            f"bounded scalar search did not converge in {max_iter} evaluations: "
            f"{res.message}")
    return float(res.x), int(res.nfev)


def newton_rho_symmetric(Y: np.ndarray, weights: SpatialWeights, m2: M2Projector,
                         rho_init: float, tol: float = 1e-12,
                         interval=DEFAULT_RHO_INTERVAL, max_iter: int = 100) -> float:
    """Safeguarded Newton iteration on f'(rho) for symmetric weight matrices.

    Uses the eigenvalue form of the log-determinant derivatives,
    sum_i lambda_i/(1 - rho lambda_i) and its square, and falls back to
    bisection whenever the curvature is non-positive or a step leaves the
    current bracket.
    """
    if not weights.symmetric:
        raise ValueError("newton_rho_symmetric requires a symmetric weight matrix")
    profile = _Profile(Y, weights, m2)
    rho, _ = _newton_rho(profile, rho_init, tol, interval, max_iter)
    return rho


def _newton_rho(profile: _Profile, rho_init: float, tol: float,
                interval, max_iter: int):
    lo, hi = float(interval[0]), float(interval[1])
    # bracket a sign change of f' around the coarse grid minimum
    grid = np.linspace(lo, hi, 129)
    vals = np.array([profile.objective(r, penalize=True) for r in grid])
    j = int(np.argmin(vals))
    lo_b = grid[max(j - 1, 0)]
    hi_b = grid[min(j + 1, len(grid) - 1)]
    if profile.d1(lo_b) > 0 or profile.d1(hi_b) < 0:
        # minimum at (or adjacent to) the interval boundary
        rho = float(grid[j])
        lo_b, hi_b = max(lo, rho - 1e-6), min(hi, rho + 1e-6)
    rho = float(np.clip(rho_init, lo_b, hi_b))
    for it in range(1, max_iter + 1):
        g = profile.d1(rho)
        if abs(g) < tol * max(1.0, profile.n):
            return rho, it
        if g > 0:
            hi_b = rho
        else:
            lo_b = rho
        h = profile.d2(rho)
        step_ok = h > 0
        if step_ok:
            cand = rho - g / h
            step_ok = lo_b < cand < hi_b
        rho_new = cand if step_ok else 0.5 * (lo_b + hi_b)
        if abs(rho_new - rho) < 1e-15:
            return rho_new, it
        rho = rho_new
        if hi_b - lo_b < 1e-15:
            return rho, it
    raise NoConvergenceError(f"Newton iteration for rho did not converge in {max_iter} steps")


def _newton_polish(profile: _Profile, rho: float, interval, steps: int = 3) -> float:
    lo, hi = interval
    # the objective is flat to machine precision near the minimum, so the
    # polish is judged on the gradient rather than on objective values
    best, best_g = rho, abs(profile.d1(rho))
    for _ in range(steps):
        h = profile.d2(rho)
        if not np.isfinite(h) or h <= 0:
            break
        cand = rho - profile.d1(rho) / h
        if not lo < cand < hi:
            break
        g = abs(profile.d1(cand))
        if g < best_g:
            best, best_g = cand, g
        if abs(cand - rho) < 1e-14:
            break
        rho = cand
    return best


def default_rho_interval(weights: SpatialWeights) -> tuple:
    """Search interval for rho: (-0.999, 0.999), intersected with the
    eigenvalue-implied singularity-free range when the spectrum is known."""
    lo, hi = DEFAULT_RHO_INTERVAL
    if weights.symmetric:
        lam = weights.laplacian_eigenvalues
        lam_min, lam_max = lam.min(), lam.max()
        if lam_min < 0 < lam_max:
            lo = max(lo, 1.0 / lam_min + 1e-6)
            hi = min(hi, 1.0 / lam_max - 1e-6)
    return (lo, hi)


def fit_meqmle(Y: np.ndarray, weights: SpatialWeights, design: ObservedDesign,
               me: MeasurementErrorSpec | None = None, *,
               rho_interval=None, tol: float = 1e-10, max_iter: int = 500,
               method: str = "brent", compute_vcov: bool = True) -> FitResult:
    """Measurement-error-corrected QMLE of (delta, rho, sigma2).

    ``method`` is "brent" (default, derivative free) or "newton" (symmetric
    weight matrices only; cross-checked against the same concentrated
    objective).  Standard errors come from the sandwich covariance; when
    ``me`` carries the covariance of an estimated shared Omega, the reported
    standard errors include the corresponding variance inflation.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    n, p = design.n, design.p
    if me is None:
        me = no_measurement_error(n, p)
    if Y.shape[0] != n or weights.n != n:
        raise ValueError("Y, weights and design must agree on n")
    if me.n_obs != n:
        raise ValueError("measurement-error spec was built for a different n")
    if n <= p + 2:
        raise ValueError(f"need n > p + 2, got n={n}, p={p}")

    m2 = m2_projector(design, me)
    profile = _Profile(Y, weights, m2)
    interval = tuple(rho_interval) if rho_interval is not None else default_rho_interval(weights)

    if method == "newton":
        if not weights.symmetric:
            raise ValueError("method='newton' requires a symmetric weight matrix")
        rho_hat, iterations = _newton_rho(profile, 0.0, 1e-12, interval, max_iter)
        opt = {"method": "newton", "iterations": iterations,
               "final_gradient": profile.d1(rho_hat), "rho_interval": list(interval)}
    elif method == "brent":
        rho_hat, nfev = _brent_minimize(profile, interval, tol, max_iter)
        if weights.symmetric:
            # the bounded scalar search bottoms out around sqrt(eps)*|rho|;
            # a Newton polish removes that floor at negligible cost
            rho_hat = _newton_polish(profile, rho_hat, interval)
        grad = profile.d1(rho_hat) if weights.symmetric else float("nan")
        opt = {"method": "brent", "iterations": nfev,
               "final_gradient": grad, "rho_interval": list(interval)}
    else:
        raise ValueError(f"unknown method {method!r}")

    warnings = []
    if min(rho_hat - interval[0], interval[1] - rho_hat) < BOUNDARY_WARN_TOL:
        warnings.append(
            f"rho estimate {rho_hat:.6f} is within {BOUNDARY_WARN_TOL} of the "
            f"search interval {interval}")

    v = Y - rho_hat * profile.LY
    delta_hat = m2.gram_solve(design.X_tilde.T @ v)
    sigma2_hat = sigma2_of_rho(rho_hat, Y, weights, m2)
    params = SarParams(delta=delta_hat, rho=rho_hat, sigma2=sigma2_hat)
    loglik = inference.corrected_loglik(params, Y, weights, design, me)

    if compute_vcov:
        sw = inference.sandwich(params, Y, weights, design, me)
        if me.kind == "estimated_shared" and me.C_hat is not None:
            sw = inference.inflate_for_estimated_omega(sw, params, me)
            vcov = sw.inflated
        else:
            vcov = sw.vcov
        std_errors = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    else:
        sw = None
        vcov = np.full((p + 2, p + 2), np.nan)
        std_errors = np.full(p + 2, np.nan)

    return FitResult(params=params, vcov=vcov, std_errors=std_errors,
                     loglik=loglik, optimizer=opt, warnings=tuple(warnings),
                     cov_detail=sw)


def fit_qmle_uncorrected(Y: np.ndarray, weights: SpatialWeights,
                         design: ObservedDesign, **opts) -> FitResult:
    """Standard SAR QMLE, i.e. the corrected fit with all Omega_i = 0."""
    return fit_meqmle(Y, weights, design, me=None, **opts)
