import numpy as np
import pytest

from sarme.design import ObservedDesign, assemble_omega, no_measurement_error
from sarme.estimator import SarParams
from sarme.weights import build_row_normalized


def random_weights(rng, n, p_edge=0.15, symmetric=True):
    upper = np.triu(rng.random((n, n)) < p_edge, 1)
    if symmetric:
        A = (upper | upper.T).astype(float)
    else:
        A = ((rng.random((n, n)) < p_edge) & ~np.eye(n, dtype=bool)).astype(float)
    # guarantee no isolated nodes so the instances stay generic
    for i in range(n):
        if A[i].sum() == 0:
            j = (i + 1) % n
            A[i, j] = 1.0
            if symmetric:
                A[j, i] = 1.0
    return build_row_normalized(A)


def random_instance(rng, n=60, d1=2, d2=1, rho=0.3, sigma2=1.0,
                    error_scale=0.3, symmetric=True):
    """Weights, observed design, measurement-error spec and an outcome vector
    drawn from the model at the returned true parameters."""
    weights = random_weights(rng, n, symmetric=symmetric)
    p = d1 + d2
    delta0 = rng.normal(size=p)
    X = rng.standard_normal((n, p))
    deltas = []
    X_obs = X.copy()
    if d1:
        base = rng.standard_normal((d1, d1))
        Delta = error_scale * (base @ base.T / d1 + 0.1 * np.eye(d1))
        chol = np.linalg.cholesky(Delta)
        X_obs[:, :d1] += rng.standard_normal((n, d1)) @ chol.T
        deltas = [Delta] * n
    S = np.eye(n) - rho * weights.L
    Y = np.linalg.solve(S, X @ delta0 + np.sqrt(sigma2) * rng.standard_normal(n))
    design = ObservedDesign(X_obs, d1=d1, d2=d2)
    me = assemble_omega(deltas, d2=d2) if d1 else no_measurement_error(n, p)
    theta0 = SarParams(delta=delta0, rho=rho, sigma2=sigma2)
    return weights, design, me, Y, theta0


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
