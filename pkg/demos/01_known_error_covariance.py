"""Correcting attenuation bias when the error covariance is known.

Simulates a spatial autoregressive outcome over a stochastic block model,
adds classical measurement error to two of four covariates, and compares
the naive quasi-maximum-likelihood fit against the corrected one.  The
naive slope estimates on the noisy columns shrink toward zero; the
corrected fit recovers the truth with honest sandwich standard errors.

Run:  python demos/01_known_error_covariance.py
"""

import numpy as np

from sarme import (
    ObservedDesign,
    assemble_omega,
    fit_meqmle,
    fit_qmle_uncorrected,
    generate_covariates,
    generate_sar_outcome,
    generate_sbm,
    substream,
)
from sarme.estimator import SarParams

rng = substream(20260801, 0)

# --- simulate -------------------------------------------------------------
n = 400
weights = generate_sbm(n, k=4, block_probs=np.full((4, 4), 0.4) + 0.4 * np.eye(4),
                       membership="balanced", rng=rng)

sigma_x = np.full((4, 4), 0.8) + 0.4 * np.eye(4)   # covariate covariance
sigma_xi = np.full((2, 2), 0.4) + 0.1 * np.eye(2)  # error covariance (2 noisy cols)
X, X_observed = generate_covariates(n, sigma_x, sigma_xi, rng)

truth = SarParams(delta=np.array([1.0, 1.0, 1.0, 1.0]), rho=0.4, sigma2=1.0)
Y = generate_sar_outcome(weights, X, truth, rng)

# --- fit ------------------------------------------------------------------
design = ObservedDesign(X_observed, d1=2, d2=2,
                        column_names=("u1", "u2", "z1", "z2"))
me = assemble_omega([sigma_xi] * n, d2=2)

naive = fit_qmle_uncorrected(Y, weights, design)
corrected = fit_meqmle(Y, weights, design, me)

# --- report ---------------------------------------------------------------
names = list(design.column_names) + ["rho", "sigma2"]
true_vec = truth.as_vector()
print(f"{'parameter':<10} {'truth':>7} {'naive':>9} {'corrected':>10} {'se':>8}")
for j, name in enumerate(names):
    print(f"{name:<10} {true_vec[j]:>7.2f} {naive.params.as_vector()[j]:>9.3f} "
          f"{corrected.params.as_vector()[j]:>10.3f} {corrected.std_errors[j]:>8.3f}")

print("\nNote how the naive u1/u2 slopes are attenuated toward zero while the")
print("clean z1/z2 slopes are pushed upward; the corrected fit removes both.")
