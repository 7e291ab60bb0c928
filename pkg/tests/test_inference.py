import numpy as np
import pytest

from sarme.design import ObservedDesign, assemble_omega, no_measurement_error, shared_omega
from sarme.estimator import SarParams, fit_meqmle
from sarme.exceptions import InvalidCError
from sarme.inference import (
    corrected_loglik,
    corrected_score,
    d_matrix,
    inflate_for_estimated_omega,
    observed_information,
    per_observation_scores,
    sandwich,
    score_outer_product,
)

from conftest import random_instance, random_weights


def random_theta(rng, p):
    return SarParams(delta=rng.normal(size=p), rho=float(rng.uniform(-0.5, 0.7)),
                     sigma2=float(rng.uniform(0.5, 2.0)))


def numeric_gradient(f, theta, h=1e-6):
    v = theta.as_vector()
    out = np.zeros_like(v)
    for j in range(v.size):
        hp = h * max(1.0, abs(v[j]))
        vp, vm = v.copy(), v.copy()
        vp[j] += hp
        vm[j] -= hp
        out[j] = (f(SarParams.from_vector(vp)) - f(SarParams.from_vector(vm))) / (2 * hp)
    return out


def test_per_observation_scores_sum_to_full_score(rng):
    for _ in range(5):
        w, design, me, Y, theta0 = random_instance(rng, n=50)
        theta = random_theta(rng, design.p)
        full = corrected_score(theta, Y, w, design, me).as_vector()
        per = per_observation_scores(theta, Y, w, design, me)
        assert per.shape == (50, design.p + 2)
        assert np.abs(per.sum(axis=0) - full).max() < 1e-9 * max(1.0, np.abs(full).max())


def test_score_matches_finite_differences(rng):
    for _ in range(5):
        w, design, me, Y, _ = random_instance(rng, n=50)
        theta = random_theta(rng, design.p)
        analytic = corrected_score(theta, Y, w, design, me).as_vector()
        numeric = numeric_gradient(
            lambda t: corrected_loglik(t, Y, w, design, me), theta)
        scale = np.maximum(1.0, np.abs(numeric))
        assert np.abs(analytic - numeric).max() / scale.max() < 1e-6


def test_score_reduces_to_plain_qmle_without_error(rng):
    w, design, _, Y, _ = random_instance(rng, n=40, d1=0, d2=3)
    me = no_measurement_error(40, 3)
    theta = random_theta(rng, 3)
    s = corrected_score(theta, Y, w, design, me).as_vector()
    # plain QMLE score assembled independently
    S = np.eye(40) - theta.rho * w.L
    V = S @ Y - design.X_tilde @ theta.delta
    G = w.L @ np.linalg.inv(S)
    expected = np.concatenate([
        design.X_tilde.T @ V / theta.sigma2,
        [float((w.L @ Y) @ V) / theta.sigma2 - np.trace(G),
         -20 / theta.sigma2 + float(V @ V) / (2 * theta.sigma2 ** 2)]])
    assert np.allclose(s, expected, atol=1e-9)


def test_information_block_reduction(rng):
    w, design, _, Y, _ = random_instance(rng, n=40, d1=0, d2=3)
    me = no_measurement_error(40, 3)
    theta = SarParams(delta=rng.normal(size=3), rho=0.0, sigma2=1.3)
    info = observed_information(theta, Y, w, design, me)
    X = design.X_tilde
    assert np.allclose(info[:3, :3], X.T @ X / (40 * 1.3), atol=1e-12)
    assert np.allclose(info, info.T, atol=1e-10)
    assert info[3, 4] == pytest.approx(np.trace(w.L @ np.linalg.inv(np.eye(40))) / 1.3 / 40)


def test_information_delta_block_matches_numeric_hessian(rng):
    # the delta-delta block of the corrected log-likelihood Hessian is exact
    # (non-stochastic given the data), so finite differences must match it
    w, design, me, Y, _ = random_instance(rng, n=60)
    theta = random_theta(rng, design.p)
    info = observed_information(theta, Y, w, design, me)
    p = design.p
    h = 1e-5
    hess = np.zeros((p, p))
    for a in range(p):
        for b in range(p):
            va = np.zeros(p + 2)
            vb = np.zeros(p + 2)
            va[a] = h
            vb[b] = h

            def ll(shift):
                return corrected_loglik(SarParams.from_vector(theta.as_vector() + shift),
                                        Y, w, design, me)

            hess[a, b] = (ll(va + vb) - ll(va - vb) - ll(-va + vb) + ll(-va - vb)) / (4 * h * h)
    assert np.abs(-hess / 60 - info[:p, :p]).max() < 1e-4


def test_information_tracks_average_numeric_hessian():
    # the rho/sigma2 blocks of the estimator differ from a single draw's
    # Hessian by mean-zero noise; averaging draws recovers the same limit
    rng = np.random.default_rng(99)
    w, design0, _, _, theta0 = random_instance(rng, n=80, d1=0, d2=2, rho=0.3)
    me = no_measurement_error(80, 2)
    X = design0.X_tilde
    S = np.eye(80) - theta0.rho * w.L
    infos, hessians = [], []
    v = theta0.as_vector()
    h = 1e-4
    for _ in range(150):
        Y = np.linalg.solve(S, X @ theta0.delta + rng.standard_normal(80))
        infos.append(observed_information(theta0, Y, w, design0, me))

        def ll(shift):
            return corrected_loglik(SarParams.from_vector(v + shift), Y, w, design0, me)

        H = np.zeros((4, 4))
        for a in range(4):
            for b in range(a, 4):
                ea, eb = np.zeros(4), np.zeros(4)
                ea[a] = h * max(1, abs(v[a]))
                eb[b] = h * max(1, abs(v[b]))
                H[a, b] = H[b, a] = (ll(ea + eb) - ll(ea - eb) - ll(-ea + eb)
                                     + ll(-ea - eb)) / (4 * ea[a] * eb[b])
        hessians.append(-H / 80)
    mean_info = np.mean(infos, axis=0)
    mean_hess = np.mean(hessians, axis=0)
    assert np.abs(mean_info - mean_hess).max() < 0.05 * max(1.0, np.abs(mean_info).max())


def test_sigma_hat_psd_and_sandwich_shape(rng):
    w, design, me, Y, _ = random_instance(rng, n=60)
    res = fit_meqmle(Y, w, design, me, compute_vcov=False)
    sw = sandwich(res.params, Y, w, design, me)
    assert np.allclose(sw.Sigma_hat, sw.Sigma_hat.T, atol=1e-10)
    assert np.linalg.eigvalsh(sw.Sigma_hat).min() > -1e-10
    assert np.allclose(sw.vcov, sw.vcov.T, atol=1e-10)
    assert sw.std_errors.shape == (design.p + 2,)
    direct = score_outer_product(res.params, Y, w, design, me)
    assert np.allclose(direct, sw.Sigma_hat)


def test_d_matrix_known_example():
    theta = SarParams(delta=np.array([1.0, 2.0]), rho=0.2, sigma2=1.0)
    D = d_matrix(theta, n=10)
    assert D.shape == (4, 4)
    assert np.allclose(D[0], [10.0, 20.0, 0.0, 0.0])
    assert np.allclose(D[1], [0.0, 0.0, 10.0, 20.0])
    assert np.all(D[2] == 0.0)  # the rho score does not involve Omega
    assert np.allclose(D[3], -10 / 2 * np.array([1.0, 2.0, 2.0, 4.0]))


def test_d_matrix_matches_score_jacobian(rng):
    # derivative of the corrected score with respect to vec(Omega) for a
    # shared Omega; the score is linear in Omega so differences are exact
    for _ in range(5):
        w, design, _, Y, _ = random_instance(rng, n=30, d1=3, d2=0)
        theta = random_theta(rng, 3)
        p, n = 3, 30
        base = np.array([[0.3, 0.1, 0.05], [0.1, 0.2, 0.02], [0.05, 0.02, 0.25]])
        h = 1e-6
        D_num = np.zeros((p + 2, p * p))
        for a in range(p):
            for b in range(p):
                pert = np.zeros((p, p))
                pert[a, b] = h
                # keep Omega symmetric through the validator by perturbing the
                # (a, b) and (b, a) entries together and halving afterwards
                me_p = shared_omega((base + pert + (base + pert).T) / 2, d2=0, n=n)
                me_m = shared_omega((base - pert + (base - pert).T) / 2, d2=0, n=n)
                sp = corrected_score(theta, Y, w, design, me_p).as_vector()
                sm = corrected_score(theta, Y, w, design, me_m).as_vector()
                D_num[:, a * p + b] += (sp - sm) / (2 * h) / 2
                D_num[:, b * p + a] += (sp - sm) / (2 * h) / 2
        D = d_matrix(theta, n)
        # symmetrize the analytic Jacobian the same way the perturbation does
        D_sym = D.copy()
        for a in range(p):
            for b in range(a + 1, p):
                avg = (D[:, a * p + b] + D[:, b * p + a]) / 2
                D_sym[:, a * p + b] = D_sym[:, b * p + a] = avg
        scale = max(1.0, np.abs(D_sym).max())
        assert np.abs(D_num - D_sym).max() / scale < 1e-6


def test_inflation_never_shrinks_standard_errors(rng):
    for _ in range(10):
        w, design, _, Y, _ = random_instance(rng, n=50, d1=2, d2=1)
        delta_shared = np.array([[0.3, 0.1], [0.1, 0.25]])
        q = rng.standard_normal((4, 4))
        C = q @ q.T * 1e-4
        me = shared_omega(delta_shared, d2=1, n=50, C_delta=(C + C.T) / 2)
        res = fit_meqmle(Y, w, design, me, compute_vcov=False)
        sw = sandwich(res.params, Y, w, design, me)
        inflated = inflate_for_estimated_omega(sw, res.params, me)
        assert np.all(np.diag(inflated.inflated) >= np.diag(inflated.vcov) - 1e-12)


def test_inflation_with_zero_c_is_identity(rng):
    w, design, _, Y, _ = random_instance(rng, n=40, d1=2, d2=1)
    me = shared_omega(np.array([[0.3, 0.1], [0.1, 0.25]]), d2=1, n=40,
                      C_delta=np.zeros((4, 4)))
    res = fit_meqmle(Y, w, design, me, compute_vcov=False)
    sw = sandwich(res.params, Y, w, design, me)
    inflated = inflate_for_estimated_omega(sw, res.params, me)
    assert np.allclose(inflated.inflated, inflated.vcov, atol=1e-14)


def test_inflation_rejects_invalid_c(rng):
    w, design, _, Y, _ = random_instance(rng, n=40, d1=2, d2=1)
    me = shared_omega(np.array([[0.3, 0.1], [0.1, 0.25]]), d2=1, n=40)
    res = fit_meqmle(Y, w, design, me, compute_vcov=False)
    sw = sandwich(res.params, Y, w, design, me)
    with pytest.raises(InvalidCError, match="no C_hat"):
        inflate_for_estimated_omega(sw, res.params, me)
