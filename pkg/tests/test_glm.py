import numpy as np
import pytest
from scipy.stats import norm

import rocsurface.glm as glm
from rocsurface import (DataError, Dataset, DesignSpec, NonConvergence,
                        SeparationError, StudyConfig, generate)
from rocsurface.glm import INTERCEPT_ONLY, fit_disease, fit_verification, predict, score_and_jacobian

from conftest import random_dataset


def _intercept_only_disease(counts):
    """Fully verified dataset with the given verified class counts."""
    d = np.concatenate([np.full(c, k + 1) for k, c in enumerate(counts)])
    n = d.size
    return Dataset.from_arrays(np.zeros(n), np.empty((n, 0)), np.ones(n, int), d)


def _intercept_only_verification(n_verified, n_total):
    v = np.zeros(n_total, int)
    v[:n_verified] = 1
    d = np.where(v == 1, 1, 0)
    d[0] = 1
    return Dataset.from_arrays(np.zeros(n_total), np.empty((n_total, 0)), v, d)


class TestFitDisease:
    def test_equal_counts_gives_zero_intercepts(self):
        ds = _intercept_only_disease([10, 10, 10])
        fit = fit_disease(ds, INTERCEPT_ONLY)
        assert fit.converged
        np.testing.assert_allclose(fit.tau, 0.0, atol=1e-9)

    def test_saturated_intercept_mle(self):
        ds = _intercept_only_disease([20, 10, 10])
        fit = fit_disease(ds, INTERCEPT_ONLY)
        np.testing.assert_allclose(fit.tau[:, 0], [np.log(2.0), 0.0], atol=1e-9)

    def test_missing_class_raises(self):
        ds = _intercept_only_disease([10, 10, 1])
        v = ds.v.copy()
        v[-1] = 0
        d = ds.d.copy()
        d[-1] = 0
        with pytest.raises(DataError, match="class 3"):
            fit_disease(Dataset.from_arrays(ds.t, ds.a, v, d))

    def test_matches_gradient_descent_oracle(self):
        """Plain fixed-step gradient ascent on the verified multinomial
        log-likelihood (standardised design), run to a tight gradient norm,
        must find the same coefficients."""
        ds = generate(StudyConfig("s1", n=250, reps=1, seed=77), 0)
        fit = fit_disease(ds)
        u = fit.spec.build(ds)
        # standardise non-intercept columns (affine reparametrisation)
        mean = u[:, 1:].mean(axis=0)
        scale = u[:, 1:].std(axis=0)
        us = u.copy()
        us[:, 1:] = (u[:, 1:] - mean) / scale
        w = ds.v.astype(float)
        y12 = ds.d_indicators()[:, :2]

        def gradient(tau):
            eta = us @ tau.T
            m = np.maximum(eta.max(axis=1), 0.0)
            lse = m + np.log(np.exp(-m) + np.exp(eta - m[:, None]).sum(axis=1))
            rho = np.exp(eta - lse[:, None])
            resid = w[:, None] * (y12 - rho)
            return np.stack([us.T @ resid[:, 0], us.T @ resid[:, 1]])

        # safe constant step: 1/L with L from the curvature bound at tau=0
        # (softmax second derivative weights are bounded by 1/4)
        gram = us.T @ (w[:, None] * us)
        lip = 0.5 * float(np.linalg.eigvalsh(gram).max())
        tau = np.zeros((2, 3))
        for _ in range(500_000):
            grad = gradient(tau)
            if np.max(np.abs(grad)) <= 1e-8:
                break
            tau = tau + grad / lip
        assert np.max(np.abs(grad)) <= 1e-8
        # map standardised coefficients back to the original design
        slopes = tau[:, 1:] / scale
        intercepts = tau[:, 0] - (tau[:, 1:] * mean / scale).sum(axis=1)
        oracle = np.column_stack([intercepts, slopes])
        np.testing.assert_allclose(fit.tau, oracle, atol=1e-6)

    def test_permutation_invariance(self):
        ds = random_dataset(11, n=60)
        perm = np.random.default_rng(0).permutation(ds.n)
        shuffled = Dataset.from_arrays(ds.t[perm], ds.a[perm], ds.v[perm], ds.d[perm])
        np.testing.assert_allclose(fit_disease(ds).tau, fit_disease(shuffled).tau,
                                   rtol=0, atol=1e-9)

    def test_nonconvergence_carries_last_iterate(self):
        ds = random_dataset(13, n=80)
        with pytest.raises(NonConvergence) as exc:
            fit_disease(ds, max_iter=1)
        assert exc.value.fit is not None and not exc.value.fit.converged


class TestFitVerification:
    def test_logit_intercept_only(self):
        ds = _intercept_only_verification(30, 100)
        fit = fit_verification(ds, "logit", INTERCEPT_ONLY)
        np.testing.assert_allclose(fit.tau[0], np.log(0.3 / 0.7), atol=1e-9)

    def test_probit_intercept_only(self):
        ds = _intercept_only_verification(50, 100)
        fit = fit_verification(ds, "probit", INTERCEPT_ONLY)
        np.testing.assert_allclose(fit.tau[0], 0.0, atol=1e-9)

    def test_study1_recovers_true_coefficients(self):
        ds = generate(StudyConfig("s1", n=4000, reps=1, seed=5), 0)
        fit = fit_verification(ds, "logit")
        g, jac = score_and_jacobian(fit, ds, per_subject=False)
        cov = np.linalg.inv(jac) @ (g.T @ g) @ np.linalg.inv(jac).T
        se = np.sqrt(np.diag(cov))
        true = np.array([0.5, -0.3, 0.75])
        assert np.all(np.abs(fit.tau - true) <= 3 * se)

    def test_constant_flag_raises(self):
        ds = _intercept_only_disease([5, 5, 5])  # all verified
        with pytest.raises(DataError):
            fit_verification(ds)

    def test_separation_detected_on_divergent_fit(self):
        # a draw from the strong-signal VUS design whose disease fit drives
        # the linear predictor against the cap with a non-vanishing score
        ds = generate(StudyConfig("vus1", n=200, reps=1, seed=21), 4)
        with pytest.raises(SeparationError):
            fit_disease(ds)

    def test_perfect_separation_converges_to_saturated_fit(self):
        # with a clean gap the capped fit classifies perfectly and the score
        # underflows to zero; downstream use relies on the probability floor
        t = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
        v = np.array([0, 0, 0, 1, 1, 1])
        d = np.where(v == 1, 1, 0)
        ds = Dataset.from_arrays(t, np.empty((6, 0)), v, d)
        fit = fit_verification(ds, "logit", DesignSpec(a_indices=()))
        assert fit.converged
        assert np.max(np.abs(fit.spec.build(ds) @ fit.tau)) <= glm.LP_CAP + 1e-9


class TestPredict:
    def test_zero_coefficients_give_uniform_probs(self):
        ds = random_dataset(3, n=20)
        fit = glm.GlmFit("multinomial3", np.zeros((2, 3)), True, 0, 0.0)
        probs = predict(fit, ds)
        np.testing.assert_allclose(probs.rho, 1.0 / 3.0, atol=1e-15)

    def test_zero_logit_gives_half(self):
        ds = random_dataset(3, n=20)
        fit = glm.GlmFit("binary-logit", np.zeros(3), True, 0, 0.0)
        np.testing.assert_allclose(predict(fit, ds).pi, 0.5, atol=1e-15)

    def test_extreme_predictor_clipped_to_floor(self):
        n = 20000  # large enough that the floor is the base CLIP_EPS
        ds = Dataset.from_arrays(np.zeros(n), np.empty((n, 0)), np.ones(n, int),
                                 np.ones(n, int))
        low = predict(glm.GlmFit("binary-logit", np.array([-40.0]), True, 0, 0.0,
                                 INTERCEPT_ONLY), ds)
        assert np.all(low.pi == glm.CLIP_EPS)
        assert low.n_clipped == n
        high = predict(glm.GlmFit("binary-logit", np.array([40.0]), True, 0, 0.0,
                                  INTERCEPT_ONLY), ds)
        assert np.all(high.pi == 1.0)
        assert high.n_clipped == 0

    def test_small_sample_floor_scales(self):
        pi, n_clipped = glm.clip_verification_probs(np.full(50, 1e-6))
        assert np.all(pi == glm.pi_floor(50)) and glm.pi_floor(50) == 0.1
        assert n_clipped == 50

    def test_disease_floor_and_row_sums(self):
        rho = np.array([[1e-9, 1e-9, 1.0 - 2e-9], [0.2, 0.3, 0.5]])
        clipped, n_clipped = glm.clip_disease_probs(rho)
        assert n_clipped == 2
        assert np.all(clipped >= glm.CLIP_EPS - 1e-15)
        np.testing.assert_allclose(clipped.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(clipped[1], rho[1])

    def test_fitted_rows_sum_to_one(self, study1_dataset, study1_fits):
        np.testing.assert_allclose(study1_fits.rho.rho.sum(axis=1), 1.0, atol=1e-12)


class TestScoreAndJacobian:
    def test_unverified_subject_contributes_nothing(self):
        ds = random_dataset(9, n=30)
        fit = fit_disease(ds)
        g, jac = score_and_jacobian(fit, ds)
        idle = np.flatnonzero(ds.v == 0)
        assert np.all(g[idle] == 0.0)
        assert np.all(jac[idle] == 0.0)

    def test_probit_intercept_score_at_zero(self):
        ds = _intercept_only_verification(5, 10)
        fit = glm.GlmFit("binary-probit", np.zeros(1), True, 0, 0.0, INTERCEPT_ONLY)
        g, _ = score_and_jacobian(fit, ds)
        expected = np.where(ds.v == 1, 2 * norm.pdf(0.0), -2 * norm.pdf(0.0))
        np.testing.assert_allclose(g[:, 0], expected, atol=1e-12)

    def test_score_sums_vanish_at_fit(self, study1_dataset, study1_fits):
        for fit in (study1_fits.disease, study1_fits.verification):
            g, _ = score_and_jacobian(fit, study1_dataset, per_subject=False)
            assert np.max(np.abs(g.sum(axis=0))) <= 1e-6

    @pytest.mark.parametrize("family", ["multinomial3", "binary-logit", "binary-probit"])
    def test_jacobian_matches_finite_differences(self, family):
        ds = random_dataset(17, n=20)
        if family == "multinomial3":
            fit = fit_disease(ds)
        else:
            fit = fit_verification(ds, family.removeprefix("binary-"))
        g, jac = score_and_jacobian(fit, ds, per_subject=False)
        dim = fit.tau.size
        shape = fit.tau.shape
        fd = np.zeros((dim, dim))
        h = 1e-6
        for j in range(dim):
            for sign in (1.0, -1.0):
                tau = fit.tau.ravel().copy()
                tau[j] += sign * h
                pert = glm.GlmFit(fit.family, tau.reshape(shape), True, 0, 0.0, fit.spec)
                gj, _ = score_and_jacobian(pert, ds, per_subject=False)
                fd[:, j] += sign * gj.sum(axis=0)
        fd /= 2 * h
        np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-6)
