import numpy as np
import pytest

from rocsurface import (BootstrapPlan, CutPair, Dataset, DegenerateTheta,
                        FittedModels, Method, SingularCovariance, bootstrap,
                        build_alpha, chi2_quantile, confidence_region,
                        estimate_tcf, estimate_tcf_with_sd, estimating_stack,
                        h_gradient, jacobian_stack, prepare_fits, sandwich,
                        tcf_covariance, wald_intervals)
from rocsurface.asymptotics import AlphaHat

from conftest import full_dataset, random_dataset

ALL_METHODS = (Method.FI, Method.MSI, Method.IPW, Method.SPE)
CUT = CutPair(1.5, 3.0)


def _full_fits():
    return FittedModels()


class TestEstimatingStack:
    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_column_means_vanish_at_solution(self, method, study1_dataset, study1_fits):
        alpha = build_alpha(method, study1_dataset, CutPair(2.0, 4.0), study1_fits)
        g = estimating_stack(method, study1_dataset, alpha, CutPair(2.0, 4.0), study1_fits)
        assert np.max(np.abs(g.mean(axis=0))) <= 1e-6

    def test_fi_theta_component_ignores_observed_class(self):
        ds = random_dataset(21, n=30)
        fits = prepare_fits(ds, [Method.FI])
        alpha = build_alpha(Method.FI, ds, CUT, fits)
        g = estimating_stack(Method.FI, ds, alpha, CUT, fits)
        expected = fits.rho.rho[:, 0] - alpha.theta[0]
        np.testing.assert_allclose(g[:, 0], expected, atol=1e-12)

    def test_msi_theta_component_hand_case(self):
        # verified subject with d=1, rho=(0.7, 0.2, 0.1), theta1=0.4:
        # the MSI component is 1 - 0.4 regardless of rho
        from rocsurface.glm import INTERCEPT_ONLY, GlmFit
        ds = Dataset.from_arrays([1.0, 2.0], np.empty((2, 0)), [1, 0], [1, 0])
        tau = np.array([[np.log(7.0)], [np.log(2.0)]])  # rho = (0.7, 0.2, 0.1)
        fit = GlmFit("multinomial3", tau, True, 0, 0.0, INTERCEPT_ONLY)
        fits = FittedModels(disease=fit)
        alpha = AlphaHat(np.concatenate([[0.4, 0.3, 0.1, 0.1, 0.05, 0.05],
                                         tau.ravel()]), Method.MSI, CUT, 2, 0)
        g = estimating_stack(Method.MSI, ds, alpha, CUT, fits)
        assert g[0, 0] == pytest.approx(0.6, abs=1e-12)
        # the unverified subject contributes rho1 - theta1
        assert g[1, 0] == pytest.approx(0.7 - 0.4, abs=1e-12)


class TestJacobianStack:
    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_core_diagonal(self, method, study1_dataset, study1_fits):
        cut = CutPair(2.0, 4.0)
        alpha = build_alpha(method, study1_dataset, cut, study1_fits)
        jac = jacobian_stack(method, study1_dataset, alpha, cut, study1_fits)
        if method is Method.IPW:
            expected = -np.sum(study1_dataset.v / study1_fits.pi.pi)
        else:
            expected = -float(study1_dataset.n)
        np.testing.assert_allclose(np.diag(jac)[:6], expected, rtol=1e-12)

    def test_tau_rows_have_zero_core_columns(self, study1_dataset, study1_fits):
        cut = CutPair(2.0, 4.0)
        alpha = build_alpha(Method.SPE, study1_dataset, cut, study1_fits)
        jac = jacobian_stack(Method.SPE, study1_dataset, alpha, cut, study1_fits)
        assert np.all(jac[6:, :6] == 0.0)
        # disease-score rows do not depend on the verification coefficients
        dim_rho = alpha.dim_rho
        assert np.all(jac[6:6 + dim_rho, 6 + dim_rho:] == 0.0)
        assert np.all(jac[6 + dim_rho:, 6:6 + dim_rho] == 0.0)

    @pytest.mark.parametrize("method", [Method.FULL] + list(ALL_METHODS))
    @pytest.mark.parametrize("link", ["logit", "probit"])
    def test_matches_finite_differences(self, method, link):
        if method is Method.FULL:
            ds = full_dataset(31, n=30)
            fits = _full_fits()
        else:
            ds = random_dataset(31, n=30)
            fits = prepare_fits(ds, [Method.SPE], link=link)
        alpha = build_alpha(method, ds, CUT, fits)
        jac = jacobian_stack(method, ds, alpha, CUT, fits)
        h = 1e-6
        fd = np.zeros_like(jac)
        for j in range(alpha.dim):
            for sign in (1.0, -1.0):
                vals = alpha.values.copy()
                vals[j] += sign * h
                pert = AlphaHat(vals, method, CUT, alpha.dim_rho, alpha.dim_pi)
                fd[:, j] += sign * estimating_stack(method, ds, pert, CUT, fits).sum(axis=0)
        fd /= 2 * h
        np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-6)


class TestSandwich:
    def test_full_intercept_only_matches_binomial(self):
        rng = np.random.default_rng(2)
        d = rng.integers(1, 4, 200)
        d[:3] = [1, 2, 3]
        ds = Dataset.from_arrays(np.zeros(200), np.empty((200, 0)),
                                 np.ones(200, int), d)
        cut = CutPair(-1.0, 1.0)
        alpha = build_alpha(Method.FULL, ds, cut, _full_fits())
        cov = sandwich(Method.FULL, ds, alpha, cut, _full_fits())
        theta1 = alpha.theta[0]
        # Sigma estimates Var(sqrt(n)(theta１_hat - theta1)) = theta(1-theta)
        np.testing.assert_allclose(cov.sigma[0, 0], theta1 * (1 - theta1), rtol=1e-10)

    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_symmetric_psd(self, method, study1_dataset, study1_fits):
        alpha = build_alpha(method, study1_dataset, CutPair(2.0, 4.0), study1_fits)
        cov = sandwich(method, study1_dataset, alpha, CutPair(2.0, 4.0), study1_fits)
        np.testing.assert_allclose(cov.sigma, cov.sigma.T, atol=1e-10)
        eigs = np.linalg.eigvalsh(cov.sigma)
        assert eigs.min() >= -1e-10 * max(1.0, eigs.max())


class TestHGradient:
    def test_direct_entries(self):
        core = np.array([0.5, 0.3, 0.25, 0.1, 0.05, 0.1])
        grad = h_gradient(core, dim=6)
        assert grad[0, 0] == pytest.approx(0.25 / 0.25)
        assert grad[0, 2] == pytest.approx(-2.0)

    def test_equal_betas_zero_entry(self):
        core = np.array([0.5, 0.3, 0.25, 0.07, 0.07, 0.1])
        assert h_gradient(core, dim=6)[1, 1] == 0.0

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            th = rng.uniform(0.2, 0.4, 2)
            core = np.concatenate([th, rng.uniform(0.05, 0.2, 4)])

            def h(c):
                th3 = 1.0 - c[0] - c[1]
                return np.array([1.0 - c[2] / c[0], (c[3] - c[4]) / c[1], c[5] / th3])

            grad = h_gradient(core, dim=6)
            fd = np.zeros((3, 6))
            eps = 1e-7
            for j in range(6):
                up, dn = core.copy(), core.copy()
                up[j] += eps
                dn[j] -= eps
                fd[:, j] = (h(up) - h(dn)) / (2 * eps)
            np.testing.assert_allclose(grad, fd, rtol=0, atol=1e-7)

    def test_degenerate_theta(self):
        with pytest.raises(DegenerateTheta):
            h_gradient(np.array([0.5, 0.5, 0.1, 0.1, 0.05, 0.0]), dim=6)


class TestTcfCovariance:
    def test_zero_variance_for_separated_full_data(self, separated_toy):
        _, sd = tcf_covariance(Method.FULL, separated_toy, CutPair(2.5, 4.5),
                               _full_fits())
        np.testing.assert_allclose(sd, 0.0, atol=1e-8)

    def test_point_estimate_agrees_with_direct_form(self, study1_dataset, study1_fits):
        cut = CutPair(2.0, 4.0)
        for m in ALL_METHODS:
            est = estimate_tcf_with_sd(m, study1_dataset, cut, study1_fits)
            alpha = build_alpha(m, study1_dataset, cut, study1_fits)
            composed = np.array([
                1.0 - alpha.beta[0] / alpha.theta[0],
                (alpha.beta[1] - alpha.beta[2]) / alpha.theta[1],
                alpha.beta[3] / (1.0 - alpha.theta.sum()),
            ])
            np.testing.assert_allclose(est.tcf, composed, atol=1e-10)

    def test_location_equivariance(self, study1_dataset):
        ds = study1_dataset
        shift = 11.0
        shifted = Dataset.from_arrays(ds.t + shift, ds.a, ds.v, ds.d)
        cut = CutPair(2.0, 4.0)
        scut = CutPair(2.0 + shift, 4.0 + shift)
        for m in ALL_METHODS:
            fits_a = prepare_fits(ds, [m])
            fits_b = prepare_fits(shifted, [m])
            ea = estimate_tcf_with_sd(m, ds, cut, fits_a)
            eb = estimate_tcf_with_sd(m, shifted, scut, fits_b)
            np.testing.assert_allclose(ea.tcf, eb.tcf, atol=1e-8)
            np.testing.assert_allclose(ea.asy_sd, eb.asy_sd, atol=1e-8)

    def test_asy_sd_within_15pct_of_bootstrap(self, study1_dataset):
        cut = CutPair(2.0, 4.0)
        for m in (Method.FI, Method.MSI, Method.IPW):
            fits = prepare_fits(study1_dataset, [m])
            _, asy_sd = tcf_covariance(m, study1_dataset, cut, fits)
            plan = BootstrapPlan(m, "tcf", cut, b=250, seed=17)
            boot = bootstrap(plan, study1_dataset)
            assert boot.n_failed == 0
            np.testing.assert_allclose(asy_sd, boot.sd, rtol=0.15)


class TestSpeIpwStructure:
    """With the disease probabilities frozen at zero the doubly robust
    weights collapse onto the inverse-probability ones."""

    def test_pseudo_disease_and_estimates_collapse(self):
        ds = random_dataset(41, n=60)
        fits = prepare_fits(ds, [Method.IPW])
        zero_rho = np.zeros((ds.n, 3))
        from rocsurface import pseudo_disease
        spe = pseudo_disease(Method.SPE, ds, zero_rho, fits.pi).dtilde
        ipw = pseudo_disease(Method.IPW, ds, rho=None, pi=fits.pi).dtilde
        np.testing.assert_array_equal(spe, ipw)
        a = estimate_tcf(Method.SPE, ds, CUT, zero_rho, fits.pi).tcf
        b = estimate_tcf(Method.IPW, ds, CUT, pi=fits.pi).tcf
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_block_layout_matches_printed_forms(self, study1_dataset, study1_fits):
        cut = CutPair(2.0, 4.0)
        spe = build_alpha(Method.SPE, study1_dataset, cut, study1_fits)
        ipw = build_alpha(Method.IPW, study1_dataset, cut, study1_fits)
        assert spe.dim == 6 + spe.dim_rho + spe.dim_pi
        assert ipw.dim == 6 + ipw.dim_pi and ipw.dim_rho == 0
        fi = build_alpha(Method.FI, study1_dataset, cut, study1_fits)
        assert fi.dim_pi == 0


class TestConfidenceRegion:
    def test_identity_radius(self):
        ell = confidence_region(np.eye(2), [0.0, 0.0], 0.95)
        assert ell.radius_sq == pytest.approx(5.991464547107979, abs=1e-10)

    def test_axis_ratio(self):
        ell = confidence_region(np.diag([4.0, 1.0]), [0.5, 0.5], 0.95)
        poly = ell.polygon(400) - [0.5, 0.5]
        width = poly[:, 0].max() - poly[:, 0].min()
        height = poly[:, 1].max() - poly[:, 1].min()
        assert width / height == pytest.approx(2.0, rel=1e-3)

    def test_polygon_contains_center(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = rng.normal(size=(2, 2))
            cov = a @ a.T + 0.1 * np.eye(2)
            center = rng.normal(size=2)
            ell = confidence_region(cov, center, 0.9)
            poly = ell.polygon(64)
            # center strictly inside: all boundary points farther than 0
            assert np.all(np.linalg.norm(poly - center, axis=1) > 0)
            mah = [(p - center) @ ell.shape @ (p - center) for p in poly]
            np.testing.assert_allclose(mah, ell.radius_sq, rtol=1e-8)

    def test_singular_covariance_rejected(self):
        with pytest.raises(SingularCovariance):
            confidence_region(np.zeros((2, 2)), [0.0, 0.0], 0.95)

    def test_chi2_quantile_closed_form(self):
        assert chi2_quantile(0.5, 2) == pytest.approx(2 * np.log(2.0), abs=1e-12)


def test_wald_intervals_cover_estimate():
    ci = wald_intervals([0.5, 0.9], [0.1, 0.01], 0.95)
    assert ci.shape == (2, 2)
    assert ci[0, 0] == pytest.approx(0.5 - 1.959963984540054 * 0.1, abs=1e-9)
