import numpy as np
import pytest
from scipy import special

from dmetvqe import refine, vqe
from dmetvqe.refine import (Kernel, GpModel, matern_eval, RefinementConfig,
                            refine_parameters, fit_kernel_hyperparams,
                            select_regularizer_reeval,
                            select_regularizer_sinefit,
                            InfeasibleRefinementError)


def bessel_matern(nu, l, r):
    r = np.asarray(r, dtype=float)
    u = np.sqrt(2 * nu) * r / l
    out = np.ones_like(u)
    mask = u > 0
    out[mask] = (2 ** (1 - nu) / special.gamma(nu)) * u[mask] ** nu * special.kv(nu, u[mask])
    return out


class TestMatern:
    def test_nu_half_is_exponential(self):
        r = np.linspace(0, 4, 50)
        assert np.allclose(matern_eval(0.5, 0.8, r), np.exp(-r / 0.8), atol=1e-14)

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, 3.5, 4.5, 5.5])
    def test_normalization_at_zero(self, nu):
        assert matern_eval(nu, 1.3, 0.0) == pytest.approx(1.0)

    def test_nu_11_2_matches_bessel_reference(self):
        grid = np.linspace(0.001, 5.0, 100)
        mine = matern_eval(5.5, 0.7, grid)
        ref = bessel_matern(5.5, 0.7, grid)
        assert np.max(np.abs(mine - ref)) < 1e-10

    def test_unsupported_nu_rejected(self):
        with pytest.raises(ValueError):
            matern_eval(2.0, 1.0, 1.0)

    def test_gram_positive_definite_with_jitter(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-np.pi, np.pi, size=(40, 3))
        k = Kernel("matern", 5.5, 1.0)
        model = GpModel.fit(k, 1e-8, pts, rng.normal(size=40))
        assert model._chol is not None


class TestPosterior:
    def test_single_point_closed_form(self):
        lam = 0.23
        model = GpModel.fit(Kernel("matern", 5.5, 1.0), lam,
                            np.array([[0.4]]), np.array([1.7]))
        mu, sigma = model.posterior(np.array([0.4]))
        assert mu == pytest.approx(1.7 / (1 + lam), abs=1e-12)
        assert sigma ** 2 == pytest.approx(lam / (1 + lam), abs=1e-12)

    def test_interpolation_at_small_lambda(self):
        pts = np.array([[0.0], [1.0], [2.5]])
        ys = np.array([0.3, -0.6, 1.1])
        model = GpModel.fit(Kernel("matern", 5.5, 1.0), 1e-13, pts, ys)
        for x, y in zip(pts, ys):
            mu, sigma = model.posterior(x)
            assert mu == pytest.approx(y, abs=1e-6)
            assert sigma < 1e-3

    def test_prior_reversion_far_away(self):
        model = GpModel.fit(Kernel("matern", 5.5, 0.5), 1e-4,
                            np.array([[0.0]]), np.array([2.0]))
        mu, sigma = model.posterior(np.array([50.0]))
        assert mu == pytest.approx(0.0, abs=1e-8)
        assert sigma == pytest.approx(1.0, abs=1e-8)

    def test_sigma_never_negative_and_shrinks_with_data(self):
        rng = np.random.default_rng(1)
        grid = np.linspace(-np.pi, np.pi, 25).reshape(-1, 1)
        pts = rng.uniform(-np.pi, np.pi, size=(12, 1))
        ys = np.sin(pts[:, 0])
        k = Kernel("matern", 5.5, 1.0)
        small = GpModel.fit(k, 1e-4, pts, ys)
        _, sig_small = small.posterior(grid)
        more = GpModel.fit(k, 1e-4, np.vstack([pts, pts]), np.concatenate([ys, ys]))
        _, sig_more = more.posterior(grid)
        assert np.all(sig_small >= -1e-12)
        assert np.all(sig_more <= sig_small + 1e-9)

    def test_empirical_coverage_band(self):
        # |f - mu_n| <= C * sigma_n on >= 95% of a grid, for fitted C.
        rng = np.random.default_rng(7)
        noise = 0.1
        pts = rng.uniform(-np.pi, np.pi, size=(60, 1))
        ys = np.sin(pts[:, 0]) + rng.normal(0, noise, 60)
        model = GpModel.fit(Kernel("matern", 5.5, 1.0), noise ** 2, pts, ys)
        grid = np.linspace(-np.pi, np.pi, 200).reshape(-1, 1)
        mu, sigma = model.posterior(grid)
        resid = np.abs(np.sin(grid[:, 0]) - mu)
        c_fit = np.percentile(resid / np.maximum(sigma, 1e-6), 90)
        coverage = np.mean(resid <= c_fit * np.maximum(sigma, 1e-6) + 1e-12)
        assert coverage >= 0.85

    def test_squared_exponential_kernel(self):
        k = Kernel("squared-exponential", length_scale=2.0)
        assert k.of_distance(np.array([0.0]))[0] == pytest.approx(1.0)
        assert k.of_distance(np.array([1.0]))[0] == pytest.approx(np.exp(-0.5))


class TestHyperparamFit:
    def test_recovers_order_of_magnitude(self):
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            pts = rng.uniform(-np.pi, np.pi, size=(40, 1))
            ys = np.sin(pts[:, 0])
            k = fit_kernel_hyperparams(pts, ys, lam=1e-6)
            if 0.2 <= k.length_scale <= 5.0:
                hits += 1
        assert hits == 10

    def test_duplicated_data_same_argmax(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-2, 2, size=(20, 1))
        ys = np.cos(pts[:, 0])
        k1 = fit_kernel_hyperparams(pts, ys, lam=1e-4)
        k2 = fit_kernel_hyperparams(np.vstack([pts, pts]),
                                    np.concatenate([ys, ys]), lam=1e-4)
        assert k1.length_scale == pytest.approx(k2.length_scale)

    def test_interior_optimum(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-np.pi, np.pi, size=(50, 2))
        ys = np.sin(pts[:, 0]) * np.cos(pts[:, 1])
        k = fit_kernel_hyperparams(pts, ys, lam=1e-6)
        diffs = pts[:, None, :] - pts[None, :, :]
        med = np.median(np.linalg.norm(diffs, axis=-1)[np.triu_indices(50, 1)])
        grid = med * np.logspace(-2, 2, 32)
        assert grid[0] < k.length_scale < grid[-1]

    def test_degenerate_history_rejected(self):
        pts = np.zeros((5, 2))
        with pytest.raises(ValueError):
            fit_kernel_hyperparams(pts, np.ones(5), lam=1e-4)


class TestRefineParameters:
    def _history(self, seed=0, n=60, noise=0.2, d=1):
        rng = np.random.default_rng(seed)
        hist = vqe.OptHistory(d)
        for i in range(n):
            theta = rng.uniform(-np.pi, np.pi, d)
            hist.append(i, "iterate", theta,
                        float(np.sum(np.sin(theta))) + rng.normal(0, noise))
        return hist

    def test_noiseless_history_minimum_respected(self):
        hist = vqe.OptHistory(1)
        for i, x in enumerate(np.linspace(-np.pi, np.pi, 30)):
            hist.append(i, "iterate", [x], float(np.sin(x)))
        theta, model = refine_parameters(hist, lam=1e-10,
                                         cfg=RefinementConfig(seed=0),
                                         return_model=True)
        thetas, ys = hist.data()
        mu_star, _ = model.posterior(theta)
        assert mu_star <= ys.min() + 1e-9

    def test_constraint_and_box_hard(self):
        hist = self._history(seed=5)
        cfg = RefinementConfig(c=0.5, seed=5)
        theta, model = refine_parameters(hist, lam=1e-2, cfg=cfg,
                                         return_model=True)
        _, sigma = model.posterior(theta)
        assert sigma <= cfg.c + 1e-12
        assert np.all(theta >= cfg.box_low) and np.all(theta <= cfg.box_high)

    def test_infeasible_threshold_raises(self):
        hist = self._history(seed=2, n=5)
        with pytest.raises(InfeasibleRefinementError):
            refine_parameters(hist, lam=1.0, cfg=RefinementConfig(c=1e-9, seed=0))

    def test_paper_configuration_accepted(self):
        hist = self._history(seed=1)
        theta = refine_parameters(hist, kernel_family="matern", nu=5.5,
                                  lam=1e-4, cfg=RefinementConfig(c=1.0, seed=1))
        assert theta.shape == (1,)

    def test_refinement_beats_spsa_final_on_noisy_sine(self):
        wins = 0
        trials = 30
        for seed in range(trials):
            rng = np.random.default_rng(seed)

            def noisy(th):
                return float(np.sum(np.sin(th))) + rng.normal(0, 0.2)

            theta_final, hist = vqe.spsa_minimize(
                noisy, 1, vqe.SpsaConfig(iterations=60, seed=seed))
            theta_ref = refine_parameters(hist, lam=0.04,
                                          cfg=RefinementConfig(seed=seed))
            if np.sum(np.sin(theta_ref)) < np.sum(np.sin(theta_final)):
                wins += 1
        assert wins >= 0.6 * trials


class TestRegularizerSelection:
    def test_singleton_grid(self):
        hist = TestRefineParameters()._history(seed=3)
        lam = select_regularizer_reeval(hist, lambda th: float(np.sum(np.sin(th))),
                                        [1e-3], budget=4)
        assert lam == 1e-3

    def test_reeval_picks_lower_true_energy(self):
        hist = TestRefineParameters()._history(seed=4, noise=0.3)
        truth = lambda th: float(np.sum(np.sin(th)))
        lam = select_regularizer_reeval(hist, truth, [1e-6, 1e-1], budget=6)
        cfg = RefinementConfig(seed=4)
        vals = {l: truth(refine_parameters(hist, lam=l, cfg=cfg))
                for l in (1e-6, 1e-1)}
        assert vals[lam] == min(vals.values())

    def test_reeval_budget_accounting(self):
        hist = TestRefineParameters()._history(seed=6)
        calls = []

        def counting(th):
            calls.append(1)
            return float(np.sum(np.sin(th)))

        select_regularizer_reeval(hist, counting, [1e-4, 1e-2], budget=8)
        assert len(calls) == 8

    def test_sinefit_exact_sine_has_tiny_error(self):
        # The model class contains the truth: fitting exactly sinusoidal
        # values leaves a vanishing validation error.
        xs = np.linspace(-np.pi, np.pi, 40)
        truth = 1.3 * np.sin(xs + 0.4) - 0.7
        p, q, b = refine._fit_sine(xs, truth)
        val = np.linspace(-2.5, 2.5, 17)
        err = np.mean((refine._sine_value(p, q, b, val)
                       - (1.3 * np.sin(val + 0.4) - 0.7)) ** 2)
        assert err < 1e-12

    def test_sinefit_m_too_small(self):
        hist = TestRefineParameters()._history()
        with pytest.raises(ValueError):
            select_regularizer_sinefit(hist, [1e-4], m=3)

    def test_sinefit_selects_noise_scale(self):
        grid = [1e-8, 1e-4, 1e0]
        target = 0.04  # injected variance
        glog = np.log10(grid)
        nearest = int(np.argmin(np.abs(glog - np.log10(target))))
        ok = {grid[i] for i in range(len(grid)) if abs(i - nearest) <= 1}
        hits = 0
        trials = 25
        for seed in range(trials):
            rng = np.random.default_rng(seed)

            def noisy(th):
                return float(1.3 * np.sin(th[0] + 0.4) - 0.7) + rng.normal(0, 0.2)

            _, hist = vqe.spsa_minimize(noisy, 1,
                                        vqe.SpsaConfig(iterations=60, seed=seed))
            if select_regularizer_sinefit(hist, grid, coord=0, m=16, seed=seed) in ok:
                hits += 1
        assert hits >= 0.6 * trials

    def test_sinefit_stability_across_validation_draws(self):
        same = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)

            def noisy(th):
                return float(np.sin(th[0])) + rng.normal(0, 0.2)

            _, hist = vqe.spsa_minimize(noisy, 1,
                                        vqe.SpsaConfig(iterations=50, seed=seed))
            l1 = select_regularizer_sinefit(hist, [1e-8, 1e-2], seed=seed)
            l2 = select_regularizer_sinefit(hist, [1e-8, 1e-2], seed=seed)
            same += (l1 == l2)
        assert same >= 18

    def test_empty_grid_rejected(self):
        hist = TestRefineParameters()._history()
        with pytest.raises(ValueError):
            select_regularizer_reeval(hist, lambda t: 0.0, [], budget=2)
