import numpy as np
import pandas as pd
import pytest

from shiftest.data import DataError, ShiftSpec, estimate_support_bound, validate
from shiftest.estimators import (
    eif_observed,
    estimate_grid,
    estimate_shift,
    onestep,
    plugin,
    tilt_outcome,
    tilt_sampling,
    wald_inference,
)
from shiftest.nuisance import assemble_for_delta, fit_core
from shiftest.simulate import DgpSpec, generate, true_psi


def toy_data(n=80, seed=0, all_phase2=False):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, 2))
    a = rng.normal(0.5 * w[:, 0], 1.0)
    py = 1.0 / (1.0 + np.exp(-(0.4 * w[:, 0] - 0.6 * a)))
    y = (rng.random(n) < py).astype(float)
    c = np.ones(n, dtype=int) if all_phase2 else (rng.random(n) < 0.75).astype(int)
    c[: max(2, n // 10)] = 1
    frame = pd.DataFrame(
        {"w1": w[:, 0], "w2": w[:, 1], "a": np.where(c == 1, a, np.nan), "y": y, "c": c}
    )
    return validate(frame)


class TestPlugin:
    def test_constant_outcome_function(self):
        weights = np.array([0.25, 0.75])
        assert plugin(weights, np.array([0.3, 0.3])) == pytest.approx(0.3)

    def test_weighted_average(self):
        assert plugin(np.array([1 / 3, 2 / 3]), np.array([0.6, 0.3])) == pytest.approx(0.4)

    def test_zero_delta_full_sampling_is_mean_qbar(self):
        data = toy_data(all_phase2=True)
        res = estimate_shift(data, 0.0, estimator="onestep", g_method="known",
                             support_mode="unbounded")
        core = fit_core(data, g_method="known", q_method="glm", density_method="gaussian")
        qbar = core.outcome.predict(data.a_obs, data.w_obs)
        assert res.diagnostics["psi_plugin"] == pytest.approx(qbar.mean(), abs=1e-9)


class TestEifObserved:
    def test_first_phase_row_gets_projection_value(self):
        out = eif_observed(np.array([0.0]), np.array([0.5]), np.array([0.0]),
                           np.array([0.37]))
        assert out[0] == pytest.approx(0.37)

    def test_full_sampling_reduces_to_full_data_values(self):
        out = eif_observed(np.array([1.0]), np.array([1.0]), np.array([0.42]),
                           np.array([5.0]))
        assert out[0] == pytest.approx(0.42)

    def test_arithmetic(self):
        out = eif_observed(np.array([1.0]), np.array([0.5]), np.array([0.2]),
                           np.array([0.1]))
        assert out[0] == pytest.approx(0.3)


class TestWald:
    def test_interval_width(self):
        eif = np.array([1.0, -1.0] * 50)  # sd ~ 1.005 over 100 values
        sd = float(np.std(eif, ddof=1))
        se, ci, p = wald_inference(0.5, eif, alpha=0.05)
        assert se == pytest.approx(sd / 10.0)
        z = 1.959963984540054
        assert ci[0] == pytest.approx(0.5 - z * se)
        assert ci[1] == pytest.approx(0.5 + z * se)

    def test_p_value_for_zero_estimate(self):
        eif = np.random.default_rng(0).normal(size=50)
        _, _, p = wald_inference(0.0, eif)
        assert p == pytest.approx(1.0)

    def test_p_value_five_sigma(self):
        rng = np.random.default_rng(1)
        eif = rng.normal(size=100)
        eif = (eif - eif.mean()) / eif.std(ddof=1)  # sd exactly 1
        se, ci, p = wald_inference(0.5, eif)
        assert se == pytest.approx(0.1)
        assert ci[0] == pytest.approx(0.304, abs=5e-4)
        assert ci[1] == pytest.approx(0.696, abs=5e-4)
        assert p == pytest.approx(5.733e-7, rel=1e-3)

    def test_zero_variance_degenerate(self):
        with pytest.warns(UserWarning, match="zero variance"):
            se, ci, p = wald_inference(0.2, np.zeros(10))
        assert se == 0.0
        assert ci == (0.2, 0.2)
        assert p == 0.0


class TestTilts:
    def test_sampling_score_zero_when_g_is_one(self):
        c = np.ones(30)
        G = np.random.default_rng(2).normal(size=30)
        g_star, xi, score, iters, conv = tilt_sampling(c, np.ones(30), G, zeta=0.01)
        assert xi == 0.0
        assert iters == 0
        assert conv
        assert np.array_equal(g_star, np.ones(30))

    def test_degenerate_projection_keeps_g(self):
        rng = np.random.default_rng(3)
        c = (rng.random(40) < 0.6).astype(float)
        g = np.clip(rng.uniform(0.3, 0.9, 40), 0.01, 1.0)
        g_star, xi, score, iters, conv = tilt_sampling(c, g, np.zeros(40), zeta=0.01)
        assert xi == 0.0
        assert np.array_equal(g_star, g)

    def test_sampling_score_solved_on_random_instances(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = 120
            pc = rng.uniform(0.4, 0.8, n)
            c = (rng.random(n) < pc).astype(float)
            g = np.clip(pc + rng.normal(0, 0.05, n), 0.05, 0.95)
            G = rng.normal(0.1, 0.3, n)
            g_star, xi, score, iters, conv = tilt_sampling(c, g, G, zeta=0.01)
            assert conv
            assert abs(score) < 1e-6
            assert np.all(g_star >= 0.01)
            assert np.all(g_star <= 1.0)

    def test_outcome_score_already_zero(self):
        rng = np.random.default_rng(5)
        n = 50
        y2 = (rng.random(n) < 0.5).astype(float)
        q = np.full(n, y2.mean())
        H = np.ones(n)
        w2 = np.ones(n)
        q_obs, q_shift, eps, score, iters, conv = tilt_outcome(
            y2, q, q, H, H, w2, n_total=n
        )
        assert iters <= 1
        assert abs(eps) < 1e-6
        assert conv

    def test_outcome_score_solved_on_random_instances(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            n = 90
            y2 = (rng.random(n) < 0.4).astype(float)
            q_obs = rng.uniform(0.2, 0.8, n)
            q_shift = rng.uniform(0.2, 0.8, n)
            H_obs = rng.uniform(0.3, 2.0, n)
            H_shift = rng.uniform(0.3, 2.0, n)
            w2 = 1.0 / rng.uniform(0.4, 0.9, n)
            q_o, q_s, eps, score, iters, conv = tilt_outcome(
                y2, q_obs, q_shift, H_obs, H_shift, w2, n_total=n
            )
            assert conv
            assert abs(score) < 1e-6

    def test_intercept_calibration_with_unit_covariate(self):
        rng = np.random.default_rng(7)
        n = 70
        y2 = (rng.random(n) < 0.35).astype(float)
        q = rng.uniform(0.3, 0.7, n)
        w2 = rng.uniform(0.8, 1.6, n)
        q_o, _, eps, score, iters, conv = tilt_outcome(
            y2, q, q, np.ones(n), np.ones(n), w2, n_total=n
        )
        assert float(w2 @ (y2 - q_o)) / n == pytest.approx(0.0, abs=1e-6)


class TestVariants:
    def test_full_sampling_all_variants_agree(self):
        data = toy_data(all_phase2=True, seed=8)
        psis = {}
        for estimator in ("onestep", "tmle"):
            for variant in ("augmented", "reweighted", "naive"):
                res = estimate_shift(
                    data, 0.3, estimator=estimator, variant=variant,
                    g_method="known",
                    support_mode="unbounded",
                )
                psis[(estimator, variant)] = res.psi
        for estimator in ("onestep", "tmle"):
            base = psis[(estimator, "augmented")]
            assert psis[(estimator, "reweighted")] == pytest.approx(base, abs=1e-10)
            assert psis[(estimator, "naive")] == pytest.approx(base, abs=1e-10)

    def test_augmented_equals_reweighted_when_projection_zero(self):
        data = toy_data(seed=9)
        core = fit_core(data, g_method="glm", q_method="glm", density_method="gaussian")
        spec = ShiftSpec(delta=0.2, support_mode="unbounded")
        bound = estimate_support_bound(data, spec, density=core.q_model)
        ns = assemble_for_delta(data, core, spec, bound, fit_projection=False)
        assert np.all(ns.G_values == 0.0)
        res_aug = onestep(data, ns, variant="augmented")
        res_rw = onestep(data, ns, variant="reweighted")
        assert res_aug.psi == pytest.approx(res_rw.psi, abs=1e-12)

    def test_onestep_correction_is_mean_eif(self):
        data = toy_data(seed=10)
        res = estimate_shift(data, 0.4, estimator="onestep", support_mode="unbounded")
        correction = res.psi - res.diagnostics["psi_plugin"]
        assert correction == pytest.approx(float(res.eif_values.mean()), abs=1e-14)

    def test_tmle_no_update_when_scores_zero(self):
        data = toy_data(all_phase2=True, seed=11)
        res = estimate_shift(
            data, 0.0, estimator="tmle", g_method="known", support_mode="unbounded"
        )
        # delta=0 and full sampling: scores start at ~0, psi stays at plug-in
        assert res.diagnostics["xi"] == 0.0
        assert abs(res.diagnostics["epsilon"]) < 1e-5
        assert res.psi == pytest.approx(res.diagnostics["psi_plugin"], abs=1e-6)

    def test_tmle_scores_and_mean_eif_small(self):
        data = toy_data(n=150, seed=12)
        res = estimate_shift(data, 0.5, estimator="tmle")
        assert abs(res.diagnostics["score_c"]) < 1e-6
        assert abs(res.diagnostics["score_y"]) < 1e-6
        assert abs(res.diagnostics["mean_eif"]) < 1e-5

    def test_plugin_weights_literal_reading_switch(self):
        data = toy_data(n=150, seed=13)
        tilted = estimate_shift(data, 0.5, estimator="tmle", plugin_weights="tilted")
        literal = estimate_shift(data, 0.5, estimator="tmle", plugin_weights="initial")
        assert tilted.psi != literal.psi  # differs once the sampling tilt moves
        assert abs(tilted.diagnostics["mean_eif"]) <= abs(literal.diagnostics["mean_eif"]) + 1e-8

    def test_variant_tags(self):
        data = toy_data(seed=14)
        assert estimate_shift(data, 0.1).variant == "tmle"
        assert estimate_shift(data, 0.1, estimator="onestep").variant == "onestep"
        assert (
            estimate_shift(data, 0.1, estimator="onestep", variant="reweighted").variant
            == "onestep_reweighted"
        )
        assert (
            estimate_shift(data, 0.1, estimator="tmle", variant="naive").variant
            == "tmle_naive"
        )

    def test_unknown_estimator_and_variant(self):
        data = toy_data(seed=15)
        with pytest.raises(DataError):
            estimate_shift(data, 0.1, estimator="magic")
        with pytest.raises(DataError):
            estimate_shift(data, 0.1, variant="magic")
        with pytest.raises(DataError):
            estimate_grid(data, [])


class TestOtherPaths:
    def test_haldensify_density_in_pipeline(self):
        data = toy_data(n=200, seed=31)
        res = estimate_shift(
            data, 0.3, estimator="tmle",
            density_method="haldensify",
            haldensify_opts={"n_bins_grid": (4,), "bin_rule": "equal_mass"},
            hal_opts={"max_degree": 1, "max_knots_per_dim": 5, "n_lambda": 8,
                      "cv_folds": 2},
            seed=2,
        )
        assert np.isfinite(res.psi)
        assert abs(res.diagnostics["score_y"]) < 1e-6

    def test_density_threshold_support_mode(self):
        data = toy_data(n=200, seed=32)
        res = estimate_shift(
            data, 0.3, estimator="onestep",
            support_mode="density_threshold", density_eps=0.02,
        )
        assert np.isfinite(res.psi)
        assert res.ci[0] <= res.psi <= res.ci[1]


class TestAgainstTruth:
    def test_onestep_single_replicate_near_truth(self):
        data, _ = generate(DgpSpec("dgp1", 2500, seed=42))
        res = estimate_shift(data, 0.5, estimator="onestep")
        assert res.psi == pytest.approx(0.333, abs=0.02)

    def test_tmle_single_replicate_near_truth(self):
        data, _ = generate(DgpSpec("dgp1", 2500, seed=42))
        res = estimate_shift(data, 0.0, estimator="tmle")
        assert res.psi == pytest.approx(0.415, abs=0.02)

    def test_onestep_and_tmle_within_two_se(self):
        truth = true_psi("dgp1", 0.5, draws=200_000, seed=0).value
        for seed in (1, 2, 3):
            data, _ = generate(DgpSpec("dgp1", 900, seed=seed))
            os_res = estimate_shift(data, 0.5, estimator="onestep")
            tm_res = estimate_shift(data, 0.5, estimator="tmle")
            gap = abs(os_res.psi - tm_res.psi)
            assert gap <= 2.0 * max(os_res.se, tm_res.se)
            assert abs(os_res.psi - truth) <= 4.0 * os_res.se

    def test_ci_contains_psi(self):
        data = toy_data(n=120, seed=16)
        for variant in ("augmented", "reweighted", "naive"):
            res = estimate_shift(data, 0.3, variant=variant)
            assert res.ci[0] <= res.psi <= res.ci[1]
            assert 0.0 <= res.p_value <= 1.0
            assert res.se >= 0.0
