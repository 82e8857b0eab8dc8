import numpy as np
import pytest

from shiftest.data import DataError
from shiftest.density import (
    CondDensityModel,
    assign_bins,
    fit_gaussian_density,
    fit_haldensify,
    intercept_only_basis,
    make_bin_edges,
    masses_from_hazards,
    pool_hazard_format,
    predict_density,
)


class TestGaussian:
    def test_density_at_mean_standard_normal(self):
        rng = np.random.default_rng(0)
        W = rng.normal(size=(400, 1))
        A = W[:, 0] + rng.normal(0, 1, 400)
        m = fit_gaussian_density(A, W)
        # evaluate at the fitted mean with sigma2 forced to 1
        m.sigma2 = 1.0
        mu = m.mean(W[:5])
        assert np.allclose(m.density(mu, W[:5]), 0.39894, atol=1e-4)
        assert np.allclose(m.density(mu + 1.0, W[:5]), 0.24197, atol=1e-4)

    def test_recovers_closed_form_pdf(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(2000, 2))
        mu_true = 0.5 + 1.0 * W[:, 0] - 0.5 * W[:, 1]
        A = mu_true + rng.normal(0, 0.7, 2000)
        m = fit_gaussian_density(A, W)
        grid = np.array([-0.5, 0.0, 0.8])
        Wq = np.tile(np.array([[0.3, -0.2]]), (3, 1))
        mu_hat = m.mean(Wq)
        ref = np.exp(-0.5 * (grid - mu_hat) ** 2 / m.sigma2) / np.sqrt(2 * np.pi * m.sigma2)
        assert np.allclose(m.density(grid, Wq), ref, atol=1e-12)

    def test_constant_exposure_degenerate(self):
        W = np.random.default_rng(2).normal(size=(30, 1))
        with pytest.raises(DataError, match="degenerate exposure variance"):
            fit_gaussian_density(np.full(30, 1.7), W)

    def test_weighted_fit_uses_weights(self):
        rng = np.random.default_rng(3)
        W = np.zeros((100, 1))
        A = np.concatenate([np.full(50, 0.0), np.full(50, 1.0)]) + rng.normal(0, 0.01, 100)
        w = np.concatenate([np.ones(50), np.zeros(50)])
        m = fit_gaussian_density(A, W, w, basis=intercept_only_basis)
        assert abs(m.mean(W[:1])[0]) < 0.05

    def test_support_upper_closed_form(self):
        rng = np.random.default_rng(4)
        W = rng.normal(size=(500, 1))
        A = 2.0 * W[:, 0] + rng.normal(0, 1.0, 500)
        m = fit_gaussian_density(A, W)
        eps = 0.05
        u = m.support_upper(W[:10], eps)
        assert np.allclose(m.density(u, W[:10]), eps, atol=1e-6)


class TestPooling:
    def test_three_rows_for_bin_three(self):
        edges = np.arange(0.0, 6.0)  # 5 unit bins
        long = pool_hazard_format([2.5], np.zeros((1, 1)), [1.0], edges)
        assert long.bin_idx.tolist() == [0, 1, 2]
        assert long.in_bin.tolist() == [0.0, 0.0, 1.0]
        assert np.all(long.weight == 1.0)

    def test_first_bin_single_row(self):
        edges = np.arange(0.0, 6.0)
        long = pool_hazard_format([0.5], np.zeros((1, 1)), [2.0], edges)
        assert long.bin_idx.tolist() == [0]
        assert long.in_bin.tolist() == [1.0]
        assert long.weight.tolist() == [2.0]

    def test_right_edge_in_last_bin(self):
        edges = np.array([0.0, 1.0, 2.0, 3.0])
        assert assign_bins(np.array([3.0]), edges)[0] == 2
        long = pool_hazard_format([3.0], np.zeros((1, 1)), [1.0], edges)
        assert long.bin_idx.tolist() == [0, 1, 2]

    def test_outside_grid_rejected(self):
        edges = np.array([0.0, 1.0])
        with pytest.raises(DataError, match="outside"):
            pool_hazard_format([1.5], np.zeros((1, 1)), [1.0], edges)

    def test_weight_replicated_to_all_rows(self):
        edges = np.array([0.0, 1.0, 2.0, 3.0])
        long = pool_hazard_format([2.5, 0.5], np.zeros((2, 1)), [5.0, 7.0], edges)
        assert long.weight.tolist() == [5.0, 5.0, 5.0, 7.0]
        assert long.source.tolist() == [0, 0, 0, 1]


class TestMassCombination:
    def test_terminal_hazard_one(self):
        masses = masses_from_hazards([[0.2, 0.5, 1.0]], renormalize=False)[0]
        assert np.allclose(masses, [0.2, 0.4, 0.4])
        normed = masses_from_hazards([[0.2, 0.5, 1.0]])[0]
        assert np.allclose(normed, [0.2, 0.4, 0.4])

    def test_renormalization_of_open_tail(self):
        raw = masses_from_hazards([[0.5, 0.5, 0.5]], renormalize=False)[0]
        assert np.allclose(raw, [0.5, 0.25, 0.125])
        normed = masses_from_hazards([[0.5, 0.5, 0.5]])[0]
        assert np.allclose(normed, [4 / 7, 2 / 7, 1 / 7])


class TestBinEdges:
    def test_equal_range(self):
        edges = make_bin_edges(np.array([0.0, 1.0, 2.0, 3.0]), np.ones(4), 3, "equal_range")
        assert np.allclose(edges, [0.0, 1.0, 2.0, 3.0])

    def test_equal_range_empty_bin_returns_none(self):
        A = np.array([0.0, 0.01, 2.99, 3.0])
        assert make_bin_edges(A, np.ones(4), 3, "equal_range") is None

    def test_equal_mass_covers_range(self):
        rng = np.random.default_rng(5)
        A = rng.exponential(1.0, 500)
        edges = make_bin_edges(A, np.ones(500), 5, "equal_mass")
        assert edges[0] == A.min()
        assert edges[-1] == A.max()
        assert np.all(np.diff(edges) > 0)

    def test_degenerate_discrete_equal_mass_none(self):
        A = np.array([0.0] * 50 + [1.0] * 50)
        assert make_bin_edges(A, np.ones(100), 5, "equal_mass") is None


class TestHaldensify:
    def test_uniform_independent_recovers_flat_density(self):
        # Monte Carlo oracle: A ~ U(0,1) independent of W has density 1.
        rng = np.random.default_rng(13)
        n = 2000
        W = rng.normal(size=(n, 1))
        A = rng.random(n)
        model = fit_haldensify(
            A, W, np.ones(n), n_bins_grid=(10,), bin_rule="equal_range", seed=0,
            hal_opts={"max_degree": 1, "max_knots_per_dim": 4, "n_lambda": 15,
                      "cv_folds": 5},
        )
        interior = np.linspace(0.15, 0.85, 9)
        Wq = np.tile(W[:1], (9, 1))
        dens = model.density(interior, Wq)
        assert np.all(np.abs(dens - 1.0) <= 0.15)

    def test_normalization_per_covariate_row(self):
        rng = np.random.default_rng(7)
        n = 400
        W = rng.normal(size=(n, 2))
        A = 0.5 * W[:, 0] + rng.normal(0, 1, n)
        model = fit_haldensify(
            A, W, np.ones(n), n_bins_grid=(5,), bin_rule="equal_mass", seed=1,
            hal_opts={"max_degree": 1, "max_knots_per_dim": 5, "n_lambda": 10,
                      "cv_folds": 2},
        )
        mids = 0.5 * (model.bin_edges[:-1] + model.bin_edges[1:])
        widths = model.widths
        for w_row in W[:25]:
            Wq = np.tile(w_row[None, :], (mids.size, 1))
            total = float(model.density(mids, Wq) @ widths)
            assert total == pytest.approx(1.0, abs=1e-8)

    def test_covariate_free_saturated_matches_weighted_histogram(self):
        rng = np.random.default_rng(8)
        n = 600
        A = rng.random(n)
        w = rng.uniform(0.5, 2.0, n)
        T = 4
        model = fit_haldensify(
            A, np.zeros((n, 0)), w, n_bins_grid=(T,), bin_rule="equal_range", seed=2,
            hal_opts={"lambda_grid": [1e-7], "cv_folds": 2},
        )
        edges = model.bin_edges
        hist, _ = np.histogram(A, bins=edges, weights=w)
        freq = hist / hist.sum()
        masses = model.bin_masses(np.zeros((1, 0)))[0]
        assert np.allclose(masses, freq, atol=1e-3)

    def test_duplicate_rows_vs_halved_weights(self):
        rng = np.random.default_rng(9)
        n = 150
        W = rng.normal(size=(n, 1))
        A = rng.normal(0.3 * W[:, 0], 1.0)
        w = rng.uniform(0.5, 1.5, n)
        base = fit_haldensify(
            A, W, w, n_bins_grid=(4,), bin_rule="equal_mass", seed=3,
            hal_opts={"lambda_grid": [0.01], "cv_folds": 2},
        )
        A2 = np.concatenate([A, A])
        W2 = np.vstack([W, W])
        w2 = np.concatenate([w, w]) / 2.0
        dup = fit_haldensify(
            A2, W2, w2, n_bins_grid=(4,), bin_rule="equal_mass", seed=3,
            hal_opts={"lambda_grid": [0.01], "cv_folds": 2},
        )
        Wq = rng.normal(size=(20, 1))
        aq = rng.uniform(A.min(), A.max(), 20)
        assert np.allclose(base.density(aq, Wq), dup.density(aq, Wq), atol=1e-8)

    def test_outside_grid_zero(self):
        rng = np.random.default_rng(10)
        A = rng.random(100)
        W = np.zeros((100, 1))
        model = fit_haldensify(
            A, W, np.ones(100), n_bins_grid=(4,), seed=0,
            hal_opts={"lambda_grid": [0.01], "cv_folds": 2},
        )
        below = A.min() - 0.5
        above = A.max() + 0.5
        assert predict_density(model, [below, above], np.zeros((2, 1))).tolist() == [0.0, 0.0]

    def test_skipped_bin_counts_warn_and_error(self):
        A = np.array([0.0] * 30 + [1.0] * 30, dtype=float)
        W = np.zeros((60, 1))
        with pytest.raises(DataError, match="no usable bin count"):
            with pytest.warns(UserWarning, match="skipped"):
                fit_haldensify(A, W, np.ones(60), n_bins_grid=(5,),
                               bin_rule="equal_range", seed=0)

    def test_bin_count_selection_by_cv(self):
        rng = np.random.default_rng(11)
        n = 300
        A = rng.normal(0, 1, n)
        W = np.zeros((n, 1))
        model = fit_haldensify(
            A, W, np.ones(n), n_bins_grid=(3, 6), bin_rule="equal_mass", seed=4,
            cv_folds=2,
            hal_opts={"max_degree": 1, "max_knots_per_dim": 4, "n_lambda": 8,
                      "cv_folds": 2},
        )
        assert model.n_bins_selected in (3, 6)
        assert model.bin_edges.size == model.n_bins_selected + 1

    def test_json_round_trip(self):
        rng = np.random.default_rng(12)
        A = rng.random(200)
        W = rng.normal(size=(200, 1))
        model = fit_haldensify(
            A, W, np.ones(200), n_bins_grid=(4,), seed=5,
            hal_opts={"lambda_grid": [0.02], "cv_folds": 2},
        )
        back = CondDensityModel.from_json(model.to_json())
        aq = rng.random(30)
        Wq = rng.normal(size=(30, 1))
        assert np.array_equal(model.density(aq, Wq), back.density(aq, Wq))
