"""Ground-truth generation, simulation, and Grammian quantities.

Ground truth used here:
- Gamma_t(0) = I for every t; Gamma_2(0.5) in d=1 is 1 + 1/4 + 1/16
- the Lipschitz factor at rho=0.5, T=5 evaluates to 5.9375
- stable matrices obey trace(Gamma_t) <= d/(1-rho^2) and beta <= 1/(1-rho)
"""

import math

import numpy as np
import pytest

from graphlds.graphs import complete_graph, grid2d_graph, path_graph, star_graph
from graphlds.systems import (
    FieldError,
    PiecewiseField,
    SmoothField,
    SystemEnsemble,
    TrajectoryPanel,
    deltaG_bounds,
    gen_ground_truth,
    grammian,
    grammian_aggregate,
    grammian_bundle,
    grammian_lipschitz_factor,
    one_step_pred_mse,
    simulate_panel,
    toeplitz_operator_dense,
    toeplitz_spectral_norm,
)


def random_stable_ensemble(m, d, rho_cap, seed):
    rng = np.random.default_rng(seed)
    mats = rng.standard_normal((m, d, d))
    for l in range(m):
        norm = np.linalg.norm(mats[l], 2)
        mats[l] *= rng.uniform(0.2, rho_cap) / norm
    return SystemEnsemble(d=d, matrices=mats)


class TestGroundTruth:
    def test_zero_jump_gives_identical_matrices(self):
        truth = gen_ground_truth(path_graph(6), PiecewiseField(s=0.0))
        assert np.ptp(truth.matrices, axis=0).max() == 0.0
        assert np.abs(truth.beta_field).max() == 0.0

    def test_template_entries(self):
        truth = gen_ground_truth(path_graph(6), PiecewiseField(s=0.4))
        np.testing.assert_array_equal(truth.matrices[:, 0, 1], 0.1)
        np.testing.assert_array_equal(truth.matrices[:, 1, 0], 0.0)
        np.testing.assert_array_equal(truth.matrices[:, 1, 1], 0.6)

    @pytest.mark.parametrize("g", [path_graph(9), grid2d_graph(3, 3), complete_graph(9), star_graph(9)], ids=lambda g: g.kind)
    def test_piecewise_rescale_hits_target_jump(self, g):
        truth = gen_ground_truth(g, PiecewiseField(s=0.4))
        jumps = [abs(truth.beta_field[u - 1] - truth.beta_field[v - 1]) for (u, v) in g.edges]
        assert abs(max(jumps) - 0.4) <= 1e-12

    def test_piecewise_three_groups(self):
        truth = gen_ground_truth(path_graph(9), PiecewiseField(s=0.6))
        assert len(set(np.round(truth.beta_field, 12))) == 3

    def test_smooth_zero_frequency_is_constant(self):
        truth = gen_ground_truth(grid2d_graph(3, 3), SmoothField(s=0.7, omega=0.0))
        np.testing.assert_allclose(truth.beta_field, 0.7)
        assert "constant_field_no_rescale" in truth.flags

    def test_smooth_rescale_hits_target_jump(self):
        g = grid2d_graph(4, 4)
        truth = gen_ground_truth(g, SmoothField(s=0.5, omega=1.0))
        jumps = [abs(truth.beta_field[u - 1] - truth.beta_field[v - 1]) for (u, v) in g.edges]
        assert abs(max(jumps) - 0.5) <= 1e-12

    def test_impossible_rescale_errors(self):
        with pytest.raises(FieldError):
            gen_ground_truth(path_graph(1), PiecewiseField(s=0.5))

    def test_json_round_trip(self):
        truth = gen_ground_truth(path_graph(5), PiecewiseField(s=0.3))
        back = SystemEnsemble.from_json(truth.to_json())
        np.testing.assert_allclose(back.matrices, truth.matrices)
        np.testing.assert_allclose(back.beta_field, truth.beta_field)
        assert back.template == "paper2x2"


class TestSimulation:
    def test_starts_at_zero(self):
        truth = gen_ground_truth(path_graph(4), PiecewiseField(s=0.2))
        panel = simulate_panel(truth, 5, seed=0)
        np.testing.assert_array_equal(panel.states[:, 0, :], 0.0)

    def test_seed_reuse_bit_identical(self):
        truth = gen_ground_truth(path_graph(4), PiecewiseField(s=0.2))
        a = simulate_panel(truth, 12, seed=5)
        b = simulate_panel(truth, 12, seed=5)
        assert np.array_equal(a.states, b.states)

    def test_zero_noise_recursion(self):
        e = SystemEnsemble(d=2, matrices=np.array([0.5 * np.eye(2)]))
        panel = simulate_panel(e, 4, seed=0, noise_scale=0.0, x0=np.array([[1.0, 0.0]]))
        for t in range(5):
            np.testing.assert_allclose(panel.states[0, t], [0.5**t, 0.0], atol=1e-15)

    def test_innovation_variance_identity(self):
        # x_{l,1} is exactly the first innovation, so its covariance is I_d
        e = SystemEnsemble(d=2, matrices=np.array([[[0.3, 0.1], [0.0, 0.5]]]))
        samples = np.stack([simulate_panel(e, 1, seed=s).states[0, 1] for s in range(10_000)])
        V = np.cov(samples.T, ddof=1)
        assert np.abs(V - np.eye(2)).max() < 0.05

    def test_csv_round_trip(self):
        truth = gen_ground_truth(path_graph(3), PiecewiseField(s=0.1))
        panel = simulate_panel(truth, 6, seed=1)
        back = TrajectoryPanel.from_csv(panel.to_csv())
        np.testing.assert_allclose(back.states, panel.states)
        assert back.T_total == panel.T_total

    def test_slice_bounds(self):
        truth = gen_ground_truth(path_graph(3), PiecewiseField(s=0.1))
        panel = simulate_panel(truth, 10, seed=1)
        sub = panel.slice(2, 6)
        assert sub.T_total == 4
        np.testing.assert_array_equal(sub.states, panel.states[:, 2:7, :])
        with pytest.raises(ValueError):
            panel.slice(5, 12)


class TestGrammian:
    def test_identity_at_zero_horizon(self):
        A = np.array([[0.4, 0.2], [0.1, 0.3]])
        np.testing.assert_array_equal(grammian(A, 0), np.eye(2))

    def test_zero_matrix_all_horizons(self):
        np.testing.assert_array_equal(grammian(np.zeros((3, 3)), 7), np.eye(3))

    def test_scalar_geometric_sum(self):
        assert grammian(np.array([[0.5]]), 2)[0, 0] == pytest.approx(1.3125, abs=1e-15)

    def test_monotone_in_horizon(self):
        rng = np.random.default_rng(3)
        A = 0.8 * rng.standard_normal((3, 3)) / 3
        for t in range(5):
            diff = grammian(A, t + 1) - grammian(A, t)
            assert np.linalg.eigvalsh(diff).min() >= -1e-10

    def test_trace_bound_under_stability(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            d = int(rng.integers(1, 4))
            A = rng.standard_normal((d, d))
            rho = rng.uniform(0.1, 0.8)
            A *= rho / np.linalg.norm(A, 2)
            t = int(rng.integers(1, 30))
            assert np.trace(grammian(A, t)) <= d / (1.0 - rho**2) + 1e-8

    def test_aggregate_matches_direct_sum(self):
        A = np.array([[0.3, 0.2], [0.0, 0.5]])
        T = 6
        direct = sum(grammian(A, t) for t in range(T))
        np.testing.assert_allclose(grammian_aggregate(A, T), direct, atol=1e-12)


class TestToeplitzNorm:
    def test_identity_blocks_for_zero_matrix(self):
        assert toeplitz_spectral_norm(np.zeros((2, 2)), 5) == pytest.approx(1.0, abs=1e-12)

    def test_dense_operator_structure(self):
        A = np.array([[0.5]])
        M = toeplitz_operator_dense(A, 3)
        np.testing.assert_allclose(M, [[1, 0, 0], [0.5, 1, 0], [0.25, 0.5, 1]])

    def test_matches_dense_svd(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            d = int(rng.integers(1, 4))
            T = int(rng.integers(2, 40))
            A = rng.standard_normal((d, d))
            A *= rng.uniform(0.2, 0.9) / np.linalg.norm(A, 2)
            dense = np.linalg.norm(toeplitz_operator_dense(A, T), 2)
            assert toeplitz_spectral_norm(A, T) == pytest.approx(dense, rel=1e-8)

    def test_beta_bound_under_stability(self):
        rng = np.random.default_rng(12)
        for trial in range(20):
            A = rng.standard_normal((2, 2))
            rho = rng.uniform(0.1, 0.8)
            A *= rho / np.linalg.norm(A, 2)
            T = int(rng.integers(1, 40))
            assert toeplitz_spectral_norm(A, T) <= 1.0 / (1.0 - rho) + 1e-8


class TestGrammianBundle:
    def test_equal_matrices_zero_dispersion(self):
        A = np.array([[0.4, 0.1], [0.0, 0.5]])
        e = SystemEnsemble(d=2, matrices=np.stack([A] * 5))
        bundle = grammian_bundle(e, 8)
        assert bundle.delta_G <= 1e-12

    def test_zero_matrices(self):
        e = SystemEnsemble(d=2, matrices=np.zeros((4, 2, 2)))
        bundle = grammian_bundle(e, 9)
        np.testing.assert_allclose(bundle.G, np.broadcast_to(9.0 * np.eye(2), (4, 2, 2)))
        assert bundle.beta == pytest.approx(1.0, abs=1e-10)

    def test_beta_at_least_one(self):
        e = random_stable_ensemble(4, 2, 0.7, seed=5)
        assert grammian_bundle(e, 6).beta >= 1.0 - 1e-12

    def test_dispersion_below_frobenius_deviation(self):
        e = random_stable_ensemble(6, 2, 0.8, seed=6)
        bundle = grammian_bundle(e, 10)
        frob = math.sqrt(np.sum((bundle.G - bundle.G_bar) ** 2))
        assert bundle.delta_G <= frob + 1e-12

    def test_trace_sum_and_diag_max(self):
        e = random_stable_ensemble(3, 2, 0.6, seed=7)
        bundle = grammian_bundle(e, 5)
        direct = sum(np.trace(grammian(A, t)) for A in e.matrices for t in range(5))
        assert bundle.trace_sum() == pytest.approx(direct, rel=1e-12)
        assert bundle.diag_max() == pytest.approx(max(grammian_aggregate(A, 5).diagonal().max() for A in e.matrices))


class TestLipschitzFactor:
    def test_empty_sum_at_horizon_one(self):
        assert grammian_lipschitz_factor(0.7, 1)[0] == 0.0

    def test_single_term_at_horizon_two(self):
        rho = 0.37
        assert grammian_lipschitz_factor(rho, 2)[0] == pytest.approx(2.0 * rho, abs=1e-15)

    def test_direct_evaluation(self):
        exact, closed = grammian_lipschitz_factor(0.5, 5)
        assert exact == pytest.approx(5.9375, abs=1e-12)
        assert exact <= closed

    def test_closed_bound_on_grid(self):
        for rho in np.arange(0.1, 0.95, 0.1):
            for T in range(2, 51):
                exact, closed = grammian_lipschitz_factor(float(rho), T)
                assert exact <= closed + 1e-12

    def test_rho_out_of_range(self):
        with pytest.raises(ValueError):
            grammian_lipschitz_factor(1.0, 5)


class TestDispersionBounds:
    def test_equal_matrices_all_zero(self):
        A = np.array([[0.4, 0.1], [0.0, 0.5]])
        e = SystemEnsemble(d=2, matrices=np.stack([A] * 6))
        db = deltaG_bounds(e, path_graph(6), 10)
        assert db.delta_G <= 1e-12  # mean of identical floats can differ by an ulp
        assert db.frobenius_bound == 0.0
        assert db.tv_cheeger_bound == 0.0

    def test_bounds_dominate_exact_dispersion(self):
        rng = np.random.default_rng(99)
        for trial in range(20):
            m = int(rng.integers(4, 13))
            e = random_stable_ensemble(m, 2, 0.8, seed=100 + trial)
            g = [path_graph(m), complete_graph(m), star_graph(m)][trial % 3]
            T = int(rng.integers(2, 21))
            db = deltaG_bounds(e, g, T)
            assert db.delta_G <= db.frobenius_bound + 1e-9
            assert db.delta_G <= db.tv_cheeger_bound + 1e-9

    def test_unstable_ensemble_errors(self):
        e = SystemEnsemble(d=2, matrices=np.array([1.5 * np.eye(2)]))
        with pytest.raises(ValueError):
            deltaG_bounds(e, path_graph(1), 5)


class TestPredMse:
    def test_perfect_prediction_zero(self):
        e = SystemEnsemble(d=2, matrices=np.array([[[0.5, 0.0], [0.0, 0.5]]] * 2))
        panel = simulate_panel(e, 8, seed=0, noise_scale=0.0, x0=np.ones((2, 2)))
        assert one_step_pred_mse(e.matrices, panel) == 0.0
