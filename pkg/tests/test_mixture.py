import numpy as np
import pytest

from fusion_prognostics.clustering.operations import align_labels, per_mode_accuracy
from fusion_prognostics.mixture.em import EmRun, best_start, fit_em, selection_report, top_sensors
from fusion_prognostics.mixture.likelihood import check_cdll_bound, e_step, neg_idll, penalty_value, q_function
from fusion_prognostics.mixture.model import EmConfig, MixtureParams, PenaltyConfig, SensorSelectionReport
from fusion_prognostics.mixture.solver import lambda_max, m_step_mode, pi_step, sgl_prox, update_rho


def params(pi, rho, phi0, phi, group_offsets=None) -> MixtureParams:
    phi = np.asarray(phi, dtype=float)
    offsets = [(j, j + 1) for j in range(phi.shape[1])] if group_offsets is None else group_offsets
    return MixtureParams(pi=pi, rho=rho, phi0=phi0, phi=phi, group_offsets=offsets)


def two_mode_problem(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    modes = np.repeat([0, 1], n // 2)
    y = np.where(modes == 0, 3.0, -3.0) * x[:, 0] + 0.05 * rng.normal(size=n)
    return x, y, modes


def grouped_regression_modes(n=320, seed=0):
    """Two regression modes driven by different sensor groups, among 10 sensors of 3 columns each."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 30))
    modes = rng.permutation(np.repeat([0, 1], n // 2))
    first = 1.0 + 2.0 * x[:, 0] - 1.5 * x[:, 3]
    second = -1.0 - 2.0 * x[:, 6] + 1.5 * x[:, 9]
    y = np.where(modes == 0, first, second) + 0.1 * rng.normal(size=n)
    offsets = [(3 * p, 3 * p + 3) for p in range(10)]
    return x, y, modes, offsets


@pytest.fixture(scope="module")
def random_start_fit():
    x, y, modes, offsets = grouped_regression_modes()
    result = fit_em(
        x, y, K=2, penalty=PenaltyConfig(lambda_=0.05, alpha=1.0), cfg=EmConfig(n_starts=8, start_iterations=30),
        group_offsets=offsets,
    )
    return result, modes


def em_run(start, trace, mode_weights) -> EmRun:
    mixture = params([0.5, 0.5], [1.0, 1.0], [0.0, 0.0], [[0.0], [0.0]])
    return EmRun(
        start=start, params=mixture, flagged=(), trace=tuple(trace), converged=True, iterations=len(trace) - 1,
        mode_weights=np.asarray(mode_weights, dtype=float),
    )


class TestLikelihood:
    def test_standard_normal_at_zero(self):
        single = params([1.0], [1.0], [0.0], [[0.0]])

        assert neg_idll(single, np.zeros((1, 1)), np.zeros(1)) == pytest.approx(0.9189385, abs=1e-7)

    def test_duplicated_data_doubles(self):
        x, y, _ = two_mode_problem(n=20)
        mixture = params([0.4, 0.6], [1.0, 2.0], [0.1, -0.2], [[1.0, 0.0], [0.5, -1.0]])

        doubled = neg_idll(mixture, np.vstack([x, x]), np.concatenate([y, y]))

        assert doubled == pytest.approx(2 * neg_idll(mixture, x, y), rel=1e-12)

    def test_mode_order_does_not_matter(self):
        x, y, _ = two_mode_problem(n=20)
        mixture = params([0.4, 0.6], [1.0, 2.0], [0.1, -0.2], [[1.0, 0.0], [0.5, -1.0]])

        assert neg_idll(mixture.permuted([1, 0]), x, y) == pytest.approx(neg_idll(mixture, x, y), rel=1e-12)

    def test_expected_complete_likelihood_of_one_mode(self):
        x, y, _ = two_mode_problem(n=20)
        single = params([1.0], [1.5], [0.2], [[1.0, -0.5]])

        assert q_function(single, np.ones((20, 1)), x, y) == pytest.approx(neg_idll(single, x, y), rel=1e-12)

    def test_penalty_weights_each_mode_by_its_share(self):
        mixture = params([0.25, 0.75], [1.0, 1.0], [0.0, 0.0], [[3.0, -4.0], [1.0, 0.0]], group_offsets=[(0, 2)])

        lasso = penalty_value(mixture, PenaltyConfig(lambda_=2.0, alpha=1.0))
        group = penalty_value(mixture, PenaltyConfig(lambda_=2.0, alpha=0.0))

        assert lasso == pytest.approx(2.0 * (0.25 * 7.0 + 0.75 * 1.0))
        assert group == pytest.approx(2.0 * np.sqrt(2) * (0.25 * 5.0 + 0.75 * 1.0))


class TestEStep:
    def test_closer_mode_takes_the_weight(self):
        mixture = params([0.5, 0.5], [1.0, 1.0], [0.0, 2.0], [[0.0], [0.0]])

        gamma = e_step(mixture, np.zeros((1, 1)), np.zeros(1)).gamma

        assert gamma[0, 0] == pytest.approx(0.88080, abs=1e-5)

    def test_single_mode(self):
        x, y, _ = two_mode_problem(n=10)

        gamma = e_step(params([1.0], [1.0], [0.0], [[1.0, 0.0]]), x, y).gamma

        assert np.array_equal(gamma, np.ones((10, 1)))

    def test_identical_modes_split_evenly(self):
        x, y, _ = two_mode_problem(n=10)
        mixture = params([0.5, 0.5], [2.0, 2.0], [0.3, 0.3], [[1.0, 1.0], [1.0, 1.0]])

        assert np.allclose(e_step(mixture, x, y).gamma, 0.5)

    def test_extreme_residuals_stay_finite(self):
        mixture = params([0.5, 0.5], [1.0, 1.0], [0.0, 50.0], [[0.0], [0.0]])

        gamma = e_step(mixture, np.zeros((2, 1)), np.array([-40.0, 60.0])).gamma

        assert np.all(np.isfinite(gamma))
        assert np.allclose(gamma.sum(axis=1), 1.0)


class TestBound:
    def setup_method(self):
        self.x, self.y, _ = two_mode_problem(n=30, seed=4)
        self.mixture = params([0.3, 0.7], [1.0, 0.5], [0.0, 0.4], [[2.0, 0.0], [-1.0, 0.5]])

    def test_uniform_weights(self):
        check = check_cdll_bound(self.mixture, np.full((30, 2), 0.5), self.x, self.y)

        assert check.holds
        assert not check.at_posterior

    def test_posterior_closes_the_gap(self):
        posterior = e_step(self.mixture, self.x, self.y)

        check = check_cdll_bound(self.mixture, posterior, self.x, self.y)

        assert check.holds
        assert check.at_posterior
        assert abs(check.identity_gap) < 1e-9

    def test_hard_assignment(self):
        g = np.zeros((30, 2))
        g[:, 1] = 1.0

        assert check_cdll_bound(self.mixture, g, self.x, self.y).holds


class TestProx:
    def test_zero_thresholds(self):
        v = np.array([1.5, -2.0, 0.3])

        assert np.array_equal(sgl_prox(v, 0.0, 0.0), v)

    def test_soft_then_group_shrinkage(self):
        result = sgl_prox(np.array([3.0, 4.0]), 1.0, 2.0)

        shrink = 1 - 2 / np.sqrt(13)
        assert np.allclose(result, [2 * shrink, 3 * shrink])
        assert result[0] == pytest.approx(0.8906, abs=1e-4)

    def test_small_group_is_removed(self):
        assert np.array_equal(sgl_prox(np.array([1.2, -0.5]), 0.5, 1.0), np.zeros(2))

    def test_minimizes_the_proximal_objective(self):
        rng = np.random.default_rng(6)
        axis = np.arange(-2.5, 2.5 + 1e-9, 0.005)
        u1, u2 = np.meshgrid(axis, axis, indexing="ij")

        for _ in range(20):
            v = rng.uniform(-2.0, 2.0, size=2)
            t_l1, t_group = rng.uniform(0.0, 1.0, size=2)

            def objective(a, b):
                return (
                    0.5 * ((a - v[0]) ** 2 + (b - v[1]) ** 2)
                    + t_l1 * (np.abs(a) + np.abs(b))
                    + t_group * np.sqrt(a**2 + b**2)
                )

            u = sgl_prox(v, t_l1, t_group)
            assert objective(u[0], u[1]) <= objective(u1, u2).min() + 1e-9

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            sgl_prox(np.ones(2), -0.1, 0.0)


class TestModeSolver:
    def test_rho_without_predictor(self):
        gamma = np.array([0.5, 1.0, 0.25])
        y = np.array([1.0, -2.0, 3.0])

        expected = np.sqrt(gamma.sum() / np.sum(gamma * y**2))
        assert update_rho(gamma, y, np.zeros(3)) == pytest.approx(expected, rel=1e-12)

    def test_unpenalized_solve_is_least_squares(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(50, 3))
        y = 0.5 + x @ np.array([1.0, -2.0, 0.5]) + 0.3 * rng.normal(size=50)
        design = np.column_stack([np.ones(50), x])
        coefficients, rss, _, _ = np.linalg.lstsq(design, y, rcond=None)

        update = m_step_mode(
            np.ones(50), 1.0, x, y, PenaltyConfig(), [(0, 1), (1, 2), (2, 3)],
            inner_max_iterations=5000, inner_tolerance=1e-15,
        )

        assert np.allclose(update.phi / update.rho, coefficients[1:], atol=1e-6)
        assert update.phi0 / update.rho == pytest.approx(coefficients[0], abs=1e-6)
        assert update.rho == pytest.approx(np.sqrt(50 / rss[0]), rel=1e-6)

    @pytest.mark.parametrize("alpha", [1.0, 0.0, 0.5])
    def test_lambda_max_switches_the_sensors_off(self, alpha):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(40, 4))
        y = x @ np.array([1.0, 0.0, -0.5, 0.2]) + 0.1 * rng.normal(size=40)
        gamma = rng.uniform(0.2, 1.0, size=40)
        offsets = [(0, 2), (2, 4)]

        threshold = lambda_max(gamma, 0.6, x, y, PenaltyConfig(alpha=alpha), offsets)
        above = m_step_mode(gamma, 0.6, x, y, PenaltyConfig(lambda_=1.01 * threshold, alpha=alpha), offsets)
        below = m_step_mode(gamma, 0.6, x, y, PenaltyConfig(lambda_=0.5 * threshold, alpha=alpha), offsets)

        assert threshold > 0
        assert above.null_model
        assert np.array_equal(above.phi, np.zeros(4))
        assert not below.null_model
        assert np.any(below.phi != 0)

    def test_wide_design_meets_the_optimality_conditions(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(150, 240))
        y = 2.0 * x[:, 0] - x[:, 5] + 0.5 * rng.normal(size=150)
        offsets = [(j, j + 3) for j in range(0, 240, 3)]

        update = m_step_mode(
            np.ones(150), 1.0, x, y, PenaltyConfig(lambda_=30.0, alpha=1.0), offsets,
            inner_max_iterations=5000, inner_tolerance=1e-12,
        )

        xc = x - x.mean(axis=0)
        gradient = xc.T @ (xc @ update.phi) - update.rho * (xc.T @ (y - y.mean()))
        active = update.phi != 0
        assert active[0] and active[5]
        assert np.allclose(gradient[active], -30.0 * np.sign(update.phi[active]), atol=0.5)
        assert np.all(np.abs(gradient[~active]) <= 30.5)

    def test_warm_start_at_the_solution_stops_at_once(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(60, 6))
        y = x @ np.array([1.0, 0.0, -0.5, 0.0, 0.0, 0.3]) + 0.2 * rng.normal(size=60)
        gamma = rng.uniform(0.2, 1.0, size=60)
        offsets = [(0, 2), (2, 4), (4, 6)]
        penalty = PenaltyConfig(lambda_=2.0, alpha=0.5)

        cold = m_step_mode(gamma, 0.5, x, y, penalty, offsets, inner_max_iterations=5000, inner_tolerance=1e-14)
        warm = m_step_mode(
            gamma, 0.5, x, y, penalty, offsets, start=(cold.rho, cold.phi0, cold.phi), inner_tolerance=1e-8
        )

        assert cold.iterations > 1
        assert warm.iterations == 1
        assert np.allclose(warm.phi, cold.phi, atol=1e-6)

    def test_empty_mode_keeps_its_parameters(self):
        x, y, _ = two_mode_problem(n=20)

        update = m_step_mode(np.zeros(20), 0.5, x, y, PenaltyConfig(), [(0, 1), (1, 2)], start=(2.0, 0.1, [1.0, 1.0]))

        assert update.flagged
        assert update.rho == 2.0
        assert np.array_equal(update.phi, [1.0, 1.0])


class TestPiStep:
    def test_halves_the_step_when_the_penalty_grows(self):
        x = np.linspace(0.0, 1.0, 10)[:, None]
        y = np.linspace(1.0, 2.0, 10)
        mixture = params([0.5, 0.5], [1.0, 1.0], [0.0, 0.0], [[1.0], [0.0]], group_offsets=[(0, 1)])
        gamma = np.zeros((10, 2))
        gamma[:9, 0] = 1.0
        gamma[9, 1] = 1.0

        pi, u = pi_step(mixture, gamma, x, y, PenaltyConfig(lambda_=10.0, alpha=1.0))

        assert u == 0.5
        assert np.allclose(pi, [0.7, 0.3])

    def test_fixed_point(self):
        x = np.linspace(0.0, 1.0, 10)[:, None]
        y = np.linspace(1.0, 2.0, 10)
        mixture = params([0.9, 0.1], [1.0, 1.0], [0.0, 0.0], [[1.0], [0.0]])
        gamma = np.zeros((10, 2))
        gamma[:9, 0] = 1.0
        gamma[9, 1] = 1.0

        pi, u = pi_step(mixture, gamma, x, y, PenaltyConfig())

        assert u == 1.0
        assert np.allclose(pi, [0.9, 0.1])


class TestEm:
    def test_recovers_two_regression_modes(self):
        x, y, modes = two_mode_problem()
        rng = np.random.default_rng(9)
        init = modes.copy()
        flipped = rng.choice(modes.size, size=modes.size // 5, replace=False)
        init[flipped] = 1 - init[flipped]

        result = fit_em(x, y, K=2, penalty=PenaltyConfig(), cfg=EmConfig(max_iterations=200), init_labels=init)

        _, accuracy = align_labels(result.hard_labels, modes, 2)
        assert accuracy >= 0.95

    def test_objective_never_increases(self):
        x, y, _ = two_mode_problem(seed=1)

        result = fit_em(x, y, K=2, penalty=PenaltyConfig(lambda_=1.0, alpha=0.5), cfg=EmConfig(max_iterations=50))

        trace = result.objective_trace
        assert np.all(np.diff(trace) <= 1e-8 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_responsibilities_are_distributions(self):
        x, y, _ = two_mode_problem(seed=2)

        result = fit_em(x, y, K=2, penalty=PenaltyConfig(), cfg=EmConfig(max_iterations=20))

        assert np.allclose(result.gamma.gamma.sum(axis=1), 1.0)
        assert result.params.pi.sum() == pytest.approx(1.0)

    def test_single_mode(self):
        x, y, _ = two_mode_problem(seed=3)

        result = fit_em(x, y, K=1, penalty=PenaltyConfig(), cfg=EmConfig(max_iterations=20))

        assert np.array_equal(result.params.pi, [1.0])
        assert np.allclose(result.gamma.gamma, 1.0)

    def test_random_starts_recover_both_modes(self, random_start_fit):
        result, modes = random_start_fit

        accuracy = per_mode_accuracy(result.hard_labels, modes, 2)
        assert np.all(accuracy >= 0.95)
        assert not result.collapsed

    def test_random_starts_recover_the_sensors_of_each_mode(self, random_start_fit):
        result, modes = random_start_fit
        permutation, _ = align_labels(result.hard_labels, modes, 2)
        expected = {0: {"0", "1"}, 1: {"2", "3"}}

        for k in range(2):
            leaders = {sensor for sensor, _ in top_sensors(result.selection, k, n=2)}
            assert leaders == expected[int(permutation[k])]

    def test_same_seed_same_fit(self):
        x, y, _ = two_mode_problem(seed=4)
        cfg = EmConfig(max_iterations=40, n_starts=3, start_iterations=5, seed=11)

        first = fit_em(x, y, K=2, penalty=PenaltyConfig(lambda_=0.5, alpha=0.5), cfg=cfg)
        second = fit_em(x, y, K=2, penalty=PenaltyConfig(lambda_=0.5, alpha=0.5), cfg=cfg)

        assert first.start == second.start
        assert np.array_equal(first.params.phi, second.params.phi)
        assert np.array_equal(first.objective_trace, second.objective_trace)

    def test_doubling_the_response_keeps_labels_and_selection(self):
        x, y, modes = two_mode_problem(seed=5)
        penalty = PenaltyConfig(lambda_=1.0, alpha=0.5)
        # a fixed number of iterations for both fits
        cfg = EmConfig(max_iterations=40, tolerance=1e-300, inner_tolerance=1e-14)

        single = fit_em(x, y, K=2, penalty=penalty, cfg=cfg, init_labels=modes)
        doubled = fit_em(x, 2 * y, K=2, penalty=penalty, cfg=cfg, init_labels=modes)

        assert np.allclose(doubled.gamma.gamma, single.gamma.gamma, rtol=0.0, atol=1e-6)
        assert np.allclose(doubled.params.phi, single.params.phi, rtol=0.0, atol=1e-6)
        assert np.allclose(doubled.params.rho, single.params.rho / 2, rtol=1e-6)
        assert np.array_equal(doubled.selection.significant, single.selection.significant)

    def test_relabeling_permutes_the_fit(self):
        x, y, modes = two_mode_problem(seed=6)
        result = fit_em(x, y, K=2, penalty=PenaltyConfig(lambda_=0.5), cfg=EmConfig(max_iterations=50), init_labels=modes)

        swapped = result.params.permuted([1, 0])

        assert neg_idll(swapped, x, y) == pytest.approx(neg_idll(result.params, x, y), rel=0.0, abs=1e-10)
        expected = e_step(result.params, x, y).gamma[:, [1, 0]]
        assert np.allclose(e_step(swapped, x, y).gamma, expected, rtol=0.0, atol=1e-12)

    def test_collapsed_starts_lose_to_balanced_ones(self):
        collapsed = em_run(0, [5.0, 1.0], [316.0, 4.0])
        balanced = em_run(1, [5.0, 2.0], [150.0, 170.0])

        assert best_start([collapsed, balanced], minimum_weight=16.0) is balanced
        assert best_start([collapsed, balanced], minimum_weight=0.0) is collapsed
        assert best_start([collapsed], minimum_weight=16.0) is collapsed

    def test_ties_go_to_the_earlier_start(self):
        first = em_run(2, [3.0], [10.0, 10.0])
        second = em_run(1, [3.0], [10.0, 10.0])

        assert best_start([first, second], minimum_weight=1.0) is second

    def test_start_settings_are_validated(self):
        with pytest.raises(ValueError):
            EmConfig(n_starts=0)
        with pytest.raises(ValueError):
            EmConfig(minimum_mode_fraction=1.0)

    def test_labels_required_when_configured(self):
        x, y, _ = two_mode_problem(n=20)

        with pytest.raises(Exception, match="labels"):
            fit_em(x, y, K=2, penalty=PenaltyConfig(), cfg=EmConfig(init_mode="labels"))


class TestSelection:
    def test_zero_coefficients_select_nothing(self):
        mixture = params([0.5, 0.5], [1.0, 1.0], [0.0, 0.0], np.zeros((2, 4)), group_offsets=[(0, 2), (2, 4)])

        report = selection_report(mixture, ["a", "b"])

        assert report.union() == []
        assert report.selected(0) == []

    def test_top_sensors_by_norm(self):
        report = SensorSelectionReport(
            sensor_ids=("a", "b", "c", "d"), norms=np.array([[3.0, 0.0], [5.0, 0.0], [0.0, 0.0], [5.0, 1.0]])
        )

        assert top_sensors(report, 0) == [("b", 5.0), ("d", 5.0), ("a", 3.0)]
        assert top_sensors(report, 1) == [("d", 1.0)]
        assert top_sensors(report, 0, n=1) == [("b", 5.0)]
