from __future__ import annotations

import numpy as np
import pytest

from tailtilt import (
    ImportanceDegeneracyWarning,
    SampleSet,
    ThresholdProblem,
    TiltSpec,
    grid_stationary_threshold,
    kl_grid,
    pseudo_reward,
    sample_prior,
    solve_golden_section,
    tilt_grid,
    tilt_samples,
    verify_quantile_consistency,
)
from tailtilt.diagnostics import finite_difference  # noqa: F401  (shared import path check)


class TestTiltSpec:
    def test_expected_ignores_beta(self):
        spec = TiltSpec("expected", 2.0)
        assert spec.beta is None and spec.t_star is None

    def test_right_requires_threshold(self):
        with pytest.raises(ValueError):
            TiltSpec("right", 1.0, 0.8, None)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            TiltSpec("middle", 1.0, 0.5, 0.0)

    def test_to_dict(self):
        spec = TiltSpec("left", 1.0, 0.2, -0.5)
        assert spec.to_dict() == {"mode": "left", "alpha": 1.0, "beta": 0.2, "t_star": -0.5}


class TestPseudoReward:
    def test_right_at_threshold(self):
        spec = TiltSpec("right", 1.0, 0.8, 2.0)
        assert pseudo_reward(spec, 2.0) == 0.0

    def test_right_scaling(self):
        spec = TiltSpec("right", 1.0, 0.8, 2.0)
        assert pseudo_reward(spec, 3.0) == pytest.approx(5.0)

    def test_left_scaling(self):
        spec = TiltSpec("left", 1.0, 0.2, 2.0)
        assert pseudo_reward(spec, 1.0) == pytest.approx(-5.0)
        assert pseudo_reward(spec, 3.0) == 0.0

    def test_expected_identity(self):
        spec = TiltSpec("expected", 3.0)
        r = np.array([-1.0, 0.0, 2.5])
        assert np.array_equal(pseudo_reward(spec, r), r)


class TestTiltSamples:
    def test_expected_mode_mean(self, prior2d, linear_reward):
        s = sample_prior(prior2d, 100_000, 14)
        s.ensure_rewards(linear_reward)
        tilted = tilt_samples(s, TiltSpec("expected", 1.0))
        mean_r = float(tilted.weights() @ tilted.rewards)
        assert abs(mean_r - 2.03) < 0.10  # analytic value 2.0

    def test_right_mode_table_row(self, batch_100k):
        from tailtilt import left_cvar, right_cvar

        prob = ThresholdProblem("right", 1.0, 0.8, batch_100k)
        t_star = solve_golden_section(prob).t_star
        tilted = tilt_samples(batch_100k, TiltSpec("right", 1.0, 0.8, t_star))
        w = tilted.weights()
        assert right_cvar(tilted.rewards, w, 0.8) == pytest.approx(6.31, abs=0.45)
        assert float(w @ tilted.rewards) == pytest.approx(1.26, abs=0.2)

    def test_left_mode_table_row(self, batch_100k):
        from tailtilt import left_cvar

        prob = ThresholdProblem("left", 1.0, 0.2, batch_100k)
        t_star = solve_golden_section(prob).t_star
        tilted = tilt_samples(batch_100k, TiltSpec("left", 1.0, 0.2, t_star))
        w = tilted.weights()
        assert left_cvar(tilted.rewards, w, 0.2) == pytest.approx(1.23, abs=0.15)
        assert float(w @ tilted.rewards) == pytest.approx(2.00, abs=0.10)

    def test_requires_rewards(self, prior2d):
        s = sample_prior(prior2d, 100, 0)
        with pytest.raises(ValueError):
            tilt_samples(s, TiltSpec("expected", 1.0))

    def test_mode_consistency_bitwise(self, batch_10k):
        # right tilt == plain reweight by the pseudo-reward over alpha
        from tailtilt import reweight

        spec = TiltSpec("right", 1.5, 0.8, 1.0)
        tilted = tilt_samples(batch_10k, spec)
        direct = reweight(batch_10k, pseudo_reward(spec, batch_10k.rewards) / 1.5)
        assert np.array_equal(tilted.log_weights, direct.log_weights)

    @pytest.mark.filterwarnings("ignore::tailtilt.ImportanceDegeneracyWarning")
    def test_monotone_likelihood_ratio(self, batch_10k):
        # both tilts reweight toward higher rewards: the right mode boosts the
        # upper tail, the left mode suppresses the lower tail, so the weight
        # is nondecreasing in the reward either way
        order = np.argsort(batch_10k.rewards)
        spec = TiltSpec("right", 1.0, 0.8, 1.0)
        lw = tilt_samples(batch_10k, spec).log_weights[order]
        assert np.all(np.diff(lw) >= -1e-12)
        spec_l = TiltSpec("left", 1.0, 0.2, 1.0)
        lw_l = tilt_samples(batch_10k, spec_l).log_weights[order]
        assert np.all(np.diff(lw_l) >= -1e-12)

    def test_degeneracy_warning(self, prior2d, linear_reward):
        s = sample_prior(prior2d, 200, 3)
        s.ensure_rewards(linear_reward)
        harsh = TiltSpec("right", 0.05, 0.95, float(s.rewards.min()))
        with pytest.warns(ImportanceDegeneracyWarning):
            tilt_samples(s, harsh)


class TestTiltGrid:
    def test_vacuous_tilt_is_identity(self, grid200, linear_reward):
        t_hi = float(linear_reward(grid200.centers()).max())
        out = tilt_grid(grid200, linear_reward, TiltSpec("right", 1.0, 0.8, t_hi))
        assert np.allclose(out.log_mass, grid200.log_mass, atol=1e-12)

    def test_expected_equals_right_at_low_threshold(self, grid200, linear_reward):
        # right tilt with t far below the range is the expected-mode tilt at
        # temperature alpha*(1-beta), up to a constant absorbed in normalization
        alpha, beta = 1.0, 0.9
        right = tilt_grid(grid200, linear_reward, TiltSpec("right", alpha, beta, -100.0))
        expected = tilt_grid(grid200, linear_reward, TiltSpec("expected", alpha * (1 - beta)))
        assert np.allclose(right.log_mass, expected.log_mass, atol=1e-9)

    def test_bump_tail_mass(self, grid200, bump_reward):
        samples = SampleSet.from_grid(grid200, bump_reward)
        prob = ThresholdProblem("right", 1.0, 0.9, samples)
        t_star = solve_golden_section(prob).t_star
        tilted = tilt_grid(grid200, bump_reward, TiltSpec("right", 1.0, 0.9, t_star))
        r = bump_reward(grid200.centers())
        mass = float(tilted.masses().ravel()[r > t_star].sum())
        assert abs(mass - 0.1) < 0.005

    def test_expected_mode_maximizes_regularized_objective(self, prior2d, linear_reward):
        # the exp(r/alpha) tilt maximizes E[r] - alpha * KL(. || prior) on the
        # lattice: 100 random perturbations all score no better
        from tailtilt import GridDistribution, grid_from_density

        grid = grid_from_density([-4, -4], [4, 4], 60, prior2d.density)
        reward = np.asarray(grid.centers().sum(axis=1)).reshape(60, 60)
        alpha = 1.0
        tilted = tilt_grid(grid, linear_reward, TiltSpec("expected", alpha))

        def objective(g):
            return g.expectation(reward) - alpha * kl_grid(g, grid)

        best = objective(tilted)
        rng = np.random.default_rng(8)
        for _ in range(100):
            noise = rng.normal(scale=0.3, size=(60, 60))
            perturbed = GridDistribution.from_unnormalized(
                grid.lo, grid.hi, 60, tilted.log_mass + noise
            )
            assert objective(perturbed) <= best + 1e-10


class TestQuantileConsistency:
    def test_grid_exact(self, grid200, bump_reward):
        samples = SampleSet.from_grid(grid200, bump_reward)
        prob = ThresholdProblem("right", 1.0, 0.9, samples)
        t_star = solve_golden_section(prob).t_star
        tilted = tilt_grid(grid200, bump_reward, TiltSpec("right", 1.0, 0.9, t_star))
        gap = verify_quantile_consistency(tilted, t_star, 0.9, "right", bump_reward)
        # resolution: adjacent distinct reward levels around the threshold
        r = np.unique(bump_reward(grid200.centers()))
        k = np.searchsorted(r, t_star)
        local_gap = r[min(k + 1, r.size - 1)] - r[max(k - 1, 0)]
        assert gap < 2 * local_gap

    def test_samples_large_n(self, prior2d, linear_reward):
        s = sample_prior(prior2d, 1_000_000, 5)
        s.ensure_rewards(linear_reward)
        prob = ThresholdProblem("right", 1.0, 0.8, s)
        t_star = solve_golden_section(prob).t_star
        tilted = tilt_samples(s, TiltSpec("right", 1.0, 0.8, t_star))
        assert verify_quantile_consistency(tilted, t_star, 0.8) < 0.02

    def test_extreme_beta_stress(self, prior2d, linear_reward):
        s = sample_prior(prior2d, 1_000_000, 6)
        s.ensure_rewards(linear_reward)
        prob = ThresholdProblem("right", 1.0, 0.99, s)
        t_star = solve_golden_section(prob).t_star
        with np.errstate(over="ignore"):
            tilted = tilt_samples(s, TiltSpec("right", 1.0, 0.99, t_star))
        gap = verify_quantile_consistency(tilted, t_star, 0.99)
        assert np.isfinite(gap) and gap < 0.1

    def test_grid_needs_reward(self, grid200):
        with pytest.raises(ValueError):
            verify_quantile_consistency(grid200, 0.0, 0.5)


class TestGridStationaryThreshold:
    def test_matches_golden_solution(self, grid200, bump_reward):
        t_fp = grid_stationary_threshold(grid200, bump_reward, 1.0, 0.9)
        samples = SampleSet.from_grid(grid200, bump_reward)
        t_gold = solve_golden_section(
            ThresholdProblem("right", 1.0, 0.9, samples)
        ).t_star
        assert abs(t_fp - t_gold) < 1e-3

    def test_self_consistent(self, grid200, bump_reward):
        from tailtilt import grid_var_beta

        t_fp = grid_stationary_threshold(grid200, bump_reward, 1.0, 0.9)
        tilted = tilt_grid(grid200, bump_reward, TiltSpec("right", 1.0, 0.9, t_fp))
        assert abs(grid_var_beta(tilted, bump_reward, 0.9) - t_fp) < 1e-10
