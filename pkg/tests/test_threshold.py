from __future__ import annotations

import math

import numpy as np
import pytest

from tailtilt import (
    ThresholdProblem,
    TiltSpec,
    estimator_bias_variance_study,
    gradient,
    objective,
    solve_biased_sgd,
    solve_golden_section,
    solve_pgd,
    tilt_samples,
)
from tailtilt.diagnostics import finite_difference
from tailtilt.threshold import study_to_csv


@pytest.fixture(scope="module")
def right_problem(batch_100k):
    return ThresholdProblem("right", 1.0, 0.8, batch_100k)


@pytest.fixture(scope="module")
def left_problem(batch_100k):
    return ThresholdProblem("left", 1.0, 0.2, batch_100k)


class TestProblemValidation:
    def test_bad_mode(self, batch_10k):
        with pytest.raises(ValueError):
            ThresholdProblem("up", 1.0, 0.5, batch_10k)

    def test_bad_alpha(self, batch_10k):
        with pytest.raises(ValueError):
            ThresholdProblem("right", 0.0, 0.5, batch_10k)

    def test_bad_beta(self, batch_10k):
        with pytest.raises(ValueError):
            ThresholdProblem("right", 1.0, 1.5, batch_10k)

    def test_missing_rewards(self, prior2d):
        from tailtilt import sample_prior

        with pytest.raises(ValueError):
            ThresholdProblem("right", 1.0, 0.5, sample_prior(prior2d, 10, 0))

    def test_default_interval_pads_reward_range(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.5, batch_10k)
        lo, hi = prob.interval
        r = batch_10k.rewards
        assert lo < r.min() and hi > r.max()

    def test_smoothness_bound(self, batch_10k):
        right = ThresholdProblem("right", 2.0, 0.8, batch_10k)
        left = ThresholdProblem("left", 2.0, 0.8, batch_10k)
        assert right.smoothness_bound == pytest.approx(1.0 / (4 * 2.0 * 0.2**2))
        assert left.smoothness_bound == pytest.approx(1.0 / (4 * 2.0 * 0.8**2))


class TestObjective:
    def test_right_above_max_is_linear(self, right_problem):
        t = float(right_problem.rewards.max())
        for dt in (0.0, 0.5, 2.0):
            assert objective(right_problem, t + dt) == pytest.approx(t + dt, abs=1e-12)

    def test_left_below_min_is_linear(self, left_problem):
        t = float(left_problem.rewards.min())
        for dt in (0.0, 0.5, 2.0):
            assert objective(left_problem, t - dt) == pytest.approx(t - dt, abs=1e-12)

    def test_right_convex_on_grid(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        for t in np.linspace(-4.0, 4.0, 200):
            d2 = finite_difference(lambda u: objective(prob, u), float(t), 1e-2, order=2)
            assert d2 >= -1e-8

    def test_nonfinite_t_rejected(self, right_problem):
        with pytest.raises(ValueError):
            objective(right_problem, math.inf)


class TestGradient:
    def test_right_above_max(self, right_problem):
        t = float(right_problem.rewards.max())
        assert gradient(right_problem, t) == 1.0
        assert gradient(right_problem, t + 1.0) == 1.0

    def test_right_below_min(self, right_problem):
        t = float(right_problem.rewards.min()) - 0.5
        expected = 1.0 - 1.0 / (1.0 - right_problem.beta)
        assert gradient(right_problem, t) == pytest.approx(expected, abs=1e-12)

    def test_left_boundaries(self, left_problem):
        r = left_problem.rewards
        assert gradient(left_problem, float(r.min())) == 1.0
        assert gradient(left_problem, float(r.max()) + 0.5) == pytest.approx(
            1.0 - 1.0 / left_problem.beta, abs=1e-12
        )

    @pytest.mark.parametrize("mode,beta", [("right", 0.8), ("left", 0.2)])
    def test_matches_finite_difference(self, batch_10k, mode, beta):
        prob = ThresholdProblem(mode, 1.0, beta, batch_10k)
        h = 2.0**-17
        rs = np.unique(prob.rewards)
        mids = 0.5 * (rs[:-1] + rs[1:])
        eligible = mids[np.diff(rs) > 3.2 * h]
        probes = np.round(eligible[:: max(1, len(eligible) // 60)] / h) * h
        for t in probes:
            fd = finite_difference(lambda u: objective(prob, u), float(t), h, order=1)
            assert abs(gradient(prob, float(t)) - fd) < 1e-6


class TestGoldenSection:
    def test_linear_segment_returns_left_endpoint(self, batch_10k):
        r_max = float(batch_10k.rewards.max())
        prob = ThresholdProblem(
            "right", 1.0, 0.8, batch_10k, interval=(r_max, r_max + 1.0)
        )
        res = solve_golden_section(prob, tol=1e-6, polish=False)
        assert res.t_star <= r_max + 1e-5

    def test_right_stationarity_mass(self, batch_100k, right_problem):
        res = solve_golden_section(right_problem)
        tilted = tilt_samples(batch_100k, TiltSpec("right", 1.0, 0.8, res.t_star))
        mass = float(tilted.weights()[batch_100k.rewards > res.t_star].sum())
        assert abs(mass - 0.2) < 0.01

    def test_left_stationarity_mass(self, batch_100k, left_problem):
        res = solve_golden_section(left_problem)
        tilted = tilt_samples(batch_100k, TiltSpec("left", 1.0, 0.2, res.t_star))
        mass = float(tilted.weights()[batch_100k.rewards < res.t_star].sum())
        assert abs(mass - 0.2) < 0.01

    def test_polish_pins_gradient(self, right_problem):
        res = solve_golden_section(right_problem)
        assert abs(res.gradient_at_solution) < 1e-9

    def test_left_reports_objective_value(self, left_problem):
        res = solve_golden_section(left_problem)
        assert res.objective_value == pytest.approx(
            objective(left_problem, res.t_star)
        )

    def test_bad_tol_rejected(self, right_problem):
        with pytest.raises(ValueError):
            solve_golden_section(right_problem, tol=0.0)


class TestPgd:
    def test_stationary_start_stays(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        t_star = solve_golden_section(prob).t_star
        res = solve_pgd(prob, iters=200, t0=t_star)
        assert abs(res.t_star - t_star) < 1e-10

    def test_matches_golden_objective(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        golden = solve_golden_section(prob)
        res = solve_pgd(prob, iters=500)
        assert res.objective_value - golden.objective_value < 1e-6

    def test_left_mode_ascends(self, batch_10k):
        # the empirical left objective has corner-scale local maxima, so
        # ascent agrees with the reference only at that resolution
        prob = ThresholdProblem("left", 1.0, 0.2, batch_10k)
        golden = solve_golden_section(prob)
        res = solve_pgd(prob, iters=500)
        gap = golden.objective_value - res.objective_value
        assert -1e-12 < gap < 2e-4

    def test_projection_respected(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        lo, hi = prob.interval
        res = solve_pgd(prob, iters=50, t0=hi)
        assert all(lo <= row.t <= hi for row in res.trace)

    def test_oversized_step_warns_not_raises(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        res = solve_pgd(prob, step=10.0, iters=5)
        assert res.warnings

    def test_solver_agreement(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        tol = 1e-8 * prob.diameter
        golden = solve_golden_section(prob, tol=tol)
        pgd = solve_pgd(prob, iters=2000)
        sgd = solve_biased_sgd(
            prob, batch_size=len(batch_10k), iters=2000, step=1.0 / (4 * prob.smoothness_bound)
        )
        assert abs(pgd.t_star - golden.t_star) < 10 * tol
        assert abs(sgd.t_star - golden.t_star) < 0.35  # Polyak average includes burn-in
        assert abs(sgd.trace[-1].t - golden.t_star) < 10 * tol


class TestBiasedSgd:
    def test_full_batch_matches_pgd(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        step = 0.5 / (4 * prob.smoothness_bound)
        pgd = solve_pgd(prob, step=step, iters=100)
        sgd = solve_biased_sgd(prob, batch_size=len(batch_10k), iters=100, step=step)
        assert [row.t for row in sgd.trace] == [row.t for row in pgd.trace[:-1]]

    def test_batch_prefix_shared_across_sizes(self, batch_10k):
        # lane design: runs differing only in batch size (<= lane width) read
        # the same index stream, so the smaller batch is a prefix of the larger
        from tailtilt.threshold import _minibatch_gradient

        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        t0 = 1.0
        a = solve_biased_sgd(prob, batch_size=64, iters=2, seed=5, step=1e-12, t0=t0)
        b = solve_biased_sgd(prob, batch_size=128, iters=2, seed=5, step=1e-12, t0=t0)
        block = np.random.default_rng(5).integers(0, len(batch_10k), (4096, 256))
        for res, size in ((a, 64), (b, 128)):
            expected = _minibatch_gradient(
                batch_10k.rewards[block[0, :size]], "right", 1.0, 0.8, t0
            )
            assert res.trace[0].gradient == expected

    def test_averaged_iterate_returned(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        res = solve_biased_sgd(prob, batch_size=64, iters=200, seed=1)
        assert res.averaged_iterate == res.t_star
        ts = [row.t for row in res.trace]
        assert res.t_star == pytest.approx(np.mean(ts), abs=1e-12)

    def test_small_batch_rejected(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        with pytest.raises(ValueError):
            solve_biased_sgd(prob, batch_size=1, iters=10)

    def test_deterministic(self, batch_10k):
        prob = ThresholdProblem("left", 1.0, 0.2, batch_10k)
        a = solve_biased_sgd(prob, batch_size=32, iters=50, seed=11)
        b = solve_biased_sgd(prob, batch_size=32, iters=50, seed=11)
        assert a.t_star == b.t_star

    def test_converges_near_optimum(self, batch_10k):
        # gentle tilt rate so the minibatch ratio gradient is well-behaved
        prob = ThresholdProblem("right", 2.0, 0.2, batch_10k)
        golden = solve_golden_section(prob)
        res = solve_biased_sgd(prob, batch_size=512, iters=4000, seed=2)
        gap = res.objective_value - golden.objective_value
        assert -1e-12 < gap < 1e-4


class TestEstimatorStudy:
    def test_bias_decays_with_batch_size(self, prior2d, bump_reward):
        from tailtilt import sample_prior, var_beta

        s = sample_prior(prior2d, 10_000, 11)
        s.ensure_rewards(bump_reward)
        prob = ThresholdProblem("right", 1.0, 0.8, s)
        t = var_beta(s.rewards, None, 0.8)
        rows = estimator_bias_variance_study(prob, t, [100, 10_000], 4000, seed=5)
        assert abs(rows[1].bias) < abs(rows[0].bias)
        assert rows[1].variance < rows[0].variance

    def test_csv_schema(self, tmp_path, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        rows = estimator_bias_variance_study(prob, 1.0, [16, 64], 50, seed=0)
        path = tmp_path / "study.csv"
        study_to_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "N,bias,variance,trials"
        assert len(lines) == 3


class TestTrace:
    def test_trace_csv_schema(self, tmp_path, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        res = solve_pgd(prob, iters=10)
        path = tmp_path / "trace.csv"
        res.trace_to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,t,objective,gradient,batch_size"
        assert len(lines) == len(res.trace) + 1

    def test_record_every_thins_trace(self, batch_10k):
        prob = ThresholdProblem("right", 1.0, 0.8, batch_10k)
        res = solve_biased_sgd(prob, batch_size=32, iters=100, seed=0, record_every=10)
        assert len(res.trace) == 10
