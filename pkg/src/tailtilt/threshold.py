"""One-dimensional threshold optimization for the tail-tilt dual objectives.

The right-tail objective  t + a*log E[exp((r-t)+ / (a(1-b)))]  is convex and
is minimized; the left-tail objective  t + a*log E[exp(-(t-r)+ / (a*b))]  is
concave and is maximized. Both are evaluated in log space on a fixed weighted
batch. Gradients take a self-normalized ratio form (tilted tail mass over
tilted total mass), which on minibatches yields a biased but O(1/N)-accurate
estimator; the solvers here are golden-section search (reference), full-batch
projected gradient, and projected SGD on that ratio estimator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import risk
from .distributions import SampleSet

__all__ = [
    "EstimatorStudyRow",
    "NumericFailure",
    "ThresholdProblem",
    "ThresholdResult",
    "TraceRow",
    "estimator_bias_variance_study",
    "gradient",
    "objective",
    "solve_biased_sgd",
    "solve_golden_section",
    "solve_pgd",
]

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_INDEX_LANE = 256  # minibatch indices are drawn in lanes of this width


class NumericFailure(ArithmeticError):
    """An objective or gradient evaluation left the representable range."""


class TraceRow(NamedTuple):
    iteration: int
    t: float
    objective: float
    gradient: float
    batch_size: int


@dataclass(frozen=True)
class ThresholdProblem:
    """Threshold optimization problem over an offline weighted batch.

    ``interval`` is the projection region for the iterative solvers; by
    default it is the batch reward range padded by 10% on each side. The
    convergence guarantees assume it contains the reward range, but a custom
    interval is accepted unchecked so that restricted searches stay possible.
    """

    mode: str
    alpha: float
    beta: float
    data: SampleSet
    interval: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        mode = str(self.mode).lower()
        if mode not in ("right", "left"):
            raise ValueError("mode must be 'right' or 'left'")
        object.__setattr__(self, "mode", mode)
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be positive and finite")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.data.rewards is None:
            raise ValueError("data must carry rewards; call ensure_rewards first")
        if self.interval is None:
            r = self.data.rewards
            span = float(r.max() - r.min())
            pad = 0.1 * span if span > 0 else max(1.0, abs(float(r[0])))
            object.__setattr__(
                self, "interval", (float(r.min()) - pad, float(r.max()) + pad)
            )
        else:
            lo, hi = (float(v) for v in self.interval)
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError("interval must be finite with hi > lo")
            object.__setattr__(self, "interval", (lo, hi))
        object.__setattr__(self, "_logw", self.data.normalized_log_weights())

    @property
    def rewards(self) -> np.ndarray:
        return self.data.rewards

    @property
    def log_weights(self) -> np.ndarray:
        return self._logw

    @property
    def diameter(self) -> float:
        lo, hi = self.interval
        return hi - lo

    @property
    def smoothness_bound(self) -> float:
        """Upper bound on the objective curvature: 1/(4a(1-b)^2) or 1/(4ab^2)."""
        if self.mode == "right":
            return 1.0 / (4.0 * self.alpha * (1.0 - self.beta) ** 2)
        return 1.0 / (4.0 * self.alpha * self.beta**2)


@dataclass(frozen=True)
class ThresholdResult:
    t_star: float
    objective_value: float
    trace: tuple[TraceRow, ...]
    method: str
    averaged_iterate: float | None = None
    gradient_at_solution: float | None = None
    warnings: tuple[str, ...] = ()

    def trace_to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "t", "objective", "gradient", "batch_size"])
            for row in self.trace:
                writer.writerow(
                    [
                        row.iteration,
                        repr(row.t),
                        repr(row.objective),
                        repr(row.gradient),
                        row.batch_size,
                    ]
                )


def _lse(v: np.ndarray):
    """logsumexp that preserves the input dtype (works for longdouble)."""
    m = np.max(v)
    if not np.isfinite(m):
        return m  # all -inf, or a stray inf propagates
    return m + np.log(np.sum(np.exp(v - m)))


def _exponents(r: np.ndarray, mode: str, alpha, beta, t):
    if mode == "right":
        return np.clip(r - t, 0, None) / (alpha * (1 - beta))
    return -np.clip(t - r, 0, None) / (alpha * beta)


def objective(problem: ThresholdProblem, t: float, dtype=np.float64) -> float:
    """Scalar dual objective at t, computed in log space.

    ``dtype=np.longdouble`` runs the accumulation in extended precision,
    which finite-difference curvature probes need to keep rounding noise
    below their tolerances.
    """
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    r = problem.rewards.astype(dtype, copy=False)
    z = _exponents(r, problem.mode, dtype(problem.alpha), dtype(problem.beta), dtype(t))
    val = _lse(problem.log_weights.astype(dtype, copy=False) + z)
    out = dtype(t) + dtype(problem.alpha) * val
    if not np.isfinite(out):
        raise NumericFailure("dual objective evaluation overflowed")
    # keep the extended dtype for FD probing; plain float for the default
    return float(out) if dtype is np.float64 else out


def gradient(problem: ThresholdProblem, t: float) -> float:
    """Closed-form full-batch gradient: 1 - (tilted tail mass) / tail level.

    The tail is {r > t} scaled by 1/(1-beta) in right mode and {r < t}
    scaled by 1/beta in left mode; the ratio of the two logsumexps is the
    tail probability under the tilted batch.
    """
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    r = problem.rewards
    z = problem.log_weights + _exponents(r, problem.mode, problem.alpha, problem.beta, t)
    if problem.mode == "right":
        mask, scale = r > t, 1.0 - problem.beta
    else:
        mask, scale = r < t, problem.beta
    denom = _lse(z)
    num = _lse(z[mask]) if mask.any() else -np.inf
    g = 1.0 - math.exp(num - denom) / scale
    if not np.isfinite(g):
        raise NumericFailure("gradient evaluation overflowed")
    return g


def _minibatch_gradient(rb: np.ndarray, mode: str, alpha: float, beta: float, t: float):
    """Ratio gradient estimator on uniform minibatches; rows are batches."""
    rb = np.atleast_2d(rb)
    z = _exponents(rb, mode, alpha, beta, t)
    if mode == "right":
        mask, scale = rb > t, 1.0 - beta
    else:
        mask, scale = rb < t, beta
    zmax = z.max(axis=1, keepdims=True)
    expz = np.exp(z - zmax)
    denom = expz.sum(axis=1)
    num = (expz * mask).sum(axis=1)
    out = 1.0 - (num / denom) / scale
    return out if out.size > 1 else float(out[0])


def _project(t: float, lo: float, hi: float) -> float:
    return min(max(t, lo), hi)


def _default_start(problem: ThresholdProblem) -> float:
    """Empirical beta-quantile of the batch: cheap and inside the data range."""
    return risk.var_beta(problem.rewards, problem.data.weights(), problem.beta)


def _polish_stationary(problem: ThresholdProblem, t0: float, width: float) -> float:
    """Refine a near-stationary point by bisecting the monotone batch gradient.

    In right mode the gradient is nondecreasing in t, in left mode
    nonincreasing; returns whichever candidate has the smaller |gradient|,
    so a kink minimizer can never make the result worse than t0.
    """
    lo_i, hi_i = problem.interval
    sgn = 1.0 if problem.mode == "right" else -1.0

    def f(t: float) -> float:
        return sgn * gradient(problem, t)

    f0 = f(t0)
    if f0 == 0.0:
        return t0
    w = max(width, 1e-9 * problem.diameter)
    lo, hi = t0, t0
    flo, fhi = f0, f0
    for _ in range(64):
        if f0 > 0:
            lo = max(lo_i, t0 - w)
            flo = f(lo)
            if flo <= 0 or lo == lo_i:
                hi, fhi = t0, f0
                break
        else:
            hi = min(hi_i, t0 + w)
            fhi = f(hi)
            if fhi >= 0 or hi == hi_i:
                lo, flo = t0, f0
                break
        w *= 2.0
    if flo > 0 or fhi < 0:
        return t0  # no sign change inside the interval; keep the input
    best_t, best_f = (lo, abs(flo)) if abs(flo) < abs(fhi) else (hi, abs(fhi))
    while hi - lo > 4.0 * np.finfo(float).eps * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if abs(fm) < best_f:
            best_t, best_f = mid, abs(fm)
        if fm == 0.0:
            break
        if fm < 0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return best_t if best_f <= abs(f0) else t0


def solve_golden_section(
    problem: ThresholdProblem, tol: float | None = None, polish: bool = True
) -> ThresholdResult:
    """Reference solver: golden-section search on the unimodal dual objective.

    Left mode maximizes by minimizing the negated objective. A final
    gradient-bisection polish pins the stationary point near machine
    precision; the stationarity-based consistency checks rely on that.
    """
    lo, hi = problem.interval
    if tol is None:
        tol = 1e-8 * (hi - lo)
    if not tol > 0:
        raise ValueError("tol must be positive")
    sgn = 1.0 if problem.mode == "right" else -1.0

    def h(t: float) -> float:
        return sgn * objective(problem, t)

    a, b = lo, hi
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    hc, hd = h(c), h(d)
    trace: list[TraceRow] = []
    it = 0
    while b - a > tol:
        it += 1
        if hc < hd:
            b, d, hd = d, c, hc
            c = b - _INV_GOLDEN * (b - a)
            hc = h(c)
        else:
            a, c, hc = c, d, hd
            d = a + _INV_GOLDEN * (b - a)
            hd = h(d)
        tm = 0.5 * (a + b)
        trace.append(
            TraceRow(it, tm, objective(problem, tm), gradient(problem, tm), len(problem.data))
        )
    t_hat = 0.5 * (a + b)
    if polish:
        t_hat = _polish_stationary(problem, t_hat, max(tol, 1e-7 * problem.diameter))
    g_hat = gradient(problem, t_hat)
    trace.append(TraceRow(it + 1, t_hat, objective(problem, t_hat), g_hat, len(problem.data)))
    return ThresholdResult(
        t_star=t_hat,
        objective_value=objective(problem, t_hat),
        trace=tuple(trace),
        method="golden_section",
        gradient_at_solution=g_hat,
    )


def _step_cap(problem: ThresholdProblem) -> float:
    return 1.0 / (4.0 * problem.smoothness_bound)


def solve_pgd(
    problem: ThresholdProblem,
    step: float | None = None,
    iters: int = 500,
    t0: float | None = None,
) -> ThresholdResult:
    """Full-batch projected gradient: descent in right mode, ascent in left."""
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    cap = _step_cap(problem)
    if step is None:
        step = cap
    if not step > 0:
        raise ValueError("step must be positive")
    warnings = ()
    if step > cap * (1.0 + 1e-12):
        warnings = (f"step {step:g} exceeds the smoothness-safe cap {cap:g}",)
    lo, hi = problem.interval
    t = _project(float(_default_start(problem) if t0 is None else t0), lo, hi)
    sgn = -1.0 if problem.mode == "right" else 1.0
    trace: list[TraceRow] = []
    for k in range(iters):
        g = gradient(problem, t)
        trace.append(TraceRow(k, t, objective(problem, t), g, len(problem.data)))
        t = _project(t + sgn * step * g, lo, hi)
    g = gradient(problem, t)
    trace.append(TraceRow(iters, t, objective(problem, t), g, len(problem.data)))
    return ThresholdResult(
        t_star=t,
        objective_value=objective(problem, t),
        trace=tuple(trace),
        method="pgd",
        gradient_at_solution=g,
        warnings=warnings,
    )


def solve_biased_sgd(
    problem: ThresholdProblem,
    batch_size: int,
    iters: int,
    step: float | None = None,
    seed: int = 0,
    t0: float | None = None,
    record_every: int = 1,
) -> ThresholdResult:
    """Projected SGD on the self-normalized minibatch ratio gradient.

    Minibatches are drawn with replacement from the offline batch. Indices
    are generated in fixed 256-wide lanes from a single seeded stream, so
    runs that differ only in batch size consume the stream identically and
    share per-step index prefixes (useful for paired comparisons). A batch
    covering the whole data set degenerates to the deterministic full-batch
    iteration. Returns the uniform average of the visited iterates, with the
    final point and per-step minibatch gradients in the trace.
    """
    n = len(problem.data)
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    cap = _step_cap(problem)
    if step is None:
        step = min(cap, problem.diameter / math.sqrt(iters))
    if not step > 0:
        raise ValueError("step must be positive")
    warnings = ()
    if step > cap * (1.0 + 1e-12):
        warnings = (f"step {step:g} exceeds the smoothness-safe cap {cap:g}",)
    lo, hi = problem.interval
    t = _project(float(_default_start(problem) if t0 is None else t0), lo, hi)
    sgn = -1.0 if problem.mode == "right" else 1.0
    r = problem.rewards
    uniform = problem.data.log_weights is None
    probs = None if uniform else problem.data.weights()
    full = batch_size >= n
    rng = np.random.default_rng(seed)
    lanes_per_step = -(-batch_size // _INDEX_LANE)
    chunk_steps = max(1, 4096 // lanes_per_step)
    block = None
    trace: list[TraceRow] = []
    tsum = 0.0
    for k in range(iters):
        tsum += t
        if full:
            g = gradient(problem, t)
            rb = None
        else:
            j = k % chunk_steps
            if j == 0:
                m = min(chunk_steps, iters - k)
                shape = (m * lanes_per_step, _INDEX_LANE)
                if uniform:
                    block = rng.integers(0, n, shape)
                else:
                    block = rng.choice(n, size=shape, p=probs)
            lanes = block[j * lanes_per_step : (j + 1) * lanes_per_step]
            rb = r[lanes.ravel()[:batch_size]]
            g = _minibatch_gradient(rb, problem.mode, problem.alpha, problem.beta, t)
        if k % record_every == 0:
            if full:
                obj = objective(problem, t)
            else:
                z = _exponents(rb, problem.mode, problem.alpha, problem.beta, t)
                obj = float(t + problem.alpha * (_lse(z) - math.log(batch_size)))
            trace.append(TraceRow(k, t, obj, g, n if full else batch_size))
        t = _project(t + sgn * step * g, lo, hi)
    t_bar = tsum / iters
    return ThresholdResult(
        t_star=t_bar,
        objective_value=objective(problem, t_bar),
        trace=tuple(trace),
        method="biased_sgd",
        averaged_iterate=t_bar,
        gradient_at_solution=gradient(problem, t_bar),
        warnings=warnings,
    )


class EstimatorStudyRow(NamedTuple):
    batch_size: int
    bias: float
    variance: float
    trials: int


def estimator_bias_variance_study(
    problem: ThresholdProblem,
    t: float,
    batch_sizes,
    trials: int,
    seed: int = 0,
    max_chunk_elems: int = 1 << 22,
) -> list[EstimatorStudyRow]:
    """Monte Carlo bias and variance of the minibatch ratio gradient at fixed t.

    Bias is measured against the full-batch gradient on ``problem.data``,
    i.e. minibatches are i.i.d. draws from the batch's own empirical
    distribution, so the full-batch value is the exact population gradient.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    g_ref = gradient(problem, t)
    n = len(problem.data)
    r = problem.rewards
    uniform = problem.data.log_weights is None
    probs = None if uniform else problem.data.weights()
    rows = []
    for batch_size in batch_sizes:
        batch_size = int(batch_size)
        if batch_size < 2:
            raise ValueError("batch sizes must be >= 2")
        rng = np.random.default_rng(np.random.SeedSequence((seed, batch_size)))
        vals = np.empty(trials)
        chunk = max(1, max_chunk_elems // batch_size)
        filled = 0
        while filled < trials:
            m = min(chunk, trials - filled)
            if uniform:
                idx = rng.integers(0, n, (m, batch_size))
            else:
                idx = rng.choice(n, size=(m, batch_size), p=probs)
            vals[filled : filled + m] = _minibatch_gradient(
                r[idx], problem.mode, problem.alpha, problem.beta, t
            )
            filled += m
        rows.append(
            EstimatorStudyRow(
                batch_size=batch_size,
                bias=float(vals.mean() - g_ref),
                variance=float(vals.var(ddof=1)),
                trials=trials,
            )
        )
    return rows


def study_to_csv(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "bias", "variance", "trials"])
        for row in rows:
            writer.writerow([row.batch_size, repr(row.bias), repr(row.variance), row.trials])
