"""Cross-cutting verification: lattice divergences, FD probes, sensitivity sweeps."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import GridDistribution, RewardField, SampleSet
from .threshold import ThresholdProblem, solve_golden_section
from .tilt import TiltSpec, tilt_grid

__all__ = [
    "SensitivityPoint",
    "finite_difference",
    "js_grid",
    "kl_grid",
    "sensitivity_scale",
    "sensitivity_sweep",
    "sweep_to_csv",
    "tv_grid",
]


def _check_lattice(p: GridDistribution, q: GridDistribution) -> None:
    if p.n != q.n or not (np.array_equal(p.lo, q.lo) and np.array_equal(p.hi, q.hi)):
        raise ValueError("lattice mismatch: distributions live on different grids")


def _rel_entropy(lp: np.ndarray, lq: np.ndarray) -> float:
    mp = np.exp(lp)
    mask = mp > 0
    return float(np.sum(mp[mask] * (lp[mask] - lq[mask])))


def kl_grid(p: GridDistribution, q: GridDistribution) -> float:
    """KL(p || q) in nats on a shared lattice; zero-mass cells of p contribute 0."""
    _check_lattice(p, q)
    return max(_rel_entropy(p.log_mass, q.log_mass), 0.0)


def js_grid(p: GridDistribution, q: GridDistribution) -> float:
    """Jensen-Shannon divergence in nats (midpoint mixture); at most log 2."""
    _check_lattice(p, q)
    lm = np.logaddexp(p.log_mass, q.log_mass) - math.log(2.0)
    return max(0.5 * (_rel_entropy(p.log_mass, lm) + _rel_entropy(q.log_mass, lm)), 0.0)


def tv_grid(p: GridDistribution, q: GridDistribution) -> float:
    """Total variation: half the summed absolute cell-mass difference."""
    _check_lattice(p, q)
    return 0.5 * float(np.abs(p.masses() - q.masses()).sum())


def finite_difference(f, t: float, h: float, order: int = 1) -> float:
    """Central finite difference of first or second order."""
    if not h > 0:
        raise ValueError("h must be positive")
    if order == 1:
        return (f(t + h) - f(t - h)) / (2.0 * h)
    if order == 2:
        return (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h)
    raise ValueError("order must be 1 or 2")


def sensitivity_scale(mode: str, alpha: float, beta: float) -> float:
    """Tilt rate governing threshold sensitivity: a(1-b) right, a*b left."""
    mode = str(mode).lower()
    if mode == "right":
        return alpha * (1.0 - beta)
    if mode == "left":
        return alpha * beta
    raise ValueError("mode must be 'right' or 'left'")


@dataclass(frozen=True)
class SensitivityPoint:
    """One sweep point: measured KL against the 2*delta/scale bound.

    ``kl_measured`` is the worse of the two signed perturbations t* +/- delta.
    ``symmetric_bound_holds`` records whether the bound with scale a(1-b)
    would also hold in left mode (where the sweep asserts the a*b scale).
    """

    mode: str
    alpha: float
    beta: float
    delta: float
    kl_measured: float
    kl_bound: float
    kl_plus: float
    kl_minus: float
    symmetric_bound_holds: bool


def _sweep_cell(
    prior: GridDistribution,
    reward: RewardField,
    mode: str,
    alpha: float,
    beta: float,
    deltas,
) -> list[SensitivityPoint]:
    problem = ThresholdProblem(mode, alpha, beta, SampleSet.from_grid(prior, reward))
    t_star = solve_golden_section(problem).t_star
    p_star = tilt_grid(prior, reward, TiltSpec(mode, alpha, beta, t_star))
    lam = sensitivity_scale(mode, alpha, beta)
    points = []
    for delta in deltas:
        delta = float(delta)
        if delta < 0:
            raise ValueError("deltas must be nonnegative")
        kl_plus = kl_grid(p_star, tilt_grid(prior, reward, TiltSpec(mode, alpha, beta, t_star + delta)))
        kl_minus = kl_grid(p_star, tilt_grid(prior, reward, TiltSpec(mode, alpha, beta, t_star - delta)))
        measured = max(kl_plus, kl_minus)
        points.append(
            SensitivityPoint(
                mode=mode,
                alpha=float(alpha),
                beta=float(beta),
                delta=delta,
                kl_measured=measured,
                kl_bound=2.0 * delta / lam,
                kl_plus=kl_plus,
                kl_minus=kl_minus,
                symmetric_bound_holds=bool(
                    measured <= 2.0 * delta / (alpha * (1.0 - beta)) + 1e-9
                ),
            )
        )
    return points


def sensitivity_sweep(
    prior: GridDistribution,
    reward: RewardField,
    alpha_list,
    beta_list,
    delta_list,
    mode: str,
    workers: int = 1,
) -> list[SensitivityPoint]:
    """Exact-lattice sensitivity of the tilted target to threshold error.

    For each (alpha, beta): build the target at the optimized threshold, then
    perturbed targets at t* +/- delta, and record KL(target || perturbed)
    next to the bound 2*delta/scale. Cells are independent; ``workers`` > 1
    evaluates them in a thread pool.
    """
    cells = [(a, b) for a in alpha_list for b in beta_list]
    if not cells or len(list(delta_list)) == 0:
        raise ValueError("alpha_list, beta_list and delta_list must be nonempty")
    deltas = [float(d) for d in delta_list]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(
                pool.map(lambda ab: _sweep_cell(prior, reward, mode, ab[0], ab[1], deltas), cells)
            )
    else:
        chunks = [_sweep_cell(prior, reward, mode, a, b, deltas) for a, b in cells]
    return [pt for chunk in chunks for pt in chunk]


def sweep_to_csv(points, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "alpha", "beta", "delta", "kl_measured", "kl_bound"])
        for pt in points:
            writer.writerow(
                [pt.mode, repr(pt.alpha), repr(pt.beta), repr(pt.delta),
                 repr(pt.kl_measured), repr(pt.kl_bound)]
            )
