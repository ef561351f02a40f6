"""Risk functionals on weighted scalar rewards: quantiles and tail means.

Quantiles interpolate linearly between weighted order statistics placed at
midpoint cumulative positions (c_k - w_k/2); the interpolated inverse CDF is
then continuous in both the weights and the level. CVaR splits the boundary
atom fractionally so that exactly the requested tail mass is averaged, which
makes the primal value agree with the dual threshold form on atomic data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "RiskReport",
    "dual_right_cvar",
    "inverse_cdf",
    "left_cvar",
    "right_cvar",
    "summarize",
    "var_beta",
]


def _clean(rewards, weights) -> tuple[np.ndarray, np.ndarray]:
    """Validate, normalize, drop zero-weight atoms, sort ascending by reward.

    Duplicate reward values are merged into single atoms so that results do
    not depend on the ordering of tied inputs.
    """
    r = np.asarray(rewards, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("empty reward set")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    if weights is None:
        w = np.full(r.size, 1.0 / r.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != r.shape:
            raise ValueError("weights length must match rewards")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        w = w / total
    keep = w > 0
    r, w = r[keep], w[keep]
    if r.size == 0:
        raise ValueError("weights sum to zero")
    distinct, inverse = np.unique(r, return_inverse=True)
    if distinct.size < r.size:
        w = np.bincount(inverse, weights=w, minlength=distinct.size)
        r = distinct
    else:
        order = np.argsort(r, kind="stable")
        r, w = r[order], w[order]
    return r, w


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    return beta


def var_beta(rewards, weights, beta: float) -> float:
    """Weighted beta-quantile with linear interpolation between order statistics."""
    beta = _check_beta(beta)
    r, w = _clean(rewards, weights)
    pos = np.cumsum(w) - 0.5 * w
    return float(np.interp(beta, pos, r))


def inverse_cdf(rewards, weights, q_grid) -> np.ndarray:
    """var_beta evaluated on a grid of levels; monotone by construction."""
    q = np.asarray(q_grid, dtype=float).ravel()
    if np.any(q <= 0) or np.any(q >= 1):
        raise ValueError("quantile levels must lie in (0, 1)")
    r, w = _clean(rewards, weights)
    pos = np.cumsum(w) - 0.5 * w
    return np.interp(q, pos, r)


def _tail_mean(r: np.ndarray, w: np.ndarray, tau: float) -> float:
    """Mean of the first atoms of (r, w) holding exactly mass tau, boundary split."""
    c = np.cumsum(w)
    tau = min(tau, float(c[-1]))
    k = min(int(np.searchsorted(c, tau, side="left")), len(c) - 1)
    take = w[: k + 1].copy()
    take[k] = tau - (c[k - 1] if k > 0 else 0.0)
    return float(np.dot(take, r[: k + 1]) / tau)


def right_cvar(rewards, weights, beta: float) -> float:
    """Mean of the top (1 - beta) probability mass of the reward distribution."""
    beta = _check_beta(beta)
    r, w = _clean(rewards, weights)
    return _tail_mean(r[::-1], w[::-1], 1.0 - beta)


def left_cvar(rewards, weights, beta: float) -> float:
    """Mean of the bottom beta probability mass of the reward distribution."""
    beta = _check_beta(beta)
    r, w = _clean(rewards, weights)
    return _tail_mean(r, w, beta)


def dual_right_cvar(rewards, weights, beta: float, t_grid=None) -> float:
    """Minimum over t of t + E[(r - t)+]/(1 - beta); oracle for right_cvar.

    The objective is piecewise linear with kinks only at the data values, so
    the default grid (the atoms themselves) attains the exact minimum. An
    explicit t_grid is accepted for independent cross-checks.
    """
    beta = _check_beta(beta)
    r, w = _clean(rewards, weights)
    if t_grid is None:
        ts = np.unique(r)
    else:
        ts = np.sort(np.asarray(t_grid, dtype=float).ravel())
        if ts.size == 0:
            raise ValueError("t_grid must be nonempty")
        if not np.all(np.isfinite(ts)):
            raise ValueError("t_grid must be finite")
    # suffix sums: mass and reward-mass strictly above each t
    cw = np.cumsum(w[::-1])[::-1]
    cwr = np.cumsum((w * r)[::-1])[::-1]
    idx = np.searchsorted(r, ts, side="right")
    tail_w = np.where(idx < r.size, np.take(cw, idx, mode="clip"), 0.0)
    tail_wr = np.where(idx < r.size, np.take(cwr, idx, mode="clip"), 0.0)
    obj = ts + (tail_wr - ts * tail_w) / (1.0 - beta)
    return float(obj.min())


@dataclass(frozen=True)
class RiskReport:
    """Summary risk metrics of one weighted reward sample."""

    mean_reward: float
    var_beta: float
    right_cvar: float
    left_cvar: float
    beta_right: float
    beta_left: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def summarize(rewards, weights, beta_right: float = 0.8, beta_left: float = 0.2) -> RiskReport:
    r, w = _clean(rewards, weights)
    return RiskReport(
        mean_reward=float(np.dot(w, r)),
        var_beta=var_beta(r, w, beta_right),
        right_cvar=right_cvar(r, w, beta_right),
        left_cvar=left_cvar(r, w, beta_left),
        beta_right=float(beta_right),
        beta_left=float(beta_left),
        n=int(np.asarray(rewards).size),
    )
