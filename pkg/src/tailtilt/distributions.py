"""Distributions over R^d: weighted sample clouds and 2D lattice PMFs.

Weights live in log space throughout; normalization goes through logsumexp so
that aggressive exponential tilts cannot overflow.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "DegenerateDistributionError",
    "GaussianPrior",
    "GridDistribution",
    "RewardField",
    "SampleSet",
    "grid_from_density",
    "kde_pdf_1d",
    "reweight",
    "sample_prior",
]

# accepted normalization drift when validating an already-built lattice
_NORMALIZATION_TOL = 1e-8


class DegenerateDistributionError(ValueError):
    """A construction produced a distribution with no usable mass."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("points must form an (n, d) array")
    return pts


@dataclass(frozen=True)
class SampleSet:
    """Point cloud with optional rewards and unnormalized log weights.

    ``log_weights=None`` means uniform. Instances are treated as immutable;
    the one exception is the reward cache filled in place by
    ``ensure_rewards`` so repeated threshold sweeps reuse a single
    evaluation of the reward field.
    """

    points: np.ndarray
    rewards: np.ndarray | None = None
    log_weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = _as_points(self.points)
        if len(pts) < 1:
            raise ValueError("a SampleSet needs at least one point")
        object.__setattr__(self, "points", pts)
        if self.rewards is not None:
            r = np.asarray(self.rewards, dtype=float)
            if r.shape != (len(pts),):
                raise ValueError("rewards length must match points")
            if not np.all(np.isfinite(r)):
                raise ValueError("rewards must be finite")
            object.__setattr__(self, "rewards", r)
        if self.log_weights is not None:
            lw = np.asarray(self.log_weights, dtype=float)
            if lw.shape != (len(pts),):
                raise ValueError("log_weights length must match points")
            if np.any(np.isnan(lw)) or np.any(lw == np.inf):
                raise ValueError("log_weights must be finite or -inf")
            if not np.any(np.isfinite(lw)):
                raise DegenerateDistributionError("all log weights are -inf")
            object.__setattr__(self, "log_weights", lw)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def normalized_log_weights(self) -> np.ndarray:
        if self.log_weights is None:
            return np.full(len(self), -math.log(len(self)))
        return self.log_weights - logsumexp(self.log_weights)

    def weights(self) -> np.ndarray:
        return np.exp(self.normalized_log_weights())

    def normalize(self) -> "SampleSet":
        return SampleSet(self.points, self.rewards, self.normalized_log_weights())

    def ensure_rewards(self, reward: "RewardField") -> np.ndarray:
        """Evaluate the reward field once and cache the values on this set."""
        if self.rewards is None:
            vals = np.asarray(reward(self.points), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ValueError("reward field produced non-finite values")
            object.__setattr__(self, "rewards", vals)
        return self.rewards

    def effective_sample_size(self) -> float:
        w = self.weights()
        return 1.0 / float(np.sum(w * w))

    @classmethod
    def from_grid(cls, grid: "GridDistribution", reward: "RewardField") -> "SampleSet":
        """View a lattice PMF as a weighted sample set at the cell centers."""
        pts = grid.centers()
        vals = np.asarray(reward(pts), dtype=float)
        return cls(pts, rewards=vals, log_weights=grid.log_mass.ravel().copy())

    def to_csv(self, path) -> None:
        lw = self.normalized_log_weights()
        header = [f"x{i + 1}" for i in range(self.dim)] + ["reward", "log_weight"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self)):
                row = [repr(float(v)) for v in self.points[i]]
                row.append("" if self.rewards is None else repr(float(self.rewards[i])))
                row.append(repr(float(lw[i])))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[-2:] != ["reward", "log_weight"]:
                raise ValueError("unexpected sample CSV header")
            dim = len(header) - 2
            pts, rewards, lws = [], [], []
            for row in reader:
                pts.append([float(v) for v in row[:dim]])
                rewards.append(None if row[dim] == "" else float(row[dim]))
                lws.append(float(row[dim + 1]))
        has_rewards = [r is not None for r in rewards]
        if any(has_rewards) and not all(has_rewards):
            raise ValueError("reward column must be fully present or fully empty")
        return cls(
            np.asarray(pts),
            np.asarray(rewards, dtype=float) if all(has_rewards) else None,
            np.asarray(lws),
        )


@dataclass(frozen=True)
class GridDistribution:
    """Normalized log PMF on a uniform 2D lattice of cell centers."""

    lo: np.ndarray
    hi: np.ndarray
    n: int
    log_mass: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != (2,) or hi.shape != (2,):
            raise ValueError("lo and hi must be length-2 vectors")
        if not np.all(hi > lo):
            raise ValueError("hi must exceed lo on every axis")
        if int(self.n) < 2:
            raise ValueError("grid resolution n must be >= 2")
        lm = np.asarray(self.log_mass, dtype=float)
        if lm.shape != (self.n, self.n):
            raise ValueError("log_mass must have shape (n, n)")
        if np.any(np.isnan(lm)) or np.any(lm == np.inf):
            raise ValueError("log_mass must be finite or -inf")
        total = logsumexp(lm)
        if not np.isfinite(total):
            raise DegenerateDistributionError("lattice carries no mass")
        if abs(total) > _NORMALIZATION_TOL:
            raise ValueError(f"log_mass is not normalized (logsumexp = {total:.3e})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "log_mass", lm - total)

    @classmethod
    def from_unnormalized(cls, lo, hi, n, log_mass) -> "GridDistribution":
        lm = np.asarray(log_mass, dtype=float)
        total = logsumexp(lm)
        if not np.isfinite(total):
            raise DegenerateDistributionError("lattice carries no mass")
        return cls(lo, hi, n, lm - total)

    def axis_centers(self) -> tuple[np.ndarray, np.ndarray]:
        steps = (self.hi - self.lo) / self.n
        return tuple(
            self.lo[k] + (np.arange(self.n) + 0.5) * steps[k] for k in range(2)
        )

    def centers(self) -> np.ndarray:
        """Cell centers as an (n*n, 2) array in row-major order."""
        x0, x1 = self.axis_centers()
        g0, g1 = np.meshgrid(x0, x1, indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])

    def cell_area(self) -> float:
        return float(np.prod((self.hi - self.lo) / self.n))

    def masses(self) -> np.ndarray:
        return np.exp(self.log_mass)

    def expectation(self, values) -> float:
        vals = np.asarray(values, dtype=float).reshape(self.n, self.n)
        return float(np.sum(self.masses() * vals))

    def to_json(self, path) -> None:
        payload = {
            "lo": [float(v) for v in self.lo],
            "hi": [float(v) for v in self.hi],
            "n": self.n,
            "log_mass": [float(v) for v in self.log_mass.ravel()],
        }
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "GridDistribution":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in ("lo", "hi", "n", "log_mass"):
            if key not in payload:
                raise ValueError(f"grid JSON is missing '{key}'")
        n = int(payload["n"])
        lm = np.asarray(payload["log_mass"], dtype=float)
        if lm.size != n * n:
            raise ValueError("grid JSON log_mass has the wrong length")
        return cls(payload["lo"], payload["hi"], n, lm.reshape(n, n))


@dataclass(frozen=True)
class RewardField:
    """Deterministic scalar reward r(x): linear, Gaussian bump, or table lookup."""

    kind: str
    scale: float = 1.0
    coeffs: np.ndarray | None = None
    mu: np.ndarray | None = None
    sigma: float | None = None
    table: np.ndarray | None = None
    table_lo: np.ndarray | None = None
    table_hi: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")
        if self.kind == "linear":
            if self.coeffs is None:
                raise ValueError("linear reward needs coeffs")
            object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        elif self.kind == "gaussian_bump":
            if self.mu is None or self.sigma is None:
                raise ValueError("gaussian_bump reward needs mu and sigma")
            if not self.sigma > 0:
                raise ValueError("gaussian_bump sigma must be positive")
            object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        elif self.kind == "tabulated":
            if self.table is None or self.table_lo is None or self.table_hi is None:
                raise ValueError("tabulated reward needs table, table_lo and table_hi")
            tbl = np.asarray(self.table, dtype=float)
            if tbl.ndim != 2:
                raise ValueError("table must be 2-dimensional")
            if not np.all(np.isfinite(tbl)):
                raise ValueError("table values must be finite")
            object.__setattr__(self, "table", tbl)
            object.__setattr__(self, "table_lo", np.asarray(self.table_lo, dtype=float))
            object.__setattr__(self, "table_hi", np.asarray(self.table_hi, dtype=float))
        else:
            raise ValueError(f"unknown reward kind '{self.kind}'")

    @classmethod
    def linear(cls, coeffs, scale: float = 1.0) -> "RewardField":
        return cls(kind="linear", coeffs=coeffs, scale=scale)

    @classmethod
    def gaussian_bump(cls, mu, sigma: float, scale: float = 1.0) -> "RewardField":
        return cls(kind="gaussian_bump", mu=mu, sigma=sigma, scale=scale)

    @classmethod
    def tabulated(cls, table, lo, hi, scale: float = 1.0) -> "RewardField":
        return cls(kind="tabulated", table=table, table_lo=lo, table_hi=hi, scale=scale)

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        if scalar:
            pts = pts[None, :]  # a single d-dimensional point
        elif pts.ndim != 2:
            raise ValueError("points must form an (n, d) array")
        if self.kind == "linear":
            vals = pts @ self.coeffs
        elif self.kind == "gaussian_bump":
            d2 = np.sum((pts - self.mu) ** 2, axis=1)
            vals = np.exp(-0.5 * d2 / self.sigma**2)
        else:
            shape = np.asarray(self.table.shape)
            step = (self.table_hi - self.table_lo) / shape
            idx = np.floor((pts - self.table_lo) / step).astype(int)
            idx = np.clip(idx, 0, shape - 1)
            vals = self.table[idx[:, 0], idx[:, 1]]
        vals = self.scale * vals
        return float(vals[0]) if scalar else vals

    def to_config(self) -> dict:
        cfg: dict = {"kind": self.kind, "scale": self.scale}
        if self.kind == "linear":
            cfg["coeffs"] = [float(v) for v in self.coeffs]
        elif self.kind == "gaussian_bump":
            cfg["mu"] = [float(v) for v in self.mu]
            cfg["sigma"] = float(self.sigma)
        else:
            cfg["table"] = [[float(v) for v in row] for row in self.table]
            cfg["lo"] = [float(v) for v in self.table_lo]
            cfg["hi"] = [float(v) for v in self.table_hi]
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "RewardField":
        kind = cfg.get("kind")
        scale = float(cfg.get("scale", 1.0))
        if kind == "linear":
            return cls.linear(cfg["coeffs"], scale)
        if kind == "gaussian_bump":
            return cls.gaussian_bump(cfg["mu"], float(cfg["sigma"]), scale)
        if kind == "tabulated":
            return cls.tabulated(cfg["table"], cfg["lo"], cfg["hi"], scale)
        raise ValueError(f"unknown reward kind '{kind}'")


@dataclass(frozen=True)
class GaussianPrior:
    """Axis-aligned Gaussian with diagonal covariance."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        var = np.asarray(self.variance, dtype=float).reshape(-1)
        if mean.shape != var.shape:
            raise ValueError("mean and variance must have the same length")
        if not np.all(var > 0):
            raise ValueError("all variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def log_density(self, points) -> np.ndarray:
        pts = _as_points(points)
        z2 = (pts - self.mean) ** 2 / self.variance
        const = -0.5 * np.sum(np.log(2.0 * np.pi * self.variance))
        return const - 0.5 * np.sum(z2, axis=1)

    def density(self, points) -> np.ndarray:
        return np.exp(self.log_density(points))


def sample_prior(prior: GaussianPrior, n: int, seed: int) -> SampleSet:
    """Draw n i.i.d. prior samples with uniform weights; fixed seed, fixed set."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = prior.mean + rng.standard_normal((int(n), prior.dim)) * np.sqrt(prior.variance)
    return SampleSet(pts)


def grid_from_density(lo, hi, n, density: Callable) -> GridDistribution:
    """Lattice PMF with cell mass proportional to density(center) * cell area."""
    lo = np.asarray(lo, dtype=float).reshape(-1)
    hi = np.asarray(hi, dtype=float).reshape(-1)
    n = int(n)
    steps = (hi - lo) / n
    axes = [lo[k] + (np.arange(n) + 0.5) * steps[k] for k in range(2)]
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    pts = np.column_stack([g0.ravel(), g1.ravel()])
    vals = np.asarray(density(pts), dtype=float).reshape(n, n)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("density must be finite and nonnegative on the domain")
    if not np.any(vals > 0):
        raise DegenerateDistributionError("density vanishes on the whole domain")
    with np.errstate(divide="ignore"):
        lm = np.log(vals) + math.log(float(np.prod(steps)))
    return GridDistribution.from_unnormalized(lo, hi, n, lm)


def reweight(sample_set: SampleSet, log_tilt) -> SampleSet:
    """Multiply weights by exp(log_tilt(x)) and renormalize; points unchanged.

    ``log_tilt`` may be a callable on points or a precomputed array.
    """
    if callable(log_tilt):
        vals = np.asarray(log_tilt(sample_set.points), dtype=float)
    else:
        vals = np.asarray(log_tilt, dtype=float)
    if vals.shape != (len(sample_set),):
        raise ValueError("log tilt must produce one value per point")
    if not np.all(np.isfinite(vals)):
        raise ValueError("log tilt must be finite on all points")
    lw = sample_set.normalized_log_weights() + vals
    return SampleSet(sample_set.points, sample_set.rewards, lw - logsumexp(lw))


def kde_pdf_1d(values, weights, bandwidth_factor: float, eval_points) -> np.ndarray:
    """Weighted Gaussian KDE of scalar values at the given evaluation points.

    Bandwidth follows Scott's rule on the effective sample size,
    h = sigma_w * ess**(-1/5), multiplied by ``bandwidth_factor``.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("values must be nonempty")
    if not bandwidth_factor > 0:
        raise ValueError("bandwidth_factor must be positive")
    if weights is None:
        w = np.full(v.size, 1.0 / v.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != v.shape:
            raise ValueError("weights length must match values")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("zero total weight")
        w = w / total
    mean = float(np.dot(w, v))
    sigma = math.sqrt(max(float(np.dot(w, (v - mean) ** 2)), 0.0))
    if sigma == 0.0:
        sigma = 1.0  # point mass: any positive width keeps the kernel proper
    ess = 1.0 / float(np.sum(w * w))
    h = bandwidth_factor * sigma * ess ** (-0.2)
    x = np.asarray(eval_points, dtype=float).ravel()
    out = np.empty(x.size)
    chunk = max(1, (1 << 22) // max(v.size, 1))
    norm = h * math.sqrt(2.0 * math.pi)
    for start in range(0, x.size, chunk):
        stop = min(start + chunk, x.size)
        z = (x[start:stop, None] - v[None, :]) / h
        out[start:stop] = np.exp(-0.5 * z * z) @ w / norm
    return out
