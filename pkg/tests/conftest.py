from __future__ import annotations

import numpy as np
import pytest

from tailtilt import (
    GaussianPrior,
    RewardField,
    grid_from_density,
    sample_prior,
)


@pytest.fixture(scope="session")
def prior2d() -> GaussianPrior:
    return GaussianPrior([0.0, 0.0], [1.0, 1.0])


@pytest.fixture(scope="session")
def linear_reward() -> RewardField:
    return RewardField.linear([1.0, 1.0])


@pytest.fixture(scope="session")
def bump_reward() -> RewardField:
    return RewardField.gaussian_bump([2.0, 2.0], 0.8)


@pytest.fixture(scope="session")
def batch_100k(prior2d, linear_reward):
    s = sample_prior(prior2d, 100_000, 7)
    s.ensure_rewards(linear_reward)
    return s


@pytest.fixture(scope="session")
def batch_10k(prior2d, linear_reward):
    s = sample_prior(prior2d, 10_000, 3)
    s.ensure_rewards(linear_reward)
    return s


@pytest.fixture(scope="session")
def grid200(prior2d):
    return grid_from_density([-4.0, -4.0], [4.0, 4.0], 200, prior2d.density)


def quantized_linear_reward(cells: int = 8) -> RewardField:
    """Linear reward looked up on a coarse table: rewards become atoms."""
    edges = np.linspace(-4.0, 4.0, cells + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return RewardField.tabulated(centers[:, None] + centers[None, :], [-4, -4], [4, 4])
