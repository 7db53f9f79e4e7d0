"""Comparison models: frame-fraction thresholding and a no-learning ablation.

Thresholding declares a category present when it shows up in a large enough
fraction of frames. The fixed-prior model runs the same exact MAP state
inference as the retrospective pass, but with every rate pinned at the
Beta prior's point estimate, so it has an error model without ever
learning one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DetectionStats,
    Observation,
    PriorConfig,
    VisualSystem,
    WorldState,
)
from .inference import retrospective_infer


@dataclass(frozen=True)
class ThresholdPolicy:
    """Presence rule: detection fraction >= theta (or > theta when strict)."""

    theta: float = 0.50
    strict: bool = False

    def __post_init__(self):
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError("theta must lie in [0, 1]")


def _stats(observation, num_categories) -> DetectionStats:
    if isinstance(observation, DetectionStats):
        return observation
    return DetectionStats.from_observation(observation, num_categories)


def threshold_infer(observation, policy: ThresholdPolicy = ThresholdPolicy(),
                    num_categories: int | None = None) -> WorldState:
    """Categories whose detection fraction clears the threshold.

    No prior is applied: the result may be empty or arbitrarily large.
    ``num_categories`` is only needed when passing a raw Observation.
    """
    stats = _stats(observation, num_categories)
    fraction = stats.counts / stats.frame_count
    if policy.strict:
        keep = fraction > policy.theta
    else:
        keep = fraction >= policy.theta - 1e-12  # guard k/F == theta roundoff
    return frozenset(np.nonzero(keep)[0].tolist())


def default_threshold_grid() -> np.ndarray:
    return np.round(np.arange(0, 101) * 0.01, 2)


def fit_threshold(stats_list, true_states, grid=None, strict: bool = False):
    """Supervised grid search for the accuracy-maximizing threshold.

    Unlike everything else here this explicitly needs ground truth. Returns
    (best theta, its mean exact-match accuracy); ties go to the smallest
    theta on the grid.
    """
    stats_list = list(stats_list)
    true_states = list(true_states)
    if not stats_list:
        raise ValueError("cannot fit a threshold on an empty corpus")
    if len(stats_list) != len(true_states):
        raise ValueError("observations and ground truth differ in length")
    if grid is None:
        grid = default_threshold_grid()

    num_categories = stats_list[0].num_categories
    fractions = np.array([s.counts / s.frame_count for s in stats_list])  # (N, C)
    present = np.zeros_like(fractions, dtype=bool)
    for i, w in enumerate(true_states):
        present[i, sorted(w)] = True

    best_theta, best_acc = None, -1.0
    for theta in grid:
        if strict:
            guess = fractions > theta
        else:
            guess = fractions >= theta - 1e-12
        acc = float(np.all(guess == present, axis=1).mean())
        if acc > best_acc + 1e-15:
            best_theta, best_acc = float(theta), acc
    return best_theta, best_acc


def fixed_prior_system(prior: PriorConfig, num_categories: int,
                       use_prior_mean: bool = False) -> VisualSystem:
    """Error model pinned at the Beta prior's MAP (or its mean, on request)."""
    value = prior.rate_mean if use_prior_mean else prior.rate_map
    return VisualSystem(fa=np.full(num_categories, value),
                        miss=np.full(num_categories, value))


def fixed_prior_infer(observations, prior: PriorConfig, num_categories: int,
                      use_prior_mean: bool = False) -> list:
    """Exact MAP state inference under the prior-pinned error model.

    This is the learning ablation: same machinery as the retrospective
    pass, but the rates never move off the prior's point estimate.
    """
    system = fixed_prior_system(prior, num_categories, use_prior_mean=use_prior_mean)
    return retrospective_infer(system, observations, prior, num_categories)
