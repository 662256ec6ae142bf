"""Exact target distribution, goodness-of-fit, and summary metrics.

The reward landscape is fully enumerable here, so the target p*(x) = R(x)/Z,
its mean Z-weighted reward, and the sampler's exact distribution (via the
forward DP in `policy`) are all computed without approximation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .policy import forward_dp

AD_CDF_CLAMP = 1e-10


@dataclass
class TargetDistribution:
    """p*(x) = R(x)/Z over the enumerated terminal set, in table order."""

    rewards: np.ndarray
    probs: np.ndarray
    Z: float
    target_mean: float
    # Distinct reward levels ascending, their pmf under p*, and cumulative
    # mass padded with a leading zero (level_cum[i] = mass strictly below
    # levels[i], level_cum[-1] = 1).
    levels: np.ndarray = field(repr=False)
    level_pmf: np.ndarray = field(repr=False)
    level_cum: np.ndarray = field(repr=False)
    mode_positions: frozenset = field(repr=False)

    def midpoint_cdf(self, r):
        """F~(r) = P(R < r) + 0.5 P(R = r) under p*, clamped away from 0/1."""
        r = np.asarray(r, dtype=np.float64)
        i = np.searchsorted(self.levels, r, side="left")
        below = self.level_cum[i]
        safe = np.minimum(i, self.levels.size - 1)
        exact = np.where(
            (i < self.levels.size) & (self.levels[safe] == r),
            self.level_pmf[safe],
            0.0,
        )
        return np.clip(below + 0.5 * exact, AD_CDF_CLAMP, 1.0 - AD_CDF_CLAMP)


def build_target(table, rewardfn):
    """Enumerate every terminal of the tabulated env and build p*."""
    rewards = rewardfn.many(table.terminal_states())
    if (rewards <= 0).any():
        bad = int(np.argmin(rewards))
        raise ValueError(f"nonpositive reward for terminal {table.terminal_states()[bad]!r}")
    Z = float(rewards.sum())
    probs = rewards / Z
    target_mean = float(rewards @ probs)
    levels, inv = np.unique(rewards, return_inverse=True)
    level_pmf = np.zeros(levels.size)
    np.add.at(level_pmf, inv, probs)
    level_cum = np.concatenate([[0.0], np.cumsum(level_pmf)])
    n_modes = math.ceil(0.005 * rewards.size)
    order = np.lexsort((np.arange(rewards.size), -rewards))
    modes = frozenset(order[:n_modes].tolist())
    return TargetDistribution(
        rewards=rewards,
        probs=probs,
        Z=Z,
        target_mean=target_mean,
        levels=levels,
        level_pmf=level_pmf,
        level_cum=level_cum,
        mode_positions=modes,
    )


def exact_sampler_distribution(head, table):
    """p_theta(x) for every terminal, by exact DP in level order."""
    probs, _ = forward_dp(head, table)
    return probs


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def anderson_darling(sample_rewards, target):
    """One-sample A^2 of the rewards against the target's reward distribution.

    Ties are everywhere in a discrete landscape, so the test uses the
    midpoint CDF F~(r) = P(R < r) + 0.5 P(R = r), clamped to
    [1e-10, 1 - 1e-10] before the logs.
    """
    r = np.sort(np.asarray(sample_rewards, dtype=np.float64))
    n = r.size
    if n == 0:
        raise ValueError("empty sample")
    if n < 10:
        raise ValueError(f"need at least 10 samples, got {n}")
    f = target.midpoint_cdf(r)
    i = np.arange(1, n + 1)
    s = (2 * i - 1) @ (np.log(f) + np.log(1.0 - f[::-1]))
    return float(-n - s / n)


def modes_found(dataset, table, target):
    """How many of the target's top-0.5% terminals the dataset has seen."""
    hits = 0
    for x in dataset.payloads:
        pos = table.terminal_pos[table.state_idx(x)]
        if pos in target.mode_positions:
            hits += 1
    return hits


def _hamming(a, b):
    return sum(1 for u, v in zip(a, b) if u != v) / len(a)


def _multiset_jaccard_distance(a, b):
    lo = sum(min(u, v) for u, v in zip(a, b))
    hi = sum(max(u, v) for u, v in zip(a, b))
    return 1.0 - (lo / hi if hi else 1.0)


def diversity(payloads, rewards, kind, top=100):
    """Mean pairwise distance among the top-`top` samples by reward.

    Strings use normalized Hamming distance; bags 1 - multiset Jaccard.
    """
    if len(payloads) == 0:
        return 0.0
    order = np.argsort(-np.asarray(rewards), kind="stable")[:top]
    chosen = [payloads[i] for i in order]
    if len(chosen) < 2:
        return 0.0
    dist = _multiset_jaccard_distance if kind == "bag" else _hamming
    total = 0.0
    pairs = 0
    for i in range(len(chosen)):
        for j in range(i + 1, len(chosen)):
            total += dist(chosen[i], chosen[j])
            pairs += 1
    return total / pairs


def summary_metrics(window_payloads, window_rewards, target, dataset, table):
    """The per-evaluation metric fields derived from the monitoring window."""
    sample_mean = float(np.mean(window_rewards))
    return {
        "sample_mean_reward": sample_mean,
        "target_mean_reward": target.target_mean,
        "rel_mean_error": 100.0 * sample_mean / target.target_mean,
        "ad_statistic": anderson_darling(window_rewards, target),
        "modes_found": modes_found(dataset, table, target),
        "diversity": diversity(window_payloads, window_rewards, table.env.kind),
    }


def rounds_to_match_target(rows, target_mean):
    """First evaluation round whose windowed mean reaches the target mean."""
    for row in rows:
        if row["sample_mean_reward"] >= target_mean:
            return row["round"]
    return None
