"""Independent reference implementations used as test oracles.

Everything here recomputes quantities from first principles (per-percept
products, explicit enumeration, direct factorials) without reusing the
package's vectorized code paths, so agreement is meaningful.
"""

import math
from itertools import combinations

import numpy as np


def truncated_poisson_pmf_oracle(lam, lo, hi):
    """pmf over [lo, hi] via direct factorials."""
    raw = {n: math.exp(-lam) * lam ** n / math.factorial(n)
           for n in range(lo, hi + 1)}
    total = sum(raw.values())
    return {n: p / total for n, p in raw.items()}


def enumerate_states_oracle(num_categories, lo, hi):
    """All subsets with size in [lo, hi] sorted by presence bit-vector."""
    states = []
    for n in range(lo, min(hi, num_categories) + 1):
        states.extend(frozenset(c) for c in combinations(range(num_categories), n))

    def key(w):
        return tuple(1 if c in w else 0 for c in range(num_categories))

    return sorted(states, key=key)


def state_log_prior_oracle(world, lam, lo, hi, num_categories):
    pmf = truncated_poisson_pmf_oracle(lam, lo, hi)
    n = len(world)
    if n not in pmf:
        return -math.inf
    return math.log(pmf[n]) - math.log(math.comb(num_categories, n))


def percept_prob_oracle(percept, world, fa, miss):
    """P(percept | world, rates) as a plain per-category product."""
    p = 1.0
    for c in range(len(fa)):
        if c in world:
            p *= (1.0 - miss[c]) if c in percept else miss[c]
        else:
            p *= fa[c] if c in percept else (1.0 - fa[c])
    return p


def observation_loglik_oracle(percepts, world, fa, miss):
    """Sum of per-percept log probabilities (no sufficient statistics)."""
    total = 0.0
    for percept in percepts:
        p = percept_prob_oracle(percept, world, fa, miss)
        if p == 0.0:
            return -math.inf
        total += math.log(p)
    return total


def _logsumexp(values):
    peak = max(values)
    if peak == -math.inf:
        return -math.inf
    return peak + math.log(sum(math.exp(v - peak) for v in values))


def marginal_loglik_oracle(percepts, fa, miss, lam, lo, hi, num_categories):
    """log sum_w P(obs | w) P(w) by explicit enumeration."""
    terms = []
    for world in enumerate_states_oracle(num_categories, lo, hi):
        terms.append(observation_loglik_oracle(percepts, world, fa, miss)
                     + state_log_prior_oracle(world, lam, lo, hi, num_categories))
    return _logsumexp(terms)


def state_posterior_oracle(percepts, fa, miss, lam, lo, hi, num_categories):
    """Normalized posterior over the enumerated states, in oracle order."""
    states = enumerate_states_oracle(num_categories, lo, hi)
    logs = [observation_loglik_oracle(percepts, w, fa, miss)
            + state_log_prior_oracle(w, lam, lo, hi, num_categories)
            for w in states]
    norm = _logsumexp(logs)
    if norm == -math.inf:
        probs = [1.0 / len(states)] * len(states)
    else:
        probs = [math.exp(v - norm) for v in logs]
    return states, probs


def map_state_oracle(percepts, fa, miss, lam, lo, hi, num_categories):
    """Argmax of the state posterior; first state in bit order wins ties."""
    states, probs = state_posterior_oracle(percepts, fa, miss, lam, lo, hi,
                                           num_categories)
    best, best_p = states[0], probs[0]
    for w, p in zip(states[1:], probs[1:]):
        if p > best_p:
            best, best_p = w, p
    return best


def synthesize_stats_fast(n_obs, num_categories, rng, alpha=2.0, beta=10.0,
                          lam=1.0, count_lo=1, count_hi=5, f_lo=5, f_hi=15):
    """Vectorized draws from the generative process, as sufficient statistics.

    Independent of the package's render path: detection counts come straight
    from binomial draws. Returns (present, counts, frames); rates are fresh
    per observation, which matches corpus-wide marginal statistics.
    """
    pmf = truncated_poisson_pmf_oracle(lam, count_lo, count_hi)
    ns = rng.choice(list(pmf.keys()), p=list(pmf.values()), size=n_obs)
    order = np.argsort(rng.random((n_obs, num_categories)), axis=1)
    present = np.zeros((n_obs, num_categories), dtype=bool)
    rows = np.arange(n_obs)
    for j in range(int(ns.max())):
        sel = ns > j
        present[rows[sel], order[sel, j]] = True
    fa = rng.beta(alpha, beta, size=(n_obs, num_categories))
    miss = rng.beta(alpha, beta, size=(n_obs, num_categories))
    frames = rng.integers(f_lo, f_hi + 1, size=n_obs)
    p_detect = np.where(present, 1.0 - miss, fa)
    counts = rng.binomial(frames[:, None], p_detect)
    return present, counts, frames
