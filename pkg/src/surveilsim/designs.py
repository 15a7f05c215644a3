"""Testing strategies as per-agent probability vectors plus allocation rules.

A design produces a probability vector g over agents; an allocation function
turns it into at most k tests per day, either by ranking (top-k, random
tie-break) or by weighted sampling without replacement.  Alongside the test
assignment we compute each agent's realized inclusion probability, which is
what inverse-probability weighting and the targeting step divide by.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_CLIP = 1e-6


class PositivityError(ValueError):
    """A tested agent had zero assigned test probability."""


@dataclass
class TestRound:
    """One day's realized tests."""

    day: int
    design: str
    tested: np.ndarray        # bool, per agent
    results: np.ndarray       # bool latent status of tested agents (parallel to tested_ids)
    tested_ids: np.ndarray
    g_used: np.ndarray        # realized per-agent inclusion probability


@dataclass
class DesignContext:
    """Observable state a design may condition on when assigning probabilities."""

    n: int
    symptomatic: np.ndarray               # currently shows symptoms (Is)
    latent: np.ndarray                    # true Y^l; only the perfect benchmark reads it
    isolated: np.ndarray
    traced: np.ndarray                    # known network of yesterday's positives
    risk_predictions: dict[str, np.ndarray] = field(default_factory=dict)
    fallback_events: list[str] = field(default_factory=list)


def design_probabilities(kind: str, learner: str, ctx: DesignContext) -> np.ndarray:
    """Per-agent test probability vector g for one design.

    Isolated agents are never eligible: a positive test already removed them,
    so re-testing would only burn budget.
    """
    eligible = ~ctx.isolated
    if kind == "no_testing":
        return np.zeros(ctx.n)
    if kind == "random":
        return eligible / ctx.n
    if kind == "symptomatic":
        return (ctx.symptomatic & eligible).astype(float)
    if kind == "contact_tracing":
        return (ctx.traced & eligible).astype(float)
    if kind == "symptomatic_contact":
        return ((ctx.symptomatic | ctx.traced) & eligible).astype(float)
    if kind == "perfect":
        return (ctx.latent & eligible).astype(float)
    if kind == "risk":
        pred = ctx.risk_predictions.get(learner)
        if pred is None:
            ctx.fallback_events.append(f"risk design fell back to random ({learner} unfitted)")
            return eligible / ctx.n
        g = np.clip(pred, PROB_CLIP, 1.0 - PROB_CLIP).copy()
        g[ctx.isolated] = 0.0
        return g
    raise ValueError(f"unknown design kind '{kind}'")


def allocate_rank(g: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Test the top-k agents by g, breaking ties uniformly.

    Only agents with positive probability are ever tested: a rule-based
    design whose eligible set is smaller than the budget leaves the surplus
    unspent (the budget is a ceiling, not a quota).
    """
    n = len(g)
    eligible = int((g > 0).sum())
    k = min(k, n, eligible)
    if k == 0:
        return np.zeros(n, dtype=bool)
    order = np.lexsort((rng.random(n), -g))
    tested = np.zeros(n, dtype=bool)
    tested[order[:k]] = True
    return tested


def rank_inclusion_probs(g: np.ndarray, k: int) -> np.ndarray:
    """Exact inclusion probabilities of the top-k rule with uniform tie-break."""
    n = len(g)
    eligible = int((g > 0).sum())
    k = min(k, n, eligible)
    if k == 0:
        return np.zeros(n)
    if k == eligible:
        return (g > 0).astype(float)
    cutoff = np.partition(g, n - k)[n - k]
    above = g > cutoff
    ties = g == cutoff
    remaining = k - int(above.sum())
    probs = above.astype(float)
    probs[ties] = remaining / int(ties.sum())
    return probs


def allocate_sample(g: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw up to k agents without replacement with weights proportional to g.

    Implemented as an exponential race (smallest Exp(1)/g_i keys), which is
    distributionally identical to sequentially renormalizing g over untested
    agents.  Zero-weight agents are never selected.
    """
    n = len(g)
    if (g < 0).any():
        raise ValueError("test probabilities must be non-negative")
    positive = g > 0
    avail = int(positive.sum())
    tested = np.zeros(n, dtype=bool)
    k = min(k, avail)
    if k == 0:
        return tested
    keys = np.full(n, np.inf)
    keys[positive] = rng.exponential(size=avail) / g[positive]
    tested[np.argpartition(keys, k - 1)[:k]] = True
    return tested


def sample_inclusion_probs(g: np.ndarray, k: int) -> np.ndarray:
    """Capped-proportional inclusion probabilities for weighted sampling.

    Solves sum(min(1, c*g)) = k by water-filling.  Exact for k=1 and whenever
    no weight saturates; for larger k it is the standard proportional
    approximation to the sequential without-replacement mechanism.
    """
    n = len(g)
    positive = g > 0
    avail = int(positive.sum())
    k = min(k, avail)
    if k == 0:
        return np.zeros(n)
    if k == avail:
        return positive.astype(float)
    order = np.argsort(-g)
    gs = g[order]
    probs = np.zeros(n)
    capped = 0
    while True:
        tail = gs[capped:]
        c = (k - capped) / tail.sum()
        if capped < n and c * gs[capped] > 1.0:
            capped += 1
            continue
        pi_sorted = np.concatenate([np.ones(capped), np.minimum(1.0, c * tail)])
        probs[order] = pi_sorted
        return probs


def effective_probabilities(g: np.ndarray, mode: str, k: int) -> np.ndarray:
    """Per-agent probability of actually being tested under budget k."""
    if mode == "rank":
        return rank_inclusion_probs(g, k)
    if mode == "sample":
        return sample_inclusion_probs(g, k)
    raise ValueError(f"unknown allocation mode '{mode}'")


def allocate(g: np.ndarray, mode: str, k: int,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Allocate tests and return (tested mask, realized inclusion probabilities)."""
    g_used = effective_probabilities(g, mode, k)
    if mode == "rank":
        tested = allocate_rank(g, k, rng)
    elif mode == "sample":
        tested = allocate_sample(g, k, rng)
    else:
        raise ValueError(f"unknown allocation mode '{mode}'")
    return tested, g_used


def observed_outcome(tested: np.ndarray, latent: np.ndarray,
                     g: np.ndarray) -> np.ndarray:
    """Inverse-probability-weighted observed outcome A * Y^l / g (0 if untested)."""
    tested = np.asarray(tested, dtype=bool)
    if np.any(tested & (np.asarray(g) <= 0)):
        raise PositivityError("tested agent with zero test probability")
    out = np.zeros(len(tested))
    out[tested] = np.asarray(latent, dtype=float)[tested] / np.asarray(g)[tested]
    return out
