"""Rank-to-weight conversion for the four pillars.

Rank positions 1..4 get scores 4..1; a softmax over the scores yields
weights that round to 0.64 / 0.24 / 0.09 / 0.03 by position and always sum
to 1. Full-precision weights are kept internally; the two-decimal values
are display-only.
"""

from __future__ import annotations

import math

from .model import Pillar, PillarRanking, PillarWeights


def softmax_weights(ranking: PillarRanking) -> PillarWeights:
    """Weight for the pillar at position k (1 = most important) is
    exp(5 - k) / sum_j exp(5 - j)."""
    exps = [math.exp(5 - k) for k in (1, 2, 3, 4)]
    total = sum(exps)
    weight = {pillar: exps[pos] / total for pos, pillar in enumerate(ranking.order)}
    return PillarWeights(weight)


def display_weights(weights: PillarWeights) -> dict[Pillar, float]:
    """Two-decimal weights for user-facing text; not for arithmetic."""
    return {p: round(w, 2) for p, w in weights.weight.items()}
