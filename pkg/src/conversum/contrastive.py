"""Pairwise hinge ranking loss over LaSE-ranked candidates.

Scores arrive in LaSE-rank order (position 0 is the best candidate). Every
pair ``i < j`` asks the scorer to place position ``i`` above position ``j``
by at least the pair's margin.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange


@dataclass(frozen=True)
class PairSpec:
    positive_index: int
    negative_index: int
    margin: float

    def __post_init__(self):
        if self.positive_index == self.negative_index:
            raise ValueError("a pair needs two distinct positions")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass(frozen=True)
class LossConfig:
    base_margin: float = 0.01
    rank_scaled: bool = True

    def __post_init__(self):
        if self.base_margin < 0:
            raise ValueError("base_margin must be non-negative")


@dataclass
class ContrastivePairBatch:
    scores: np.ndarray
    pairs: Sequence[PairSpec] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).reshape(-1)
        n = len(self.scores)
        for p in self.pairs:
            if not (0 <= p.positive_index < n and 0 <= p.negative_index < n):
                raise IndexOutOfRange(f"pair {p} references a position outside [0, {n})")

    @classmethod
    def ranked(cls, scores, config: LossConfig = LossConfig()) -> "ContrastivePairBatch":
        scores = np.asarray(scores, dtype=float)
        return cls(scores, build_pairs(len(scores), config))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = np.fromiter((p.positive_index for p in self.pairs), dtype=int, count=len(self.pairs))
        neg = np.fromiter((p.negative_index for p in self.pairs), dtype=int, count=len(self.pairs))
        margin = np.fromiter((p.margin for p in self.pairs), dtype=float, count=len(self.pairs))
        return pos, neg, margin


def build_pairs(n: int, config: LossConfig = LossConfig()) -> list[PairSpec]:
    """All n(n-1)/2 ordered pairs; margins grow with rank distance when rank_scaled."""
    if n < 0:
        raise ValueError("n must be non-negative")
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            margin = config.base_margin * (j - i) if config.rank_scaled else config.base_margin
            pairs.append(PairSpec(i, j, margin))
    return pairs


def _validated(batch: ContrastivePairBatch):
    pos, neg, margin = batch.arrays()
    n = len(batch.scores)
    if len(pos) and (pos.min() < 0 or neg.min() < 0 or pos.max() >= n or neg.max() >= n):
        raise IndexOutOfRange("pair index outside the score vector")
    return pos, neg, margin


def hinge_arguments(batch: ContrastivePairBatch) -> np.ndarray:
    pos, neg, margin = _validated(batch)
    return margin - batch.scores[pos] + batch.scores[neg]


def ranking_loss(batch: ContrastivePairBatch) -> float:
    """Sum over pairs of max(0, margin - s[pos] + s[neg])."""
    if not batch.pairs:
        return 0.0
    return float(np.maximum(hinge_arguments(batch), 0.0).sum())


def loss_subgradient(batch: ContrastivePairBatch) -> np.ndarray:
    """Subgradient of :func:`ranking_loss` with respect to ``batch.scores``.

    Active pairs (hinge argument > 0) contribute -1 at the positive position
    and +1 at the negative one; pairs exactly at the kink contribute nothing.
    """
    grad = np.zeros(len(batch.scores))
    if not batch.pairs:
        return grad
    pos, neg, _ = _validated(batch)
    active = hinge_arguments(batch) > 0.0
    np.add.at(grad, pos[active], -1.0)
    np.add.at(grad, neg[active], 1.0)
    return grad
