"""Non-neural reference generators: most frequent, text-only and nearest neighbour."""
from __future__ import annotations

from collections import Counter

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pairs, check_references
from .synthetic import pooled


def _paragraph_counts(references) -> Counter:
    return Counter(" ".join(r) for refs in references for r in refs)


class MostFrequentBaseline(BaseEstimator):
    """Always emits the most frequent training paragraph (ties: lexicographically first)."""

    def fit(self, X, y):
        counts = _paragraph_counts(check_references(y, len(X)))
        self.paragraph_, self.count_ = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "paragraph_")
        return [self.paragraph_] * len(X)


class TextOnlyBaseline(BaseEstimator):
    """Samples training paragraphs in proportion to their training frequency, ignoring images."""

    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, X, y):
        counts = _paragraph_counts(check_references(y, len(X)))
        self.paragraphs_ = sorted(counts)
        freq = np.array([counts[p] for p in self.paragraphs_], dtype=np.float64)
        self.probabilities_ = freq / freq.sum()
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "paragraphs_")
        rng = np.random.default_rng(self.random_state)
        picks = rng.choice(len(self.paragraphs_), size=len(X), p=self.probabilities_)
        return [self.paragraphs_[i] for i in picks]


class NearestNeighborBaseline(BaseEstimator):
    """Copies a paragraph from the training pair closest in pooled-feature space.

    Distance is ``||q1 - t1|| + ||q2 - t2||`` on mean-pooled grids; ties go to
    the smallest pair id.
    """

    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, X, y, pair_ids=None):
        X = check_pairs(X)
        self.references_ = check_references(y, len(X))
        self.pair_ids_ = [f"{i:08d}" for i in range(len(X))] if pair_ids is None else [str(p) for p in pair_ids]
        self.embedding1_ = np.stack([pooled(g) for g in X[:, 0]])
        self.embedding2_ = np.stack([pooled(g) for g in X[:, 1]])
        self._order = np.argsort(np.array(self.pair_ids_, dtype=object), kind="stable")
        return self

    def neighbors(self, X) -> list[int]:
        check_is_fitted(self, "embedding1_")
        X = check_pairs(X)
        out = []
        for g1, g2 in zip(X[:, 0], X[:, 1]):
            dist = (np.linalg.norm(self.embedding1_ - pooled(g1), axis=1)
                    + np.linalg.norm(self.embedding2_ - pooled(g2), axis=1))
            ordered = self._order[np.argsort(dist[self._order], kind="stable")]
            out.append(int(ordered[0]))
        return out

    def predict(self, X) -> list[str]:
        rng = np.random.default_rng(self.random_state)
        out = []
        for idx in self.neighbors(X):
            refs = self.references_[idx]
            out.append(" ".join(refs[int(rng.integers(len(refs)))]))
        return out
