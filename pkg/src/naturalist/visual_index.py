"""Quantized-embedding exhaustive nearest-neighbour search and visual similarity."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

LEVELS = 256


@dataclass(frozen=True)
class Embedding:
    image_id: str
    class_id: Hashable
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise ValueError(f"embedding {self.image_id!r}: vector must be 1-D and finite")
        object.__setattr__(self, "vector", vec)


class Neighbors(NamedTuple):
    ids: list
    distances: np.ndarray
    truncated: bool


class QuantizedIndex(BaseEstimator):
    """Uniform 8-bit scalar quantizer per dimension with brute-force L2 search.

    Ranges are taken from the indexed data. Distances are computed between
    dequantized codes, so every query sees the same geometry the codes encode.
    """

    def __init__(self, levels: int = LEVELS):
        self.levels = levels

    def fit(self, X, ids=None, classes=None):
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        n = X.shape[0]
        ids = [str(i) for i in range(n)] if ids is None else list(ids)
        if len(ids) != n or len(set(ids)) != n:
            raise ValueError("ids must be unique and match the number of vectors")
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        span = self.max_ - self.min_
        self.step_ = np.where(span > 0, span / (self.levels - 1), 1.0)
        self.codes_ = self.quantize(X)
        self.ids_ = ids
        self.classes_ = None if classes is None else list(classes)
        self.position_ = {img: i for i, img in enumerate(ids)}
        self._decoded = self.dequantize(self.codes_)
        # tie order: ascending image id
        self._rank = np.empty(n, dtype=np.int64)
        self._rank[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(n)
        return self

    def quantize(self, X) -> np.ndarray:
        q = np.rint((np.asarray(X, dtype=np.float64) - self.min_) / self.step_)
        return np.clip(q, 0, self.levels - 1).astype(np.uint8)

    def dequantize(self, codes) -> np.ndarray:
        return self.min_ + np.asarray(codes, dtype=np.float64) * self.step_

    def __len__(self):
        check_is_fitted(self, "codes_")
        return len(self.ids_)

    def vector(self, image_id) -> np.ndarray:
        return self._decoded[self.position_[image_id]]

    def distances_to(self, image_id) -> np.ndarray:
        diff = self._decoded - self.vector(image_id)
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def knn(self, query, k: int, exclude=()) -> Neighbors:
        """``k`` closest ids to ``query`` (itself and ``exclude`` removed), nearest first."""
        check_is_fitted(self, "codes_")
        if k < 1:
            raise ValueError("k must be >= 1")
        if query not in self.position_:
            raise KeyError(f"query {query!r} not in index")
        dist = self.distances_to(query)
        banned = {query, *exclude}
        keep = np.array([img not in banned for img in self.ids_], dtype=bool)
        cand = np.flatnonzero(keep)
        order = cand[np.lexsort((self._rank[cand], dist[cand]))][:k]
        return Neighbors([self.ids_[i] for i in order], dist[order], len(order) < k)

    def median_distance(self, max_sample: int = 10_000, seed: int = 0) -> float:
        """Median pairwise distance over (a sample of) the indexed vectors."""
        check_is_fitted(self, "codes_")
        X = self._decoded
        if len(X) > max_sample:
            X = X[np.random.default_rng(seed).choice(len(X), max_sample, replace=False)]
        if len(X) < 2:
            return 1.0
        sq = (X ** 2).sum(axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
        med = float(np.median(np.sqrt(d2[np.triu_indices(len(X), 1)])))
        return med if med > 0 else 1.0


def build_index(embeddings: Sequence[Embedding]) -> QuantizedIndex:
    if not embeddings:
        raise ValueError("cannot build an index from no embeddings")
    dims = {e.vector.shape[0] for e in embeddings}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    X = np.stack([e.vector for e in embeddings])
    return QuantizedIndex().fit(X, ids=[e.image_id for e in embeddings],
                                classes=[e.class_id for e in embeddings])


def knn(index: QuantizedIndex, query, k: int, exclude=()) -> Neighbors:
    return index.knn(query, k, exclude)


def visual_similarity(e1, e2, scale: float) -> float:
    """``exp(-||e1 - e2|| / scale)``: 1 for identical vectors, decreasing with distance."""
    a = np.asarray(getattr(e1, "vector", e1), dtype=np.float64)
    b = np.asarray(getattr(e2, "vector", e2), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    return float(np.exp(-np.linalg.norm(a - b) / scale))


def load_embeddings(path) -> list[Embedding]:
    path = Path(path)
    out: list[Embedding] = []
    dim = None
    with path.open() as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                emb = Embedding(str(rec["image_id"]), rec["class_id"], rec["vector"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{i}: bad embedding record ({exc})") from None
            if dim is None:
                dim = emb.vector.shape[0]
            elif emb.vector.shape[0] != dim:
                raise ValueError(f"{path}:{i}: dimension {emb.vector.shape[0]} != {dim}")
            out.append(emb)
    return out


def save_embeddings(path, embeddings: Sequence[Embedding]) -> None:
    with Path(path).open("w") as fh:
        for e in embeddings:
            fh.write(json.dumps({"image_id": e.image_id, "class_id": e.class_id,
                                 "vector": [float(v) for v in e.vector]}) + "\n")
