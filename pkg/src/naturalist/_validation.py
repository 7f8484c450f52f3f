"""Input checks shared by the estimators."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import preprocess


def check_pairs(X, d: int | None = None, f: int | None = None) -> np.ndarray:
    """Validate image-pair grids shaped ``(n, 2, d, d, f)`` and return float64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 5 or X.shape[1] != 2 or X.shape[2] != X.shape[3]:
        raise ValueError(f"expected pair grids shaped (n, 2, d, d, f), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no image pairs given")
    if d is not None and X.shape[2] != d:
        raise ValueError(f"grid size {X.shape[2]} does not match fitted d={d}")
    if f is not None and X.shape[4] != f:
        raise ValueError(f"feature width {X.shape[4]} does not match fitted f={f}")
    if not np.all(np.isfinite(X)):
        raise ValueError("pair grids contain non-finite values")
    return X


def as_tokens(text) -> tuple:
    """Accept raw text or an already tokenised sequence."""
    if isinstance(text, str):
        return tuple(preprocess(text))
    tokens = tuple(text)
    if not tokens or not all(isinstance(t, str) for t in tokens):
        raise ValueError("token sequences must be non-empty sequences of strings")
    return tokens


def check_targets(y, n: int) -> list[tuple]:
    y = list(y)
    if len(y) != n:
        raise ValueError(f"{len(y)} targets for {n} pairs")
    return [as_tokens(t) for t in y]


def check_references(y, n: int) -> list[list[tuple]]:
    """One list of references per pair (a bare string counts as a single reference)."""
    y = list(y)
    if len(y) != n:
        raise ValueError(f"{len(y)} reference sets for {n} pairs")
    out = []
    for refs in y:
        if isinstance(refs, str):
            refs = [refs]
        refs = [as_tokens(r) for r in refs]
        if not refs:
            raise ValueError("every pair needs at least one reference")
        out.append(refs)
    return out


def stack_pairs(grids, pairs: Sequence) -> np.ndarray:
    """Gather ``(n, 2, d, d, f)`` from an image-id -> grid mapping."""
    missing = [p.i1 if p.i1 not in grids else p.i2 for p in pairs if p.i1 not in grids or p.i2 not in grids]
    if missing:
        raise KeyError(f"no feature grid for image {missing[0]!r}")
    return np.stack([np.stack([grids[p.i1], grids[p.i2]]) for p in pairs])
