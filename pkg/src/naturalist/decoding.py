"""Greedy, multinomial and beam-search decoding over a next-token step function.

A step function maps an ``(n, t)`` array of prefixes (each starting with BOS)
to ``(n, vocab)`` next-token log-probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

StepFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple  # generated ids, BOS and EOS excluded
    score: float  # total log-probability, EOS included when emitted
    finished: bool


def greedy(step: StepFn, bos: int, eos: int | None, max_len: int) -> Hypothesis:
    seq = [bos]
    score = 0.0
    for _ in range(max_len):
        logp = step(np.array([seq]))[0]
        tok = int(np.argmax(logp))
        score += float(logp[tok])
        if tok == eos:
            return Hypothesis(tuple(seq[1:]), score, True)
        seq.append(tok)
    return Hypothesis(tuple(seq[1:]), score, False)


def multinomial(step: StepFn, bos: int, eos: int | None, max_len: int,
                temperature: float = 1.0, rng: np.random.Generator | None = None) -> Hypothesis:
    """Ancestral sampling from ``softmax(logp / temperature)``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    seq = [bos]
    score = 0.0
    for _ in range(max_len):
        logp = step(np.array([seq]))[0]
        z = logp / temperature
        p = np.exp(z - z.max())
        cdf = np.cumsum(p / p.sum())
        tok = int(min(np.searchsorted(cdf, rng.random(), side="right"), len(cdf) - 1))
        score += float(logp[tok])
        if tok == eos:
            return Hypothesis(tuple(seq[1:]), score, True)
        seq.append(tok)
    return Hypothesis(tuple(seq[1:]), score, False)


def beam_search(step: StepFn, bos: int, eos: int | None, max_len: int, width: int = 5) -> list[Hypothesis]:
    """Length-wise beam search ranked by total log-probability (no length normalisation).

    Each step keeps the ``width`` best extensions of the live beam. Extensions
    ending in EOS are retired to the finished pool and shrink the live beam.
    Search stops when nothing is live or the best finished score can no
    longer be beaten. Returns all hypotheses, best first; ties keep
    expansion order.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    live = [(0.0, (bos,))]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        if not live:
            break
        if finished and max(h.score for h in finished) >= live[0][0]:
            break
        logp = step(np.array([seq for _, seq in live]))
        totals = np.array([s for s, _ in live])[:, None] + logp
        flat = totals.ravel()
        order = np.argsort(-flat, kind="stable")[:width]
        vocab = logp.shape[1]
        nxt = []
        for idx in order:
            row, tok = divmod(int(idx), vocab)
            score, seq = float(flat[idx]), live[row][1]
            if tok == eos:
                finished.append(Hypothesis(seq[1:], score, True))
            else:
                nxt.append((score, seq + (tok,)))
        live = nxt
    finished.extend(Hypothesis(seq[1:], score, False) for score, seq in live)
    return sorted(finished, key=lambda h: -h.score)


def generate(step: StepFn, bos: int, eos: int | None, max_len: int, mode: str = "beam",
             width: int = 5, temperature: float = 1.0,
             rng: np.random.Generator | None = None) -> Hypothesis:
    if mode == "greedy":
        return greedy(step, bos, eos, max_len)
    if mode == "multinomial":
        return multinomial(step, bos, eos, max_len, temperature, rng)
    if mode == "beam":
        return beam_search(step, bos, eos, max_len, width)[0]
    raise ValueError(f"unknown decoding mode {mode!r}")
