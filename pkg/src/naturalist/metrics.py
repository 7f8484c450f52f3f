"""Caption metrics (BLEU-4, ROUGE-L, CIDEr-D) and the one-vs-rest human baseline."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0


@dataclass(frozen=True)
class EvalInstance:
    pair_id: str
    candidate: tuple
    references: tuple

    def __post_init__(self):
        object.__setattr__(self, "candidate", tuple(self.candidate))
        object.__setattr__(self, "references", tuple(tuple(r) for r in self.references))
        if not self.references:
            raise ValueError(f"instance {self.pair_id}: needs at least one reference")


@dataclass
class MetricReport:
    bleu4: float
    rougeL: float
    ciderD: float
    per_instance: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"BLEU-4": self.bleu4, "ROUGE-L": self.rougeL, "CIDEr-D": self.ciderD}


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(cand_len: int, refs) -> int:
    return min((abs(len(r) - cand_len), len(r)) for r in refs)[1]


def bleu4(instances: Sequence[EvalInstance], max_n: int = 4) -> float:
    """Corpus BLEU: clipped n-gram precisions (n = 1..4), geometric mean, brevity penalty.

    A zero match count is replaced by ``BLEU_EPS``. The reference length for
    the brevity penalty is the closest one (shorter wins ties).
    """
    if not instances:
        raise ValueError("bleu4 needs at least one instance")
    match = np.zeros(max_n)
    total = np.zeros(max_n)
    c_len = r_len = 0
    for inst in instances:
        cand = inst.candidate
        c_len += len(cand)
        r_len += _closest_ref_length(len(cand), inst.references)
        for n in range(1, max_n + 1):
            counts = ngrams(cand, n)
            best: Counter = Counter()
            for ref in inst.references:
                best |= ngrams(ref, n)
            match[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            total[n - 1] += max(len(cand) - n + 1, 0)
    precisions = np.maximum(match, BLEU_EPS) / np.maximum(total, 1.0)
    geo = math.exp(float(np.mean(np.log(precisions))))
    if c_len == 0:
        return 0.0
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * geo


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_instance(candidate: Sequence[str], references, beta: float = ROUGE_BETA) -> float:
    """Best LCS F-measure of ``candidate`` over its references."""
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(candidate), lcs / len(ref)
        best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
    return best


def rouge_l(instances: Sequence[EvalInstance], beta: float = ROUGE_BETA) -> float:
    if not instances:
        raise ValueError("rouge_l needs at least one instance")
    return float(np.mean([rouge_l_instance(i.candidate, i.references, beta) for i in instances]))


def _tfidf(tokens, n_max, df, log_n):
    vecs, norms = [], []
    for n in range(1, n_max + 1):
        vec = {g: c * (log_n - math.log(max(1.0, df.get(g, 0.0)))) for g, c in ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_d_scores(instances: Sequence[EvalInstance], n_max: int = 4,
                   sigma: float = CIDER_SIGMA) -> list[float]:
    """Per-instance CIDEr-D (already multiplied by 10).

    Document frequencies come from the references of ``instances``: an
    n-gram's df is the number of instances whose reference set contains it.
    """
    if len(instances) < 2:
        raise ValueError("CIDEr-D needs at least two instances for a defined idf")
    df: Counter = Counter()
    for inst in instances:
        df.update({g for ref in inst.references for n in range(1, n_max + 1) for g in ngrams(ref, n)})
    log_n = math.log(float(len(instances)))
    scores = []
    for inst in instances:
        cvec, cnorm = _tfidf(inst.candidate, n_max, df, log_n)
        acc = np.zeros(n_max)
        for ref in inst.references:
            rvec, rnorm = _tfidf(ref, n_max, df, log_n)
            delta = len(inst.candidate) - len(ref)
            penalty = math.exp(-(delta ** 2) / (2 * sigma ** 2))
            for n in range(n_max):
                dot = sum(min(v, rvec[n][g]) * rvec[n][g] for g, v in cvec[n].items() if g in rvec[n])
                if cnorm[n] and rnorm[n]:
                    acc[n] += dot / (cnorm[n] * rnorm[n]) * penalty
        scores.append(float(np.mean(acc)) / len(inst.references) * 10.0)
    return scores


def cider_d(instances: Sequence[EvalInstance], n_max: int = 4, sigma: float = CIDER_SIGMA) -> float:
    return float(np.mean(cider_d_scores(instances, n_max, sigma)))


METRICS: dict[str, Callable] = {"bleu4": bleu4, "rougeL": rouge_l, "ciderD": cider_d}


def evaluate(instances: Sequence[EvalInstance]) -> MetricReport:
    per = {i.pair_id: {"rougeL": rouge_l_instance(i.candidate, i.references)} for i in instances}
    if len(instances) >= 2:
        for inst, c in zip(instances, cider_d_scores(instances)):
            per[inst.pair_id]["ciderD"] = c
    cider = float(np.mean([p["ciderD"] for p in per.values()])) if len(instances) >= 2 else float("nan")
    return MetricReport(bleu4(instances), rouge_l(instances), cider, per)


def human_baseline(instances: Sequence[EvalInstance], metric="bleu4", runs: int = 25,
                   seed: int = 0) -> tuple[float, float]:
    """One-vs-rest: hold one reference out as the candidate, score it on the rest.

    Repeated ``runs`` times with seeded hold-out choices; returns mean and
    population standard deviation of the corpus-level metric.
    """
    fn = METRICS[metric] if isinstance(metric, str) else metric
    for inst in instances:
        if len(inst.references) < 2:
            raise ValueError(f"instance {inst.pair_id}: one-vs-rest needs >= 2 references")
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(runs):
        held = []
        for inst in instances:
            k = int(rng.integers(len(inst.references)))
            rest = inst.references[:k] + inst.references[k + 1:]
            held.append(EvalInstance(inst.pair_id, inst.references[k], rest))
        values.append(fn(held))
    return float(np.mean(values)), float(np.std(values))
