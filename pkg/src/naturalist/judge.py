"""Human-evaluation scoring: rater consensus, +1/0/-1 points, per-category means."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sampler import CATEGORIES, _read_jsonl
from .synthetic import consistent, parse_caption

log = logging.getLogger(__name__)

CORRECT, SWAPPED, CANNOT_TELL = "correct_assignment", "swapped_assignment", "cannot_tell"
DECISIONS = (CORRECT, SWAPPED, CANNOT_TELL)
POINTS = {CORRECT: 1, SWAPPED: -1, CANNOT_TELL: 0, None: 0}


@dataclass(frozen=True)
class Judgment:
    item_id: str
    rater_id: str
    decision: str
    category: str | None = None

    def __post_init__(self):
        if self.decision not in DECISIONS:
            raise ValueError(f"unknown decision {self.decision!r}")

    def to_record(self) -> dict:
        rec = {"item_id": self.item_id, "rater_id": self.rater_id, "decision": self.decision}
        if self.category is not None:
            rec["category"] = self.category
        return rec


@dataclass(frozen=True)
class CategoryScore:
    category: str
    items: int
    score: float
    flagged: int = 0  # items scored with fewer judgments than the standard three


def consensus(judgments: Sequence[Judgment], quorum: int = 2) -> str | None:
    """The decision at least ``quorum`` raters agree on, else ``None``."""
    if not judgments:
        raise ValueError("consensus needs at least one judgment")
    raters = [j.rater_id for j in judgments]
    if len(set(raters)) != len(raters):
        dup = next(r for r, n in Counter(raters).items() if n > 1)
        raise ValueError(f"rater {dup!r} judged item {judgments[0].item_id!r} twice")
    decision, votes = Counter(j.decision for j in judgments).most_common(1)[0]
    return decision if votes >= quorum else None


def score_items(decisions: Mapping[str, str | None], categories: Mapping[str, str],
                flagged: Iterable[str] = ()) -> dict[str, CategoryScore]:
    """Mean points per category; ``decisions`` maps item -> consensus decision."""
    flagged = set(flagged)
    points: dict = {}
    counts: dict = {}
    flags: dict = {}
    for item, decision in decisions.items():
        cat = categories[item]
        if cat not in CATEGORIES:
            raise ValueError(f"item {item!r}: unknown category {cat!r}")
        points[cat] = points.get(cat, 0) + POINTS[decision]
        counts[cat] = counts.get(cat, 0) + 1
        flags[cat] = flags.get(cat, 0) + (item in flagged)
    return {c: CategoryScore(c, counts[c], points[c] / counts[c], flags[c])
            for c in CATEGORIES if c in counts}


def score_judgments(judgments: Iterable[Judgment], categories: Mapping[str, str] | None = None,
                    raters_expected: int = 3, quorum: int = 2) -> dict[str, CategoryScore]:
    """Group judgments by item, take consensus, score per category.

    Items with fewer than ``raters_expected`` judgments are still scored (the
    quorum may be unreachable) and counted in ``flagged``.
    """
    by_item: dict = {}
    cats = dict(categories or {})
    for j in judgments:
        by_item.setdefault(j.item_id, []).append(j)
        if j.category is not None:
            if cats.setdefault(j.item_id, j.category) != j.category:
                raise ValueError(f"item {j.item_id!r} tagged with two categories")
    missing = [i for i in by_item if i not in cats]
    if missing:
        raise ValueError(f"item {missing[0]!r} has no category")
    decisions = {item: consensus(js, quorum) for item, js in by_item.items()}
    short = [item for item, js in by_item.items() if len(js) < raters_expected]
    if short:
        log.warning("%d item(s) have fewer than %d judgments", len(short), raters_expected)
    return score_items(decisions, cats, short)


def report_row(scores: Mapping[str, CategoryScore]) -> dict:
    """One row in the column order visual, species, genus, family, order, class."""
    return {c: (scores[c].score if c in scores else None) for c in CATEGORIES}


def programmatic_decision(tokens: Sequence[str], first: Mapping[str, str], second: Mapping[str, str],
                          first_is_i1: bool) -> str:
    """Decide which shown image is Animal 1 from a synthetic-template caption.

    The rater checks every parsed statement under both assignments of the two
    shown images; an assignment is chosen only if it alone is consistent.
    """
    statements = parse_caption(tokens)
    if not statements:
        return CANNOT_TELL
    as_shown = consistent(statements, first, second)
    flipped = consistent(statements, second, first)
    if as_shown == flipped:
        return CANNOT_TELL
    picked_first = as_shown
    return CORRECT if picked_first == first_is_i1 else SWAPPED


def programmatic_judge(item_id: str, tokens: Sequence[str], attrs1: Mapping[str, str],
                       attrs2: Mapping[str, str], category: str | None, raters: int = 3,
                       seed: int = 0, slip: float = 0.0) -> list[Judgment]:
    """Judgments from ``raters`` scripted raters; each sees the images in a random order.

    ``slip`` is the per-rater probability of answering ``cannot_tell`` regardless.
    """
    rng = np.random.default_rng([seed, int.from_bytes(item_id.encode(), "little") % (2 ** 63)])
    out = []
    for r in range(raters):
        first_is_i1 = bool(rng.integers(2))
        first, second = (attrs1, attrs2) if first_is_i1 else (attrs2, attrs1)
        decision = programmatic_decision(tokens, first, second, first_is_i1)
        if slip and rng.random() < slip:
            decision = CANNOT_TELL
        out.append(Judgment(item_id, f"judge{r}", decision, category))
    return out


def write_judgments(path, judgments: Iterable[Judgment]) -> None:
    with Path(path).open("w") as fh:
        for j in judgments:
            fh.write(json.dumps(j.to_record()) + "\n")


def read_judgments(path) -> list[Judgment]:
    out = []
    for i, rec in enumerate(_read_jsonl(path), start=1):
        try:
            out.append(Judgment(str(rec["item_id"]), str(rec["rater_id"]), rec["decision"], rec.get("category")))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{i}: bad judgment ({exc})") from None
    return out
