"""Pivot-branch stratified sampling of image pairs.

Pivots are drawn uniformly over classes; each pivot branches to its nearest
visual neighbours plus a fixed number of images at every taxonomic distance.
Level 1 is the pivot's own species; level ``l >= 2`` is the disjoint leaf set
that first meets the pivot class ``l - 1`` ranks up.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .taxonomy import Taxonomy
from .visual_index import QuantizedIndex

log = logging.getLogger(__name__)

CATEGORIES = ("visual", "species", "genus", "family", "order", "class")
CLARITY_CRITERIA = ("single_instance", "animal", "focus", "visibility")


@dataclass(frozen=True)
class PivotSpec:
    min_observations: int = 4
    pivot_count: int = 405
    seed: int = 0

    def __post_init__(self):
        if self.min_observations < 1 or self.pivot_count < 1:
            raise ValueError("PivotSpec counts must be >= 1")


@dataclass(frozen=True)
class BranchBudget:
    k_v: int = 2
    k_t_per_level: Mapping[int, int] = field(default_factory=lambda: {l: 2 for l in range(1, 6)})

    def __post_init__(self):
        if self.k_v < 0 or any(v < 0 for v in self.k_t_per_level.values()):
            raise ValueError("budgets must be non-negative")
        if any(l < 1 for l in self.k_t_per_level):
            raise ValueError("taxonomic levels start at 1")

    @property
    def k_t(self) -> int:
        return sum(self.k_t_per_level.values())

    @property
    def k(self) -> int:
        return self.k_v + self.k_t


@dataclass(frozen=True)
class ImagePair:
    pair_id: str
    i1: str
    i2: str
    provenance: str  # "visual" | "taxonomic"
    level: int | None
    pivot_class: Hashable

    def __post_init__(self):
        if self.i1 == self.i2:
            raise ValueError(f"pair {self.pair_id}: i1 == i2")
        if self.provenance not in ("visual", "taxonomic"):
            raise ValueError(f"pair {self.pair_id}: unknown provenance {self.provenance!r}")
        if (self.provenance == "taxonomic") != (self.level is not None):
            raise ValueError(f"pair {self.pair_id}: level must be set iff provenance is taxonomic")

    @property
    def category(self) -> str:
        return "visual" if self.provenance == "visual" else CATEGORIES[self.level]

    def to_record(self) -> dict:
        return {"pair_id": self.pair_id, "i1": self.i1, "i2": self.i2,
                "provenance": self.provenance, "level": self.level,
                "pivot_class": self.pivot_class}

    @classmethod
    def from_record(cls, rec: Mapping) -> "ImagePair":
        return cls(str(rec["pair_id"]), str(rec["i1"]), str(rec["i2"]), rec["provenance"],
                   rec.get("level"), rec["pivot_class"])


@dataclass(frozen=True)
class ClarityRating:
    image_id: str
    rater_id: str
    single_instance: bool
    animal: bool
    focus: bool
    visibility: bool

    @property
    def overall(self) -> bool:
        return self.single_instance and self.animal and self.focus and self.visibility

    def to_record(self) -> dict:
        rec = {"image_id": self.image_id, "rater_id": self.rater_id}
        rec.update({c: getattr(self, c) for c in CLARITY_CRITERIA})
        rec["overall"] = self.overall
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "ClarityRating":
        rating = cls(str(rec["image_id"]), str(rec["rater_id"]),
                     *(bool(rec[c]) for c in CLARITY_CRITERIA))
        if "overall" in rec and bool(rec["overall"]) != rating.overall:
            raise ValueError(f"rating {rating.image_id}/{rating.rater_id}: overall is not the "
                             "conjunction of the four criteria")
        return rating


@dataclass
class BranchResult:
    pairs: list
    shortfall: dict  # level (or "visual") -> missing count

    @property
    def truncated(self) -> bool:
        return any(self.shortfall.values())


def _rng(seed, *keys) -> np.random.Generator:
    # independent stream per (seed, key...) so pivots can be processed in any order
    material = [int(seed)] + [int.from_bytes(str(k).encode(), "little") % (2 ** 63) for k in keys]
    return np.random.default_rng(material)


def clear_fraction(ratings: Iterable[ClarityRating]) -> dict:
    """Per-image fraction of raters whose overall clarity judgement is positive."""
    pos: dict = {}
    tot: dict = {}
    for r in ratings:
        tot[r.image_id] = tot.get(r.image_id, 0) + 1
        pos[r.image_id] = pos.get(r.image_id, 0) + int(r.overall)
    return {img: Fraction(pos[img], tot[img]) for img in tot}


def select_pivots(taxonomy: Taxonomy, observations: Mapping[Hashable, Sequence[str]],
                  spec: PivotSpec = PivotSpec(), clear: Mapping[str, bool] | None = None,
                  accept=None) -> list[tuple]:
    """Draw classes uniformly without replacement and pick one pivot image each.

    Only leaf classes with at least ``spec.min_observations`` images are
    eligible. The pivot is the first image (ascending id) flagged clear; a
    class without one is skipped, as is any class rejected by ``accept``.
    """
    eligible = sorted((c for c in taxonomy.leaves if len(observations.get(c, ())) >= spec.min_observations),
                      key=str)
    if len(eligible) < spec.pivot_count:
        raise ValueError(f"only {len(eligible)} classes have >= {spec.min_observations} "
                         f"observations; {spec.pivot_count} pivots requested")
    order = np.random.default_rng(spec.seed).permutation(len(eligible))
    chosen: list[tuple] = []
    for i in order:
        c = eligible[i]
        images = sorted(observations[c])
        pivot = next((img for img in images if clear is None or clear.get(img, False)), None)
        if pivot is None or (accept is not None and not accept(c, pivot)):
            continue
        chosen.append((c, pivot))
        if len(chosen) == spec.pivot_count:
            return chosen
    raise ValueError(f"only {len(chosen)} classes yielded a usable pivot; "
                     f"{spec.pivot_count} requested")


def branch_visual(pivot: str, index: QuantizedIndex, k_v: int, pivot_class=None) -> BranchResult:
    """The ``k_v`` nearest images to the pivot by quantized L2 distance."""
    if k_v == 0:
        return BranchResult([], {})
    hits = index.knn(pivot, k_v)
    pairs = [ImagePair(f"{pivot}:v{j}", pivot, img, "visual", None, pivot_class)
             for j, img in enumerate(hits.ids)]
    return BranchResult(pairs, {"visual": k_v - len(pairs)} if hits.truncated else {})


def level_classes(taxonomy: Taxonomy, c, level: int) -> list:
    """Candidate classes for taxonomic level ``level`` (1 = the pivot's own species)."""
    if level == 1:
        return [c]
    if level - 1 > taxonomy.depth:
        return []
    return sorted(taxonomy.taxon_partition(c, level - 1), key=str)


def branch_taxonomic(pivot: tuple, taxonomy: Taxonomy, observations: Mapping[Hashable, Sequence[str]],
                     budget: BranchBudget = BranchBudget(), seed: int = 0) -> BranchResult:
    """Round-robin sampling over the candidate classes of every level.

    Classes are visited in a seeded shuffled order; each visit draws one unused
    image uniformly from that class. A class with no images left drops out of
    the rotation. Missing pairs are reported in ``shortfall``, never borrowed
    from another level.
    """
    c, pivot_img = pivot
    pairs: list[ImagePair] = []
    shortfall: dict = {}
    for level in sorted(budget.k_t_per_level):
        want = budget.k_t_per_level[level]
        if want == 0:
            continue
        rng = _rng(seed, pivot_img, level)
        classes = level_classes(taxonomy, c, level)
        pools = {}
        for cls in classes:
            imgs = sorted(img for img in observations.get(cls, ()) if img != pivot_img)
            if imgs:
                pools[cls] = imgs
        rotation = [classes[i] for i in rng.permutation(len(classes)) if classes[i] in pools]
        got = 0
        while got < want and rotation:
            for cls in list(rotation):
                pool = pools[cls]
                img = pool.pop(int(rng.integers(len(pool))))
                pairs.append(ImagePair(f"{pivot_img}:t{level}.{got}", pivot_img, img,
                                       "taxonomic", level, c))
                got += 1
                if not pool:
                    rotation.remove(cls)
                if got == want:
                    break
        if got < want:
            shortfall[level] = want - got
            log.info("pivot %s: level %d short by %d", pivot_img, level, want - got)
    return BranchResult(pairs, shortfall)


def sample_pairs(taxonomy: Taxonomy, observations: Mapping[Hashable, Sequence[str]],
                 index: QuantizedIndex, spec: PivotSpec = PivotSpec(),
                 budget: BranchBudget = BranchBudget(), clear: Mapping[str, bool] | None = None,
                 strict: bool = False) -> tuple[list[ImagePair], dict]:
    """Full pivot-branch pass. Returns the pairs and per-pivot shortfalls.

    ``strict`` applies the look-ahead check: a class is only accepted as a
    pivot if its branches meet every budget.
    """
    def branches(c, img):
        vis = branch_visual(img, index, budget.k_v, pivot_class=c)
        tax = branch_taxonomic((c, img), taxonomy, observations, budget, seed=spec.seed)
        return vis, tax

    accept = None
    if strict:
        def accept(c, img):
            vis, tax = branches(c, img)
            return not (vis.truncated or tax.truncated)

    pairs: list[ImagePair] = []
    shortfalls: dict = {}
    for c, img in select_pivots(taxonomy, observations, spec, clear=clear, accept=accept):
        vis, tax = branches(c, img)
        pairs.extend(vis.pairs)
        pairs.extend(tax.pairs)
        missing = {**vis.shortfall, **tax.shortfall}
        if any(missing.values()):
            shortfalls[img] = missing
    return pairs, shortfalls


def annotation_cost(p: float, strategy: str = "pivot_branch") -> float:
    """Expected annotation-cost multiplier when each image survives vetting with probability ``p``.

    A random pair needs both images to survive (``1/p**2`` draws per kept
    pair); pivot-branch pairs only risk the branch image (``1/p``). At
    ``p = 2/3`` this gives 2.25 and 1.5.
    """
    if not 0 < p <= 1:
        raise ValueError(f"survival probability must lie in (0, 1], got {p}")
    if strategy == "paired":
        return 1.0 / p ** 2
    if strategy == "pivot_branch":
        return 1.0 / p
    raise ValueError(f"unknown strategy {strategy!r}")


def apply_clarity_gate(pairs: Sequence[ImagePair], ratings: Iterable[ClarityRating],
                       threshold=Fraction(4, 5)) -> tuple[list[ImagePair], float]:
    """Keep pairs whose two images both reach ``threshold`` positive clarity ratings."""
    frac = clear_fraction(ratings)
    threshold = Fraction(threshold).limit_denominator(10_000) if isinstance(threshold, float) else threshold
    kept = []
    for pair in pairs:
        for img in (pair.i1, pair.i2):
            if img not in frac:
                raise ValueError(f"image {img!r} (pair {pair.pair_id}) has no clarity rating")
        if frac[pair.i1] >= threshold and frac[pair.i2] >= threshold:
            kept.append(pair)
    return kept, (len(kept) / len(pairs) if pairs else 0.0)


def split_dataset(pairs: Sequence[ImagePair], fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Split by pivot class: classes are shuffled then cut ``floor``/``floor``/remainder."""
    if len(fractions) == 2:
        fractions = (fractions[0], fractions[1], 1.0 - fractions[0] - fractions[1])
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    classes = sorted({p.pivot_class for p in pairs}, key=str)
    n = len(classes)
    if n < 3:
        raise ValueError(f"need at least 3 pivot classes to split, got {n}")
    shuffled = [classes[i] for i in np.random.default_rng(seed).permutation(n)]
    # small epsilon keeps e.g. 0.8 * 10 from flooring to 7
    n_train = int(np.floor(fractions[0] * n + 1e-9))
    n_dev = int(np.floor(fractions[1] * n + 1e-9))
    assign = {}
    for i, cls in enumerate(shuffled):
        assign[cls] = 0 if i < n_train else 1 if i < n_train + n_dev else 2
    out = ([], [], [])
    for p in pairs:
        out[assign[p.pivot_class]].append(p)
    return out


def write_pairs(path, pairs: Iterable[ImagePair]) -> None:
    with Path(path).open("w") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_record()) + "\n")


def read_pairs(path) -> list[ImagePair]:
    return [ImagePair.from_record(r) for r in _read_jsonl(path)]


def write_ratings(path, ratings: Iterable[ClarityRating]) -> None:
    with Path(path).open("w") as fh:
        for r in ratings:
            fh.write(json.dumps(r.to_record()) + "\n")


def read_ratings(path) -> list[ClarityRating]:
    return [ClarityRating.from_record(r) for r in _read_jsonl(path)]


def _read_jsonl(path) -> list[dict]:
    path = Path(path)
    out = []
    with path.open() as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{i}: invalid JSON ({exc.msg})") from None
    return out
