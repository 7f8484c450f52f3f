"""Desk-scale synthetic birds: attribute vectors, feature grids and template captions.

A caption mentions exactly the attributes on which the two birds differ, so
its content is a function of the attribute difference and can be parsed back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import ANIMAL1, ANIMAL2, DatasetRecord, Paragraph, preprocess
from .sampler import ClarityRating, ImagePair
from .taxonomy import RANK_NAMES, Taxonomy
from .visual_index import Embedding

ATTRIBUTES: dict[str, tuple] = {
    "size": ("small", "medium", "large"),
    "color": ("red", "blue", "yellow", "brown"),
    "beak": ("short", "long"),
    "wings": ("plain", "striped", "spotted"),
}
ORDINAL = {"size": ("smaller", "larger"), "beak": ("shorter", "longer")}
SAME_TEXT = "Both animals appear exactly the same."


@dataclass(frozen=True)
class Bird:
    image_id: str
    attributes: Mapping[str, str]
    class_id: str | None = None


def differing(a: Mapping[str, str], b: Mapping[str, str]) -> list[str]:
    return [k for k in ATTRIBUTES if a[k] != b[k]]


# captions --------------------------------------------------------------------

def _clause(attr: str, a: Mapping[str, str], b: Mapping[str, str], flip: bool) -> str:
    """One sentence on ``attr``; ``flip`` phrases it with Animal 2 as the subject."""
    first, second = ("Animal 2", "Animal 1") if flip else ("Animal 1", "Animal 2")
    x, y = (b, a) if flip else (a, b)
    if attr in ORDINAL:
        vals = ATTRIBUTES[attr]
        word = ORDINAL[attr][int(vals.index(x[attr]) > vals.index(y[attr]))]
        if attr == "size":
            return f"{first} is {word} than {second}."
        return f"{first} has a {word} beak than {second}."
    if attr == "color":
        return f"{first} has a {x[attr]} body while {second} has a {y[attr]} body."
    return f"{first} has {x[attr]} wings while {second} has {y[attr]} wings."


def caption(a: Mapping[str, str], b: Mapping[str, str], rng: np.random.Generator | None = None) -> str:
    """Canonical comparison when ``rng`` is None, otherwise a seeded paraphrase."""
    diff = differing(a, b)
    if not diff:
        return SAME_TEXT
    if rng is None:
        return " ".join(_clause(k, a, b, False) for k in diff)
    order = [diff[i] for i in rng.permutation(len(diff))]
    return " ".join(_clause(k, a, b, bool(rng.integers(2))) for k in order)


_VALUE_ATTR = {v: k for k, vals in ATTRIBUTES.items() if k not in ORDINAL for v in vals}
_ORDINAL_WORD = {w: (k, i) for k, words in ORDINAL.items() for i, w in enumerate(words)}


def parse_caption(tokens: Sequence[str]) -> list[tuple]:
    """Statements recovered from a (preprocessed) caption.

    Returns ``(attribute, kind, payload)`` tuples, where ``kind`` is
    ``"order"`` with payload ``+1``/``-1`` (animal1 greater/less than animal2)
    or ``"value"`` with payload ``(value_for_animal1, value_for_animal2)``.
    Unparseable sentences are ignored.
    """
    statements = []
    sentence: list[str] = []
    for tok in list(tokens) + ["."]:
        if tok != ".":
            sentence.append(tok)
            continue
        if sentence:
            st = _parse_sentence(sentence)
            if st is not None:
                statements.append(st)
        sentence = []
    return statements


def _parse_sentence(s: list[str]):
    if len(s) < 2 or s[0] not in (ANIMAL1, ANIMAL2):
        return None
    subject_first = s[0] == ANIMAL1
    others = [t for t in s[1:] if t in (ANIMAL1, ANIMAL2)]
    if len(others) != 1 or others[0] == s[0]:
        return None
    ordinal = [t for t in s if t in _ORDINAL_WORD]
    if len(ordinal) == 1:
        attr, up = _ORDINAL_WORD[ordinal[0]]
        if attr == "beak" and "beak" not in s:
            return None
        sign = 1 if up else -1
        return (attr, "order", sign if subject_first else -sign)
    values = [t for t in s if t in _VALUE_ATTR]
    if len(values) == 2 and _VALUE_ATTR[values[0]] == _VALUE_ATTR[values[1]]:
        attr = _VALUE_ATTR[values[0]]
        pair = (values[0], values[1]) if subject_first else (values[1], values[0])
        return (attr, "value", pair)
    return None


def consistent(statements, a: Mapping[str, str], b: Mapping[str, str]) -> bool:
    """True when every statement holds with ``a`` as animal1 and ``b`` as animal2."""
    for attr, kind, payload in statements:
        if kind == "order":
            vals = ATTRIBUTES[attr]
            diff = vals.index(a[attr]) - vals.index(b[attr])
            if np.sign(diff) != payload:
                return False
        elif (a[attr], b[attr]) != payload:
            return False
    return True


def described_differences(tokens: Sequence[str]) -> set:
    return {attr for attr, _, _ in parse_caption(tokens)}


# grids -----------------------------------------------------------------------

@dataclass
class GridEncoder:
    """Fixed random encoding of attributes into ``(d, d, f)`` activation grids.

    Each attribute value has a prototype feature vector; each attribute has a
    spatial weight map, so different attributes dominate different cells.
    """

    d: int = 4
    f: int = 16
    noise: float = 0.1
    seed: int = 1234
    prototypes: dict = field(init=False, repr=False)
    maps: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.d < 1 or self.f < 1:
            raise ValueError("d and f must be >= 1")
        rng = np.random.default_rng(self.seed)
        self.prototypes = {k: {v: rng.normal(0.0, 1.0, self.f) for v in vals}
                           for k, vals in ATTRIBUTES.items()}
        self.maps = {k: rng.uniform(0.2, 1.0, (self.d, self.d)) for k in ATTRIBUTES}

    def encode(self, attributes: Mapping[str, str], rng: np.random.Generator) -> np.ndarray:
        grid = np.zeros((self.d, self.d, self.f))
        for k in ATTRIBUTES:
            grid += self.maps[k][:, :, None] * self.prototypes[k][attributes[k]][None, None, :]
        grid += self.noise * rng.normal(size=grid.shape)
        # stored as float32 on disk; round now so memory and files agree
        return grid.astype(np.float32).astype(np.float64)


def pooled(grid: np.ndarray) -> np.ndarray:
    return np.asarray(grid).reshape(-1, np.shape(grid)[-1]).mean(axis=0)


def random_attributes(rng: np.random.Generator) -> dict:
    return {k: vals[int(rng.integers(len(vals)))] for k, vals in ATTRIBUTES.items()}


def perturb(attrs: Mapping[str, str], keys: Sequence[str], rng: np.random.Generator) -> dict:
    out = dict(attrs)
    for k in keys:
        choices = [v for v in ATTRIBUTES[k] if v != attrs[k]]
        out[k] = choices[int(rng.integers(len(choices)))]
    return out


def annotate(pair: ImagePair, a: Mapping[str, str], b: Mapping[str, str], n_refs: int,
             seed: int) -> DatasetRecord:
    """Template references: the first is canonical, the rest seeded paraphrases."""
    rng = np.random.default_rng([seed, int.from_bytes(pair.pair_id.encode(), "little") % (2 ** 63)])
    texts = [caption(a, b)] + [caption(a, b, rng) for _ in range(n_refs - 1)]
    return DatasetRecord(pair, [Paragraph(pair.pair_id, f"r{j}", t) for j, t in enumerate(texts)])


@dataclass
class SyntheticCorpus:
    grids: dict  # image_id -> (d, d, f)
    records: list  # DatasetRecord
    birds: dict  # image_id -> Bird


def generate_synthetic_corpus(n_pairs: int = 64, d: int = 4, f: int = 16, seed: int = 0,
                              n_refs: int = 5, noise: float = 0.1,
                              encoder: GridEncoder | None = None, prefix: str = "syn") -> SyntheticCorpus:
    """Independent random bird pairs, differing in 0..4 attributes (uniform).

    Pair provenance is recorded as taxonomic level ``1 + #differences`` so the
    corpus spans the species..class categories.
    """
    encoder = GridEncoder(d, f, noise) if encoder is None else encoder
    rng = np.random.default_rng(seed)
    grids, records, birds = {}, [], {}
    keys = list(ATTRIBUTES)
    for i in range(n_pairs):
        a = random_attributes(rng)
        n_diff = int(rng.integers(len(keys) + 1))
        changed = [keys[j] for j in sorted(rng.choice(len(keys), n_diff, replace=False))]
        b = perturb(a, changed, rng)
        ida, idb = f"{prefix}{i:05d}a", f"{prefix}{i:05d}b"
        grids[ida] = encoder.encode(a, rng)
        grids[idb] = encoder.encode(b, rng)
        birds[ida], birds[idb] = Bird(ida, a), Bird(idb, b)
        pair = ImagePair(f"{prefix}{i:05d}", ida, idb, "taxonomic", 1 + n_diff, f"{prefix}{i:05d}")
        records.append(annotate(pair, a, b, n_refs, seed))
    return SyntheticCorpus(grids, records, birds)


# a whole synthetic domain ------------------------------------------------------

@dataclass
class SyntheticWorld:
    taxonomy: Taxonomy
    birds: dict  # image_id -> Bird
    observations: dict  # class -> [image_id]
    grids: dict
    ratings: list  # ClarityRating

    def embeddings(self) -> list[Embedding]:
        return [Embedding(img, b.class_id, pooled(self.grids[img])) for img, b in sorted(self.birds.items())]


def make_world(branching: Sequence[int] = (3, 2, 2, 2), images_per_species: tuple = (5, 8),
               d: int = 4, f: int = 16, noise: float = 0.1, seed: int = 0, raters: int = 5,
               unclear_rate: float = 0.15, encoder: GridEncoder | None = None) -> SyntheticWorld:
    """Five-rank taxonomy whose levels fix attributes: order -> size,
    family -> colour, genus -> beak, species -> wing pattern.

    ``branching`` gives the fan-out below class, order, family and genus.
    Siblings receive distinct values where the value set allows.
    """
    if len(branching) != 4:
        raise ValueError("branching needs four fan-outs (class->order->family->genus->species)")
    encoder = GridEncoder(d, f, noise) if encoder is None else encoder
    rng = np.random.default_rng(seed)
    level_attr = ("size", "color", "beak", "wings")
    records = [{"id": "class0", "parent_id": None, "rank": 4, "name": "Aves"}]
    frontier = [("class0", {})]
    for depth, (fan, attr) in enumerate(zip(branching, level_attr)):
        rank = 3 - depth
        nxt = []
        for parent, attrs in frontier:
            vals = ATTRIBUTES[attr]
            perm = rng.permutation(len(vals))
            for j in range(fan):
                tid = f"{parent}.{RANK_NAMES[rank][0]}{j}" if parent != "class0" else f"o{j}"
                records.append({"id": tid, "parent_id": parent, "rank": rank, "name": f"{RANK_NAMES[rank]} {tid}"})
                nxt.append((tid, {**attrs, attr: vals[perm[j % len(vals)]]}))
        frontier = nxt
    taxonomy = Taxonomy.from_records(records)

    birds, observations, grids, ratings = {}, {}, {}, []
    lo, hi = images_per_species
    for species, attrs in frontier:
        count = int(rng.integers(lo, hi + 1))
        observations[species] = []
        for j in range(count):
            img = f"img.{species}.{j}"
            birds[img] = Bird(img, attrs, species)
            observations[species].append(img)
            grids[img] = encoder.encode(attrs, rng)
            unclear = rng.random() < unclear_rate
            for r in range(raters):
                crit = rng.random(4) < (np.array([0.95, 1.0, 0.4, 0.6]) if unclear else 0.98)
                ratings.append(ClarityRating(img, f"rater{r}", *map(bool, crit)))
    return SyntheticWorld(taxonomy, birds, observations, grids, ratings)
