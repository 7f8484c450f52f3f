"""Paragraph records, tokenisation, vocabulary, corpus statistics and grid files."""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .sampler import ImagePair, _read_jsonl

MAX_TOKENS = 64

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
ANIMAL1, ANIMAL2 = "animal1", "animal2"
SPECIALS = (PAD, BOS, EOS, UNK, ANIMAL1, ANIMAL2)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, ANIMAL1_ID, ANIMAL2_ID = range(6)

# "animal 1", "animal1", "animal one" (and the 2-forms), case-insensitive
_MENTIONS = (
    (re.compile(r"\banimal\s*(?:1|one)\b"), f" {ANIMAL1} "),
    (re.compile(r"\banimal\s*(?:2|two)\b"), f" {ANIMAL2} "),
)
_TOKEN = re.compile(r"'[a-z]+|[a-z0-9]+(?:-[a-z0-9]+)*|[^\sa-z0-9]")
_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def preprocess(text: str, max_tokens: int = MAX_TOKENS) -> list[str]:
    """Lowercase, map animal mentions to special tokens, detach punctuation, clip."""
    if not text or not text.strip():
        raise ValueError("cannot preprocess empty text")
    text = text.lower()
    for pattern, repl in _MENTIONS:
        text = pattern.sub(repl, text)
    return _TOKEN.findall(text)[:max_tokens]


def count_sentences(text: str) -> int:
    parts = _SENTENCE_END.split(text.strip())
    return sum(1 for p in parts if p.strip())


@dataclass(frozen=True)
class Paragraph:
    pair_id: str
    rater_id: str
    text: str
    tokens: tuple = field(default=None)

    def __post_init__(self):
        if self.tokens is None:
            object.__setattr__(self, "tokens", tuple(preprocess(self.text)))
        if not self.tokens or len(self.tokens) > MAX_TOKENS:
            raise ValueError(f"paragraph for {self.pair_id}: token count must be 1..{MAX_TOKENS}")


@dataclass
class DatasetRecord:
    pair: ImagePair
    paragraphs: list

    def __post_init__(self):
        if not self.paragraphs:
            raise ValueError(f"record {self.pair.pair_id} has no reference paragraphs")

    @property
    def pair_id(self) -> str:
        return self.pair.pair_id

    @property
    def references(self) -> list[tuple]:
        return [p.tokens for p in self.paragraphs]

    def to_record(self) -> dict:
        rec = self.pair.to_record()
        rec["paragraphs"] = [{"rater_id": p.rater_id, "text": p.text} for p in self.paragraphs]
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "DatasetRecord":
        pair = ImagePair.from_record(rec)
        paras = [Paragraph(pair.pair_id, str(p["rater_id"]), p["text"]) for p in rec["paragraphs"]]
        return cls(pair, paras)


class Vocabulary(TransformerMixin, BaseEstimator):
    """Word-level vocabulary; ids after the specials follow descending frequency.

    ``transform`` maps token sequences to id lists, ``inverse_transform`` maps back.
    """

    def __init__(self, min_freq: int = 1):
        self.min_freq = min_freq

    def fit(self, X: Iterable[Sequence[str]], y=None):
        counts = Counter(tok for seq in X for tok in seq if tok not in SPECIALS)
        kept = sorted((t for t, n in counts.items() if n >= self.min_freq),
                      key=lambda t: (-counts[t], t))
        self.tokens_ = list(SPECIALS) + kept
        self.index_ = {t: i for i, t in enumerate(self.tokens_)}
        self.counts_ = dict(counts)
        return self

    def __len__(self):
        check_is_fitted(self, "tokens_")
        return len(self.tokens_)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        check_is_fitted(self, "tokens_")
        return [self.index_.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        check_is_fitted(self, "tokens_")
        out = []
        for i in ids:
            if strip and i in (PAD_ID, BOS_ID):
                continue
            if strip and i == EOS_ID:
                break
            out.append(self.tokens_[i])
        return out

    def transform(self, X: Iterable[Sequence[str]]) -> list[list[int]]:
        return [self.encode(seq) for seq in X]

    def inverse_transform(self, X: Iterable[Sequence[int]]) -> list[list[str]]:
        return [self.decode(ids) for ids in X]

    def fingerprint(self) -> str:
        check_is_fitted(self, "tokens_")
        return hashlib.sha256("\n".join(self.tokens_).encode()).hexdigest()[:16]

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], min_freq: int = 1) -> "Vocabulary":
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("token list does not start with the special tokens")
        vocab = cls(min_freq=min_freq)
        vocab.tokens_ = list(tokens)
        vocab.index_ = {t: i for i, t in enumerate(vocab.tokens_)}
        vocab.counts_ = {}
        return vocab


def build_vocab(paragraphs: Iterable[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    paragraphs = list(paragraphs)
    if not paragraphs:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(min_freq=min_freq).fit(paragraphs)


def corpus_stats(records: Sequence[DatasetRecord]) -> dict:
    if not records:
        raise ValueError("corpus_stats needs at least one record")
    paras = [p for r in records for p in r.paragraphs]
    return {
        "pairs": len(records),
        "paragraphs_per_pair": len(paras) / len(records),
        "tokens_per_paragraph": float(np.mean([len(p.tokens) for p in paras])),
        "sentences_per_paragraph": float(np.mean([count_sentences(p.text) for p in paras])),
    }


# files -----------------------------------------------------------------------

def write_records(path, records: Iterable[DatasetRecord]) -> None:
    with Path(path).open("w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_record()) + "\n")


def read_records(path) -> list[DatasetRecord]:
    out = []
    for i, rec in enumerate(_read_jsonl(path), start=1):
        try:
            out.append(DatasetRecord.from_record(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{i}: bad record ({exc})") from None
    return out


def write_paragraphs(path, paragraphs: Iterable[Paragraph]) -> None:
    with Path(path).open("w") as fh:
        for p in paragraphs:
            fh.write(json.dumps({"pair_id": p.pair_id, "rater_id": p.rater_id, "text": p.text}) + "\n")


def read_paragraphs(path) -> list[Paragraph]:
    return [Paragraph(str(r["pair_id"]), str(r["rater_id"]), r["text"]) for r in _read_jsonl(path)]


def join_records(pairs: Sequence[ImagePair], paragraphs: Iterable[Paragraph]) -> list[DatasetRecord]:
    by_pair: dict = {}
    for p in paragraphs:
        by_pair.setdefault(p.pair_id, []).append(p)
    return [DatasetRecord(pair, by_pair[pair.pair_id]) for pair in pairs if pair.pair_id in by_pair]


def _payload_path(path: Path) -> Path:
    return path.with_suffix(".bin")


def save_grids(path, grids: Mapping[str, np.ndarray]) -> None:
    """Manifest lines ``{image_id, d, f}`` plus a little-endian float32 payload."""
    path = Path(path)
    with path.open("w") as manifest, _payload_path(path).open("wb") as payload:
        for image_id, grid in grids.items():
            grid = np.asarray(grid)
            d, d2, f = grid.shape
            if d != d2:
                raise ValueError(f"grid {image_id!r} is not square: {grid.shape}")
            manifest.write(json.dumps({"image_id": image_id, "d": d, "f": f}) + "\n")
            payload.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def load_grids(path) -> dict[str, np.ndarray]:
    path = Path(path)
    entries = _read_jsonl(path)
    raw = np.fromfile(_payload_path(path), dtype="<f4")
    expected = sum(e["d"] * e["d"] * e["f"] for e in entries)
    if raw.size != expected:
        raise ValueError(f"{path}: payload has {raw.size} floats, manifest expects {expected}")
    out, offset = {}, 0
    for e in entries:
        n = e["d"] * e["d"] * e["f"]
        grid = raw[offset:offset + n].reshape(e["d"], e["d"], e["f"]).astype(np.float64)
        if not np.all(np.isfinite(grid)):
            raise ValueError(f"{path}: grid {e['image_id']!r} has non-finite values")
        out[str(e["image_id"])] = grid
        offset += n
    return out
