import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naturalist.corpus import (ANIMAL1, ANIMAL2, EOS_ID, SPECIALS, UNK_ID, DatasetRecord, Paragraph,
                               Vocabulary, build_vocab, corpus_stats, count_sentences, join_records,
                               load_grids, preprocess, read_paragraphs, read_records, save_grids,
                               write_paragraphs, write_records)
from naturalist.sampler import ImagePair


def test_preprocess_examples():
    assert preprocess("Animal 1 is gray.") == [ANIMAL1, "is", "gray", "."]
    assert preprocess("ANIMAL2's beak") == [ANIMAL2, "'s", "beak"]
    assert preprocess("animal one and Animal two") == [ANIMAL1, "and", ANIMAL2]
    assert preprocess("a black-capped bird, really!") == ["a", "black-capped", "bird", ",", "really", "!"]


def test_preprocess_clips_at_64():
    text = " ".join(f"w{i}" for i in range(100))
    out = preprocess(text)
    assert out == [f"w{i}" for i in range(64)]


def test_preprocess_rejects_empty():
    with pytest.raises(ValueError):
        preprocess("   ")


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.characters(codec="ascii"), min_size=1, max_size=120).filter(str.strip))
def test_preprocess_idempotent(text):
    once = preprocess(text)
    if once:
        assert preprocess(" ".join(once)) == once


def test_corpus_stats_hand_example():
    pair = ImagePair("p", "a", "b", "visual", None, "c")
    rec = DatasetRecord(pair, [Paragraph("p", "r0", "a b. c d.")])
    stats = corpus_stats([rec])
    assert stats["sentences_per_paragraph"] == 2 and stats["tokens_per_paragraph"] == 6


def test_paragraphs_per_pair():
    recs = [DatasetRecord(ImagePair(f"p{i}", "a", "b", "visual", None, "c"),
                          [Paragraph(f"p{i}", f"r{j}", "x y.") for j in range(5)]) for i in range(2)]
    assert corpus_stats(recs)["paragraphs_per_pair"] == 5.0


def test_count_sentences_ignores_inner_periods():
    assert count_sentences("It is 2.5 cm long. Done!") == 2


def test_vocab_threshold_and_order():
    corpus = [["b", "a", "a"], ["c", "a", "b"]]
    vocab = build_vocab(corpus, min_freq=1)
    assert vocab.tokens_ == list(SPECIALS) + ["a", "b", "c"]
    v2 = build_vocab(corpus, min_freq=2)
    assert v2.encode(["c"]) == [UNK_ID]
    assert build_vocab(corpus).fingerprint() == vocab.fingerprint()
    assert v2.fingerprint() != vocab.fingerprint()


def test_vocab_transform_roundtrip():
    vocab = Vocabulary().fit([["x", "y"], ["y"]])
    ids = vocab.transform([["y", "x"]])
    assert vocab.inverse_transform(ids) == [["y", "x"]]
    assert vocab.decode([ids[0][0], EOS_ID, ids[0][1]]) == ["y"]
    assert Vocabulary.from_tokens(vocab.tokens_).fingerprint() == vocab.fingerprint()
    with pytest.raises(ValueError):
        Vocabulary.from_tokens(["x"])
    assert vocab.get_params() == {"min_freq": 1}


def test_record_files(tmp_path):
    pair = ImagePair("p", "a", "b", "taxonomic", 2, "c")
    paras = [Paragraph("p", "r0", "Animal 1 is red."), Paragraph("p", "r1", "Animal 2 is blue.")]
    write_records(tmp_path / "r.jsonl", [DatasetRecord(pair, paras)])
    (rec,) = read_records(tmp_path / "r.jsonl")
    assert rec.pair == pair and rec.references == [p.tokens for p in paras]
    write_paragraphs(tmp_path / "p.jsonl", paras)
    joined = join_records([pair, ImagePair("q", "a", "c", "visual", None, "c")],
                          read_paragraphs(tmp_path / "p.jsonl"))
    assert len(joined) == 1 and joined[0].references == rec.references
    (tmp_path / "bad.jsonl").write_text('{"pair_id": "x"}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        read_records(tmp_path / "bad.jsonl")


def test_grid_files(tmp_path):
    rng = np.random.default_rng(0)
    grids = {"a": rng.normal(size=(3, 3, 5)), "b": rng.normal(size=(2, 2, 4))}
    save_grids(tmp_path / "g.jsonl", grids)
    back = load_grids(tmp_path / "g.jsonl")
    for k in grids:
        np.testing.assert_array_equal(back[k], grids[k].astype(np.float32))
    (tmp_path / "g.bin").write_bytes((tmp_path / "g.bin").read_bytes()[:-4])
    with pytest.raises(ValueError, match="payload"):
        load_grids(tmp_path / "g.jsonl")
