import numpy as np
import pytest

from naturalist.corpus import preprocess, save_grids, write_records
from naturalist.synthetic import (ATTRIBUTES, annotate, caption, consistent, described_differences,
                                  differing, generate_synthetic_corpus, make_world, parse_caption,
                                  perturb, random_attributes)

BASE = {"size": "small", "color": "red", "beak": "short", "wings": "plain"}


def test_identical_caption():
    assert preprocess(caption(BASE, BASE)) == ["both", "animals", "appear", "exactly", "the", "same", "."]


def test_color_only_caption():
    other = dict(BASE, color="blue")
    text = caption(BASE, other)
    assert described_differences(preprocess(text)) == {"color"}
    assert "red" in text and "blue" in text


def test_parse_statements():
    toks = preprocess("Animal 2 is larger than Animal 1. Animal 1 has spotted wings while Animal 2 has plain wings.")
    assert parse_caption(toks) == [("size", "order", -1), ("wings", "value", ("spotted", "plain"))]


@pytest.mark.parametrize("seed", range(30))
def test_captions_roundtrip_through_parser(seed):
    rng = np.random.default_rng(seed)
    a = random_attributes(rng)
    keys = [k for k in ATTRIBUTES if rng.random() < 0.5]
    b = perturb(a, keys, rng)
    for text in [caption(a, b)] + [caption(a, b, rng) for _ in range(4)]:
        toks = preprocess(text)
        assert described_differences(toks) == set(differing(a, b))
        statements = parse_caption(toks)
        assert consistent(statements, a, b)
        if statements:
            assert not consistent(statements, b, a)


def test_annotate_first_reference_is_canonical():
    from naturalist.sampler import ImagePair

    pair = ImagePair("x", "a", "b", "taxonomic", 2, "x")
    b = dict(BASE, size="large")
    rec = annotate(pair, BASE, b, 5, seed=0)
    assert len(rec.paragraphs) == 5 and rec.paragraphs[0].text == caption(BASE, b)


def test_corpus_regenerates_byte_identically(tmp_path):
    for run in ("a", "b"):
        corpus = generate_synthetic_corpus(64, seed=11)
        (tmp_path / run).mkdir()
        write_records(tmp_path / run / "r.jsonl", corpus.records)
        save_grids(tmp_path / run / "g.jsonl", corpus.grids)
    for name in ("r.jsonl", "g.jsonl", "g.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_corpus_levels_track_differences():
    corpus = generate_synthetic_corpus(64, seed=2)
    assert len(corpus.records) == 64
    for rec in corpus.records:
        a, b = corpus.birds[rec.pair.i1].attributes, corpus.birds[rec.pair.i2].attributes
        assert rec.pair.level == 1 + len(differing(a, b))
        assert corpus.grids[rec.pair.i1].shape == (4, 4, 16)


def test_world_attributes_follow_taxonomy():
    world = make_world(seed=5)
    tax = world.taxonomy
    level_attr = {1: "wings", 2: "beak", 3: "color", 4: "size"}
    birds = list(world.birds.values())
    for x in birds[::7]:
        for y in birds[::5]:
            lca = tax.lca_level(x.class_id, y.class_id)
            for level, attr in level_attr.items():
                if lca < level:
                    assert x.attributes[attr] == y.attributes[attr]
    assert all(len(v) >= 5 for v in world.observations.values())
    assert len(world.ratings) == 5 * len(world.birds)
