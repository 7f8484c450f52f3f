import json

import numpy as np
import pytest

from naturalist.taxonomy import Taxonomy, TaxonomyError

from conftest import random_taxonomy, toy_records
from oracles import ancestors, brute_partition


def test_toy_partitions(toy_taxonomy):
    assert toy_taxonomy.taxon_partition("s1", 1) == {"s2"}
    assert toy_taxonomy.taxon_partition("s1", 2) == {"s3"}
    assert toy_taxonomy.taxon_partition("s1", 3) == {"s4"}
    assert toy_taxonomy.taxon_partition("s1", 4) == {"s5"}


def test_ancestor_chain(toy_taxonomy):
    assert toy_taxonomy.ancestor_at("s1", 1) == "G1"
    assert toy_taxonomy.ancestor_at("s1", toy_taxonomy.depth) == "C"


def test_lone_child_has_empty_level_one(toy_taxonomy):
    assert toy_taxonomy.taxon_partition("s3", 1) == set()


@pytest.mark.parametrize("seed", range(100))
def test_partition_matches_lca_oracle(seed):
    rng = np.random.default_rng(seed)
    tax = random_taxonomy(rng, depth=int(rng.integers(1, 5)))
    parent = {t: n.parent for t, n in tax.nodes.items()}
    leaves = sorted(tax.leaves)
    for c in leaves:
        union = {c}
        for level in range(1, tax.depth + 1):
            part = tax.taxon_partition(c, level)
            assert part == brute_partition(parent, leaves, c, level)
            assert not (part & union)
            union |= part
            assert tax.ancestor_at(c, level) == ancestors(parent, c)[level]
        assert union == set(leaves)


def test_lca_level(toy_taxonomy):
    assert toy_taxonomy.lca_level("s1", "s1") == 0
    assert toy_taxonomy.lca_level("s1", "s2") == 1
    assert toy_taxonomy.lca_level("s1", "s5") == 4


def test_level_out_of_range(toy_taxonomy):
    with pytest.raises(IndexError):
        toy_taxonomy.taxon_partition("s1", 5)
    with pytest.raises(TaxonomyError):
        toy_taxonomy.taxon_partition("G1", 1)


@pytest.mark.parametrize("mutate, message", [
    (lambda r: r.append({"id": "X", "parent_id": None, "rank": 4}), "one root"),
    (lambda r: r.append({"id": "X", "parent_id": "nope", "rank": 0}), "unknown parent"),
    (lambda r: r.append({"id": "X", "parent_id": "F1", "rank": 0}), "step by exactly one"),
    (lambda r: r.append({"id": "X", "parent_id": "O1", "rank": 2}), "non-uniform depth"),
    (lambda r: r.append({"id": "s1", "parent_id": "G1", "rank": 0}), "duplicate"),
])
def test_structural_errors(mutate, message):
    records = toy_records()
    mutate(records)
    with pytest.raises(TaxonomyError, match=message):
        Taxonomy.from_records(records)


def test_cycle_rejected():
    records = [{"id": "r", "parent_id": None, "rank": 2},
               {"id": "a", "parent_id": "b", "rank": 1},
               {"id": "b", "parent_id": "a", "rank": 0}]
    with pytest.raises(TaxonomyError):
        Taxonomy.from_records(records)


def test_load_roundtrip_and_line_numbers(tmp_path, toy_taxonomy):
    path = tmp_path / "tax.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in toy_taxonomy.to_records()) + "\n")
    assert Taxonomy.load(path).nodes == toy_taxonomy.nodes
    path.write_text(path.read_text() + "{broken\n")
    with pytest.raises(TaxonomyError, match=r"tax.jsonl:16"):
        Taxonomy.load(path)
