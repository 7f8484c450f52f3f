import numpy as np
import pytest

from naturalist.corpus import preprocess
from naturalist.judge import (CANNOT_TELL, CORRECT, SWAPPED, Judgment, consensus, programmatic_decision,
                              programmatic_judge, read_judgments, report_row, score_items, score_judgments,
                              write_judgments)
from naturalist.sampler import CATEGORIES
from naturalist.synthetic import ATTRIBUTES, caption, perturb, random_attributes


def J(item, rater, decision, cat="genus"):
    return Judgment(item, rater, decision, cat)


def test_consensus_cases():
    assert consensus([J("i", "a", CORRECT), J("i", "b", CORRECT), J("i", "c", SWAPPED)]) == CORRECT
    assert consensus([J("i", "a", CORRECT), J("i", "b", SWAPPED), J("i", "c", CANNOT_TELL)]) is None
    assert consensus([J("i", "a", CANNOT_TELL), J("i", "b", CANNOT_TELL), J("i", "c", CORRECT)]) == CANNOT_TELL
    # two raters that disagree cannot reach a quorum of two
    assert consensus([J("i", "a", CORRECT), J("i", "b", SWAPPED)]) is None


def test_duplicate_rater_rejected():
    with pytest.raises(ValueError, match="twice"):
        consensus([J("i", "a", CORRECT), J("i", "a", SWAPPED)])


def test_unknown_decision():
    with pytest.raises(ValueError):
        Judgment("i", "a", "maybe")


def test_category_mean():
    decisions = {"a": CORRECT, "b": CORRECT, "c": SWAPPED, "d": None}
    scores = score_items(decisions, dict.fromkeys(decisions, "family"))
    assert scores["family"].score == pytest.approx((2 - 1 + 0) / 4)
    assert scores["family"].items == 4


def test_score_judgments_flags_short_items():
    js = [J("x", r, CORRECT) for r in "abc"] + [J("y", "a", CORRECT), J("y", "b", CORRECT)]
    scores = score_judgments(js)
    assert scores["genus"].score == 1.0
    assert scores["genus"].flagged == 1


def test_conflicting_category():
    with pytest.raises(ValueError, match="two categories"):
        score_judgments([J("x", "a", CORRECT, "genus"), J("x", "b", CORRECT, "order")])


def test_scores_bounded():
    rng = np.random.default_rng(0)
    decisions = [CORRECT, SWAPPED, CANNOT_TELL]
    for _ in range(50):
        cats = [CATEGORIES[c] for c in rng.integers(6, size=20)]
        js = [Judgment(f"i{k}", f"r{r}", decisions[rng.integers(3)], cats[k])
              for k in range(20) for r in range(3)]
        for s in score_judgments(js).values():
            assert -1.0 <= s.score <= 1.0


def test_report_row_order():
    row = report_row(score_judgments([J("x", r, SWAPPED, "order") for r in "abc"]))
    assert list(row) == list(CATEGORIES)
    assert row["order"] == -1.0 and row["species"] is None


def test_most_frequent_sentence_scores_zero():
    tokens = preprocess("The two animals appear to be exactly the same.")
    rng = np.random.default_rng(3)
    js = []
    for k, cat in enumerate(CATEGORIES * 4):
        a = random_attributes(rng)
        b = perturb(a, list(ATTRIBUTES)[:2], rng)
        js += programmatic_judge(f"p{k}", tokens, a, b, cat, seed=k)
    row = report_row(score_judgments(js))
    assert all(v == 0.0 for v in row.values())


def test_programmatic_decisions():
    rng = np.random.default_rng(5)
    a = random_attributes(rng)
    b = perturb(a, ["size", "color"], rng)
    good = preprocess(caption(a, b))
    bad = preprocess(caption(b, a))
    assert programmatic_decision(good, a, b, True) == CORRECT
    assert programmatic_decision(good, b, a, False) == CORRECT
    assert programmatic_decision(bad, a, b, True) == SWAPPED
    assert all(j.decision == CORRECT for j in programmatic_judge("q", good, a, b, "order", seed=1))
    # with slip=1 every rater gives up
    assert all(j.decision == CANNOT_TELL for j in programmatic_judge("q", good, a, b, "order", slip=1.0))


def test_judgment_file_roundtrip(tmp_path):
    js = [J("x", "a", CORRECT), Judgment("y", "b", SWAPPED)]
    write_judgments(tmp_path / "j.jsonl", js)
    assert read_judgments(tmp_path / "j.jsonl") == js
    (tmp_path / "bad.jsonl").write_text('{"item_id": "x", "rater_id": "a"}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        read_judgments(tmp_path / "bad.jsonl")
