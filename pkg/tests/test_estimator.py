import math
from collections import Counter

import numpy as np
import pytest
from sklearn.base import clone

from naturalist._validation import stack_pairs
from naturalist.baselines import MostFrequentBaseline, NearestNeighborBaseline, TextOnlyBaseline
from naturalist.corpus import preprocess
from naturalist.estimator import NeuralNaturalist
from naturalist.synthetic import generate_synthetic_corpus, pooled


def corpus_arrays(n=24, seed=0):
    syn = generate_synthetic_corpus(n, d=2, f=4, seed=seed)
    X = stack_pairs(syn.grids, [r.pair for r in syn.records])
    refs = [[p.text for p in r.paragraphs] for r in syn.records]
    return X, refs, [r.pair.pair_id for r in syn.records]


def test_most_frequent():
    X = np.zeros((3, 2, 1, 1, 1))
    model = MostFrequentBaseline().fit(X, [["b c", "a"], ["b c"], ["z"]])
    assert model.predict(X[:2]) == ["b c", "b c"]
    # tie: lexicographically first
    assert MostFrequentBaseline().fit(X, [["q"], ["p"], ["r"]]).predict(X[:1]) == ["p"]


def test_most_frequent_matches_counting_scan():
    X, refs, _ = corpus_arrays()
    counts = Counter(" ".join(preprocess(t)) for rs in refs for t in rs)
    top = max(counts.values())
    model = MostFrequentBaseline().fit(X, refs)
    assert model.count_ == top
    assert model.paragraph_ == min(p for p, c in counts.items() if c == top)


def test_text_only_ratio():
    X = np.zeros((4, 2, 1, 1, 1))
    model = TextOnlyBaseline(random_state=1).fit(X, [["a"], ["a"], ["a"], ["b"]])
    draws = Counter(model.predict(np.zeros((20000, 2, 1, 1, 1))))
    n = 20000
    # binomial with p = 3/4: allow 4 standard deviations
    assert abs(draws["a"] - 0.75 * n) < 4 * math.sqrt(n * 0.75 * 0.25)
    assert model.predict(X) == TextOnlyBaseline(random_state=1).fit(X, [["a"], ["a"], ["a"], ["b"]]).predict(X)
    assert set(TextOnlyBaseline().fit(X[:1], [["only one"]]).predict(X)) == {"only one"}


def test_nearest_neighbor_matches_exhaustive_oracle():
    Xtr, refs, ids = corpus_arrays(50, seed=2)
    Xq, _, _ = corpus_arrays(30, seed=3)
    model = NearestNeighborBaseline().fit(Xtr, refs, pair_ids=ids)
    for q, got in zip(Xq, model.neighbors(Xq)):
        best = None
        for j, t in enumerate(Xtr):
            d = (math.dist(pooled(q[0]), pooled(t[0])) + math.dist(pooled(q[1]), pooled(t[1])))
            if best is None or (d, ids[j]) < best[0]:
                best = ((d, ids[j]), j)
        assert got == best[1]


def test_nearest_neighbor_self_and_ties():
    Xtr, refs, ids = corpus_arrays(10)
    model = NearestNeighborBaseline().fit(Xtr, refs, pair_ids=ids)
    assert model.neighbors(Xtr) == list(range(10))
    dup = np.concatenate([Xtr[:1], Xtr[:1]])
    tied = NearestNeighborBaseline().fit(dup, [["x"], ["y"]], pair_ids=["p2", "p1"])
    assert tied.neighbors(Xtr[:1]) == [1]
    assert tied.predict(Xtr[:1]) == ["y"]


def test_estimator_params_and_clone():
    est = NeuralNaturalist(hidden_size=16, n_heads=2, max_steps=3)
    params = est.get_params()
    assert params["joint_encoding"] == "e1,e2,sub" and params["hidden_size"] == 16
    assert clone(est).get_params() == params


def test_estimator_fit_predict_save_load(tmp_path):
    X, refs, _ = corpus_arrays(8)
    y = [r[0] for r in refs]
    est = NeuralNaturalist(hidden_size=16, n_heads=2, comparative_layers=1, decoder_layers=1,
                           max_steps=4, batch_size=4, decoding="greedy").fit(X, y)
    assert est.n_steps_ == 4
    out = est.predict(X[:3])
    assert len(out) == 3 and all(isinstance(t, str) for t in out)
    assert 0.0 <= est.score(X[:3], refs[:3]) <= 1.0
    est.save(tmp_path / "ck", dtype="<f8")
    back = NeuralNaturalist.load(tmp_path / "ck")
    assert back.get_params() == est.get_params()
    assert back.predict(X[:3]) == out
    assert back.loss(X, y) == pytest.approx(est.loss(X, y), abs=0)


def test_estimator_input_checks():
    X, refs, _ = corpus_arrays(4)
    with pytest.raises(ValueError):
        NeuralNaturalist(max_steps=1).fit(X[:, 0], [r[0] for r in refs])
    with pytest.raises(ValueError):
        NeuralNaturalist(max_steps=1).fit(X, [r[0] for r in refs][:2])
    bad = X.copy()
    bad[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        NeuralNaturalist(max_steps=1).fit(bad, [r[0] for r in refs])
