import math

import numpy as np
import pytest

from naturalist.decoding import beam_search, generate, greedy, multinomial
from naturalist.model import ComparativeSpec, JointEncodingSpec, ModelConfig, NeuralNaturalistNet

from oracles import enumerate_sequences

BOS, EOS = 0, 1


def table_step(table):
    def step(prefixes):
        return np.stack([table(tuple(int(t) for t in p)) for p in prefixes])
    return step


def log_normalise(x):
    x = np.asarray(x, dtype=np.float64)
    return x - np.log(np.exp(x - x.max()).sum()) - x.max()


def hashed_table(seed, vocab, margin=0.0):
    """Deterministic pseudo-random log-probs per prefix; ``margin`` boosts one token."""
    def table(prefix):
        rng = np.random.default_rng([seed, *prefix])
        logits = rng.normal(size=vocab)
        if margin:
            logits[int(np.argmax(logits))] += margin
        return log_normalise(logits)
    return table


def test_beam_two_matches_exhaustive_on_hand_table():
    # tokens: 0 = BOS, 1 = EOS, 2 = "a", 3 = "b"; after BOS the greedy choice "a" is a trap
    lp = {
        (0,): np.log([1e-12, 0.10, 0.50, 0.40]),
        (0, 2): np.log([1e-12, 0.30, 0.35, 0.35]),
        (0, 3): np.log([1e-12, 0.90, 0.05, 0.05]),
    }
    table = lambda prefix: log_normalise(lp[prefix]) if prefix in lp else log_normalise(np.log([1e-12, 1, 1e-12, 1e-12]))
    step = table_step(table)
    every = enumerate_sequences(table, BOS, EOS, 2)
    best_seq, best_score = max(every, key=lambda x: x[1])
    beams = beam_search(step, BOS, EOS, 2, width=2)
    top = beams[0]
    assert (BOS,) + top.tokens + ((EOS,) if top.finished else ()) == best_seq
    assert math.isclose(top.score, best_score, rel_tol=0, abs_tol=1e-12)
    assert greedy(step, BOS, EOS, 2).tokens[0] == 2  # greedy falls for the trap
    scores = {s for _, s in every}
    for h in beams:
        assert any(math.isclose(h.score, s, abs_tol=1e-12) for s in scores)


@pytest.mark.parametrize("seed", range(20))
def test_beam_exhaustive_on_random_tables(seed):
    table = hashed_table(seed, 4)
    best = max(s for _, s in enumerate_sequences(table, BOS, EOS, 3))
    # a beam as wide as the whole frontier is exact
    assert math.isclose(beam_search(table_step(table), BOS, EOS, 3, width=64)[0].score, best, abs_tol=1e-12)


def _tiny_net(seed):
    cfg = ModelConfig(9, d=2, f=3, hidden=16, heads=2, joint=JointEncodingSpec.parse("e1,e2,sub"),
                      comparative=ComparativeSpec.from_layers(1), decoder_layers=1, max_len=8)
    net = NeuralNaturalistNet(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    return net.step_function(rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3)))


@pytest.mark.parametrize("seed", range(50))
def test_beam_one_is_greedy(seed):
    step = _tiny_net(seed)
    g = greedy(step, BOS, EOS, 7)
    (b,) = beam_search(step, BOS, EOS, 7, width=1)
    assert b.tokens == g.tokens and b.score == g.score and b.finished == g.finished


def test_cold_multinomial_is_greedy():
    for trial in range(100):
        step = table_step(hashed_table(trial, 6, margin=0.5))
        rng = np.random.default_rng(trial)
        assert multinomial(step, BOS, EOS, 6, temperature=0.01, rng=rng).tokens == greedy(step, BOS, EOS, 6).tokens


def test_multinomial_frequencies():
    step = table_step(lambda prefix: np.log([1e-300, 0.25, 0.75]))
    rng = np.random.default_rng(0)
    draws = [multinomial(step, BOS, EOS, 1, rng=rng).tokens for _ in range(4000)]
    share = sum(d == (2,) for d in draws) / len(draws)
    assert abs(share - 0.75) < 0.03


def test_generate_modes_and_errors():
    step = _tiny_net(0)
    assert generate(step, BOS, EOS, 5, mode="beam", width=1).tokens == greedy(step, BOS, EOS, 5).tokens
    with pytest.raises(ValueError):
        generate(step, BOS, EOS, 5, mode="topk")
    with pytest.raises(ValueError):
        beam_search(step, BOS, EOS, 5, width=0)
    with pytest.raises(ValueError):
        multinomial(step, BOS, EOS, 5, temperature=0)


def test_unfinished_hypothesis_at_max_length():
    step = table_step(lambda prefix: np.log([1e-9, 1e-9, 1.0 - 2e-9]))
    h = greedy(step, BOS, EOS, 4)
    assert h.tokens == (2, 2, 2, 2) and not h.finished
