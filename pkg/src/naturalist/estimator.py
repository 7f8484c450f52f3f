"""scikit-learn style front end for the comparative captioning model."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import decoding
from ._validation import check_pairs, check_references, check_targets
from .corpus import BOS_ID, EOS_ID, MAX_TOKENS, Vocabulary
from .metrics import rouge_l_instance
from .model import ComparativeSpec, JointEncodingSpec, ModelConfig, NeuralNaturalistNet
from .trainer import TrainConfig, TrainingSet, evaluate_loss, fit, load_checkpoint, save_checkpoint


class NeuralNaturalist(BaseEstimator):
    """Generate a comparative paragraph for a pair of feature grids.

    ``X`` is shaped ``(n, 2, d, d, f)``; ``y`` holds one target paragraph per
    pair (raw text or tokens). Defaults are the desk-scale configuration.

    Parameters
    ----------
    joint_encoding : str
        Comma list of blocks from ``e1, e2, sub, add, max, mul`` (or ``all``).
    comparative_layers : int
        0 for passthrough, otherwise the number of encoder layers.
    decoding : {"beam", "greedy", "multinomial"}
    max_steps : int
        Total optimisation steps. ``target_loss`` (nats, full training set)
        may stop training earlier.
    """

    def __init__(self, joint_encoding: str = "e1,e2,sub", comparative_layers: int = 2,
                 decoder_layers: int = 2, hidden_size: int = 64, n_heads: int = 4,
                 max_tokens: int = MAX_TOKENS, min_freq: int = 1, learning_rate: float = 0.01,
                 lr_decay: float = 0.9, decay_steps: int = 20_000, clip: float = 5.0,
                 batch_size: int = 16, max_steps: int = 2000, target_loss: float | None = None,
                 decoding: str = "beam", beam_width: int = 5, temperature: float = 1.0,
                 random_state: int = 0):
        self.joint_encoding = joint_encoding
        self.comparative_layers = comparative_layers
        self.decoder_layers = decoder_layers
        self.hidden_size = hidden_size
        self.n_heads = n_heads
        self.max_tokens = max_tokens
        self.min_freq = min_freq
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.decay_steps = decay_steps
        self.clip = clip
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.target_loss = target_loss
        self.decoding = decoding
        self.beam_width = beam_width
        self.temperature = temperature
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, decay=self.lr_decay,
                           decay_steps=self.decay_steps, clip=self.clip, batch_size=self.batch_size,
                           steps=self.max_steps, seed=self.random_state)

    def _training_set(self, X, y) -> TrainingSet:
        targets = [self.vocab_.encode(t[: self.max_tokens]) for t in y]
        return TrainingSet(X[:, 0], X[:, 1], targets)

    def fit(self, X, y, dev=None, **fit_params):
        X = check_pairs(X)
        y = check_targets(y, len(X))
        self.vocab_ = Vocabulary(min_freq=self.min_freq).fit(y)
        self.config_ = ModelConfig(
            len(self.vocab_), d=X.shape[2], f=X.shape[4], hidden=self.hidden_size, heads=self.n_heads,
            joint=JointEncodingSpec.parse(self.joint_encoding),
            comparative=ComparativeSpec.from_layers(self.comparative_layers),
            decoder_layers=self.decoder_layers, max_len=self.max_tokens + 1)
        self.net_ = NeuralNaturalistNet(self.config_, seed=self.random_state)
        data = self._training_set(X, y)
        dev_set = None
        if dev is not None:
            Xd, yd = dev
            Xd = check_pairs(Xd, self.config_.d, self.config_.f)
            dev_set = self._training_set(Xd, check_targets(yd, len(Xd)))
        self.optimizer_state_, self.trace_ = fit(
            self.net_, data, self._train_config(), dev=dev_set, vocab_fingerprint=self.vocab_.fingerprint(),
            target_loss=self.target_loss, **fit_params)
        self.n_steps_ = self.optimizer_state_.step
        return self

    def loss(self, X, y) -> float:
        """Mean per-token cross entropy (nats) of ``y`` given ``X``."""
        check_is_fitted(self, "net_")
        X = check_pairs(X, self.config_.d, self.config_.f)
        return evaluate_loss(self.net_, self._training_set(X, check_targets(y, len(X))))

    def predict_tokens(self, X, return_scores: bool = False):
        check_is_fitted(self, "net_")
        X = check_pairs(X, self.config_.d, self.config_.f)
        rng = np.random.default_rng(self.random_state)
        out = []
        for g1, g2 in zip(X[:, 0], X[:, 1]):
            hyp = decoding.generate(self.net_.step_function(g1, g2), BOS_ID, EOS_ID, self.max_tokens,
                                    mode=self.decoding, width=self.beam_width,
                                    temperature=self.temperature, rng=rng)
            tokens = tuple(self.vocab_.decode(hyp.tokens, strip=False))
            out.append((tokens, hyp.score) if return_scores else tokens)
        return out

    def predict(self, X) -> list[str]:
        return [" ".join(t) for t in self.predict_tokens(X)]

    def score(self, X, y) -> float:
        """Mean ROUGE-L of the generated paragraphs against the references in ``y``."""
        refs = check_references(y, len(X))
        return float(np.mean([rouge_l_instance(c, r) for c, r in zip(self.predict_tokens(X), refs)]))

    def save(self, path, dtype: str = "<f4") -> None:
        check_is_fitted(self, "net_")
        save_checkpoint(path, self.net_, self.vocab_.fingerprint(), self.optimizer_state_, dtype=dtype,
                        vocab_tokens=self.vocab_.tokens_, extra={"estimator": self.get_params()})

    @classmethod
    def load(cls, path) -> "NeuralNaturalist":
        net, state, manifest = load_checkpoint(path)
        est = cls(**manifest.get("extra", {}).get("estimator", {}))
        est.vocab_ = Vocabulary.from_tokens(manifest["vocab"], est.min_freq)
        if est.vocab_.fingerprint() != manifest["vocab_hash"]:
            raise ValueError(f"{path}: vocabulary does not match its recorded hash")
        est.config_, est.net_ = net.config, net
        est.optimizer_state_ = state
        est.n_steps_ = state.step if state else 0
        est.trace_ = []
        return est


def dump_predictions(path, pair_ids, texts) -> None:
    with Path(path).open("w") as fh:
        for pid, text in zip(pair_ids, texts):
            fh.write(json.dumps({"pair_id": pid, "text": text}) + "\n")
