"""Adagrad training loop with step-decay schedule, gradient clipping and checkpoints."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID
from .model import ModelConfig, NeuralNaturalistNet
from .numerics import NonFiniteError

log = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    Full-scale values: lr 0.01 decayed by 0.9 every 20k steps, clip 5, batch 2048
    sequences, 700k steps. Defaults here are the desk-scale run.
    """

    learning_rate: float = 0.01
    decay: float = 0.9
    decay_steps: int = 20_000
    clip: float = 5.0
    clip_mode: str = "global_norm"  # or "value"
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    initial_accumulator: float = 0.0
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip magnitude must be positive")
        if self.clip_mode not in ("global_norm", "value"):
            raise ValueError(f"unknown clip mode {self.clip_mode!r}")
        if self.batch_size < 1 or self.steps < 0 or self.decay_steps < 1:
            raise ValueError("batch_size, decay_steps must be >= 1 and steps >= 0")

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        return cls(**{"batch_size": 2048, "steps": 700_000, **kw})


@dataclass
class OptimizerState:
    accumulators: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class Batch:
    grid1: np.ndarray
    grid2: np.ndarray
    tokens_in: np.ndarray
    tokens_out: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return self.grid1.shape[0]


class TrainingSet:
    """Image-pair grids with one encoded target sequence each."""

    def __init__(self, grid1: np.ndarray, grid2: np.ndarray, targets: Sequence[Sequence[int]]):
        self.grid1 = np.asarray(grid1, dtype=np.float64)
        self.grid2 = np.asarray(grid2, dtype=np.float64)
        self.targets = [list(t) for t in targets]
        if not (len(self.grid1) == len(self.grid2) == len(self.targets)):
            raise ValueError("grid and target counts differ")
        if not self.targets:
            raise ValueError("training set is empty")

    def __len__(self):
        return len(self.targets)

    def batch(self, rows: Sequence[int]) -> Batch:
        seqs = [self.targets[i] for i in rows]
        t = max(len(s) for s in seqs) + 1
        tin = np.full((len(seqs), t), PAD_ID, dtype=np.int64)
        tout = np.full((len(seqs), t), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(seqs), t), dtype=bool)
        for r, s in enumerate(seqs):
            tin[r, : len(s) + 1] = [BOS_ID] + s
            tout[r, : len(s) + 1] = s + [EOS_ID]
            mask[r, : len(s) + 1] = True
        rows = np.asarray(rows)
        return Batch(self.grid1[rows], self.grid2[rows], tin, tout, mask)

    def batch_at(self, step: int, batch_size: int, seed: int) -> Batch:
        """Batch for global step ``step``; epochs are independently seeded permutations."""
        n = len(self)
        per_epoch = -(-n // batch_size)
        epoch, k = divmod(step, per_epoch)
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        return self.batch(perm[k * batch_size:(k + 1) * batch_size])


def lr_at(step: int, config: TrainConfig) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    return config.learning_rate * config.decay ** (step // config.decay_steps)


def clip_gradients(grads: dict, clip: float, mode: str = "global_norm") -> tuple[dict, float]:
    """Return clipped gradients and the pre-clip global L2 norm."""
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if mode == "value":
        return {k: np.clip(g, -clip, clip) for k, g in grads.items()}, norm
    if norm > clip:
        factor = clip / norm
        return {k: g * factor for k, g in grads.items()}, norm
    return grads, norm


def adagrad_update(net: NeuralNaturalistNet, grads: dict, state: OptimizerState, lr: float,
                   initial: float = 0.0) -> None:
    for name, g in grads.items():
        acc = state.accumulators.get(name)
        acc = np.full_like(g, initial) + g * g if acc is None else acc + g * g
        state.accumulators[name] = acc
        p = net.params[name]
        p.data = p.data - lr * g / (np.sqrt(acc) + ADAGRAD_EPS)


def train_step(net: NeuralNaturalistNet, batch: Batch, config: TrainConfig,
               state: OptimizerState) -> tuple[float, OptimizerState]:
    """Forward, backward, clip, Adagrad update. Mutates ``net`` and ``state``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    for p in net.parameters():
        p.grad = None
    loss = net.loss(batch.grid1, batch.grid2, batch.tokens_in, batch.tokens_out, batch.mask)
    value = float(loss.data)
    if not np.isfinite(value):
        bad = next((n for n, p in net.params.items() if not np.all(np.isfinite(p.data))), None)
        raise NonFiniteError(f"non-finite loss at step {state.step}"
                             + (f"; first non-finite parameter: {bad}" if bad else ""))
    loss.backward()
    grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in net.params.items()}
    bad = next((n for n, g in grads.items() if not np.all(np.isfinite(g))), None)
    if bad is not None:
        raise NonFiniteError(f"non-finite gradient for {bad} at step {state.step}")
    grads, _ = clip_gradients(grads, config.clip, config.clip_mode)
    adagrad_update(net, grads, state, lr_at(state.step, config), config.initial_accumulator)
    state.step += 1
    return value, state


def evaluate_loss(net: NeuralNaturalistNet, data: TrainingSet, batch_size: int = 64) -> float:
    """Token-weighted mean cross entropy over a whole set (no graph recorded)."""
    from .numerics import no_grad

    total, count = 0.0, 0
    with no_grad():
        for start in range(0, len(data), batch_size):
            b = data.batch(range(start, min(start + batch_size, len(data))))
            n = int(b.mask.sum())
            total += float(net.loss(b.grid1, b.grid2, b.tokens_in, b.tokens_out, b.mask).data) * n
            count += n
    return total / count


# checkpoints -----------------------------------------------------------------

def save_checkpoint(path, net: NeuralNaturalistNet, vocab_fingerprint: str = "",
                    state: OptimizerState | None = None, dtype: str = "<f4",
                    vocab_tokens: Sequence[str] | None = None, extra: dict | None = None) -> None:
    """Write ``manifest.json`` and a flat little-endian payload into directory ``path``.

    ``dtype`` ``"<f4"`` is the export format; ``"<f8"`` keeps training
    resumable bit-exactly. Optimizer accumulators go to ``optimizer.bin``.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = list(net.params)
    manifest = {
        "format": 1,
        "dtype": dtype,
        "config": net.config.to_dict(),
        "vocab_hash": vocab_fingerprint,
        "tensors": [{"name": n, "shape": list(net.params[n].shape)} for n in names],
    }
    if vocab_tokens is not None:
        manifest["vocab"] = list(vocab_tokens)
    if extra:
        manifest["extra"] = extra
    with (path / "params.bin").open("wb") as fh:
        for n in names:
            fh.write(np.ascontiguousarray(net.params[n].data, dtype=dtype).tobytes())
    if state is not None:
        manifest["optimizer"] = {"step": state.step,
                                 "tensors": [n for n in names if n in state.accumulators]}
        with (path / "optimizer.bin").open("wb") as fh:
            for n in manifest["optimizer"]["tensors"]:
                fh.write(np.ascontiguousarray(state.accumulators[n], dtype=dtype).tobytes())
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _read_payload(file: Path, names, shapes, dtype) -> dict:
    raw = np.fromfile(file, dtype=dtype)
    need = sum(int(np.prod(s)) for s in shapes)
    if raw.size != need:
        raise ValueError(f"{file}: payload has {raw.size} values, manifest expects {need}")
    out, offset = {}, 0
    for n, s in zip(names, shapes):
        size = int(np.prod(s))
        out[n] = raw[offset:offset + size].reshape(s).astype(np.float64)
        offset += size
    return out


def load_checkpoint(path, expect_config: ModelConfig | None = None,
                    expect_vocab: str | None = None) -> tuple[NeuralNaturalistNet, OptimizerState | None, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    config = ModelConfig.from_dict(manifest["config"])
    if expect_config is not None and expect_config != config:
        raise ValueError(f"checkpoint config {config} is incompatible with {expect_config}")
    if expect_vocab is not None and manifest["vocab_hash"] != expect_vocab:
        raise ValueError("checkpoint vocabulary hash does not match")
    names = [t["name"] for t in manifest["tensors"]]
    shapes = [tuple(t["shape"]) for t in manifest["tensors"]]
    net = NeuralNaturalistNet(config)
    net.load_state_dict(_read_payload(path / "params.bin", names, shapes, manifest["dtype"]))
    state = None
    if "optimizer" in manifest:
        opt_names = manifest["optimizer"]["tensors"]
        opt_shapes = [shapes[names.index(n)] for n in opt_names]
        state = OptimizerState(_read_payload(path / "optimizer.bin", opt_names, opt_shapes, manifest["dtype"]),
                               manifest["optimizer"]["step"])
    return net, state, manifest


# loop ------------------------------------------------------------------------

@dataclass
class TraceEntry:
    step: int
    loss: float
    lr: float
    wall_ms: float


def fit(net: NeuralNaturalistNet, data: TrainingSet, config: TrainConfig,
        state: OptimizerState | None = None, dev: TrainingSet | None = None,
        checkpoint_dir=None, log_path=None, vocab_fingerprint: str = "",
        vocab_tokens: Sequence[str] | None = None, target_loss: float | None = None) -> tuple[OptimizerState, list]:
    """Run ``config.steps`` total steps (resuming from ``state.step``).

    Returns the optimizer state and a trace of ``(step, loss, lr, wall_ms)``.
    ``target_loss`` stops early once a full-data evaluation falls below it
    (checked at ``log_every`` intervals).
    """
    state = OptimizerState() if state is None else state
    trace: list[TraceEntry] = []
    log_fh = open(log_path, "a") if log_path else None
    t0 = time.perf_counter()
    try:
        while state.step < config.steps:
            step = state.step
            lr = lr_at(step, config)
            loss, state = train_step(net, data.batch_at(step, config.batch_size, config.seed), config, state)
            entry = TraceEntry(step, loss, lr, (time.perf_counter() - t0) * 1000.0)
            trace.append(entry)
            if log_fh:
                log_fh.write(json.dumps(asdict(entry)) + "\n")
            if config.log_every and state.step % config.log_every == 0:
                msg = {"step": state.step, "loss": loss}
                if dev is not None:
                    msg["dev_loss"] = evaluate_loss(net, dev)
                log.info("train %s", msg)
                if target_loss is not None and evaluate_loss(net, data) < target_loss:
                    break
            if checkpoint_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"step-{state.step:07d}", net, vocab_fingerprint,
                                state, dtype="<f8", vocab_tokens=vocab_tokens)
    finally:
        if log_fh:
            log_fh.close()
    return state, trace
