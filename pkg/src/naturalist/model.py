"""Comparative captioning network: joint image encoding, comparative encoder, decoder.

Residual sublayers use the post-norm form ``ln(x + sublayer(x))``.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor

BLOCK_ORDER = ("e1", "e2", "sub", "add", "max", "mul")
MUTATIONS = ("sub", "add", "max", "mul")


@dataclass(frozen=True)
class JointEncodingSpec:
    include_e1: bool = True
    include_e2: bool = True
    mutations: tuple = ("sub",)

    def __post_init__(self):
        muts = tuple(self.mutations)
        bad = [m for m in muts if m not in MUTATIONS]
        if bad:
            raise ValueError(f"unknown mutation(s) {bad}; choose from {MUTATIONS}")
        if len(set(muts)) != len(muts):
            raise ValueError(f"duplicate mutation in {muts}")
        object.__setattr__(self, "mutations", muts)
        if not self.blocks:
            raise ValueError("joint encoding must select at least one block")

    @property
    def blocks(self) -> tuple:
        chosen = {"e1": self.include_e1, "e2": self.include_e2}
        chosen.update({m: m in self.mutations for m in MUTATIONS})
        return tuple(b for b in BLOCK_ORDER if chosen[b])

    @classmethod
    def parse(cls, text: str) -> "JointEncodingSpec":
        """``"e1,e2,sub"``-style block list; ``"all"`` selects all six."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if parts == ["all"]:
            parts = list(BLOCK_ORDER)
        unknown = [p for p in parts if p not in BLOCK_ORDER]
        if unknown:
            raise ValueError(f"unknown joint-encoding block(s) {unknown}")
        return cls("e1" in parts, "e2" in parts, tuple(m for m in MUTATIONS if m in parts))

    def __str__(self):
        return ",".join(self.blocks)


@dataclass(frozen=True)
class ComparativeSpec:
    mode: str = "encoder"
    layers: int = 2

    def __post_init__(self):
        if self.mode not in ("passthrough", "encoder"):
            raise ValueError(f"unknown comparative mode {self.mode!r}")
        if self.mode == "encoder" and self.layers < 1:
            raise ValueError("an encoder comparative module needs >= 1 layer")

    @classmethod
    def from_layers(cls, layers: int) -> "ComparativeSpec":
        return cls("passthrough", 0) if layers == 0 else cls("encoder", layers)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters. Defaults are the desk-scale setting."""

    vocab_size: int
    d: int = 4
    f: int = 16
    hidden: int = 64
    heads: int = 4
    joint: JointEncodingSpec = field(default_factory=JointEncodingSpec)
    comparative: ComparativeSpec = field(default_factory=ComparativeSpec)
    decoder_layers: int = 2
    max_len: int = 65
    ff_mult: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if min(self.d, self.f, self.vocab_size, self.decoder_layers, self.max_len) < 1:
            raise ValueError("d, f, vocab_size, decoder_layers and max_len must be >= 1")

    @classmethod
    def full_scale(cls, vocab_size: int, d: int = 7, f: int = 2048, **kw) -> "ModelConfig":
        """Published sizes: 6-layer modules, hidden 512, 8 heads, mul joint encoding."""
        kw.setdefault("joint", JointEncodingSpec(False, False, ("mul",)))
        return cls(vocab_size, d=d, f=f, hidden=512, heads=8,
                   comparative=ComparativeSpec("encoder", 6), decoder_layers=6, **kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["joint"] = str(self.joint)
        out["comparative"] = self.comparative.layers
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["joint"] = JointEncodingSpec.parse(data["joint"])
        data["comparative"] = ComparativeSpec.from_layers(int(data["comparative"]))
        return cls(**data)


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, width, 2) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate)[:, : width // 2]
    return table


def flatten_grid(grid: np.ndarray) -> np.ndarray:
    """``(..., d, d, f)`` -> ``(..., d*d, f)`` in row-major cell order."""
    grid = np.asarray(grid, dtype=np.float64)
    *lead, d, d2, f = grid.shape
    if d != d2:
        raise ValueError(f"feature grid must be square, got {grid.shape}")
    return grid.reshape(*lead, d * d, f)


def mutation_blocks(e1: Tensor, e2: Tensor, spec: JointEncodingSpec) -> list[Tensor]:
    """The raw (pre-embedding) blocks of the joint encoding, in canonical order."""
    if e1.shape != e2.shape:
        raise nx.ShapeError(f"joint encoding: E1 {e1.shape} vs E2 {e2.shape}")
    make = {
        "e1": lambda: e1,
        "e2": lambda: e2,
        "sub": lambda: nx.sub(e1, e2),
        "add": lambda: nx.add(e1, e2),
        "max": lambda: nx.maximum(e1, e2),
        "mul": lambda: nx.mul(e1, e2),
    }
    return [make[b]() for b in spec.blocks]


class NeuralNaturalistNet:
    """Parameters and differentiable forward pass.

    ``params`` is an ordered name -> Tensor registry; every entry is trained.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._init_params(np.random.default_rng(seed))
        self._positions = sinusoidal_positions(config.max_len + 1, config.hidden)
        cells = config.d * config.d
        self._segment_ids = np.repeat([BLOCK_ORDER.index(b) for b in config.joint.blocks], cells)
        self._cell_ids = np.tile(np.arange(cells), len(config.joint.blocks))
        self._masks: dict[int, np.ndarray] = {}

    # parameters --------------------------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        h, ff = c.hidden, c.hidden * c.ff_mult

        def dense(name, fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.params[name + ".w"] = Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), True, name + ".w")
            self.params[name + ".b"] = Tensor(np.zeros(fan_out), True, name + ".b")

        def norm(name):
            self.params[name + ".gain"] = Tensor(np.ones(h), True, name + ".gain")
            self.params[name + ".bias"] = Tensor(np.zeros(h), True, name + ".bias")

        def attention(name):
            for proj in ("q", "k", "v", "o"):
                dense(f"{name}.{proj}", h, h)

        def table(name, rows, std):
            self.params[name] = Tensor(rng.normal(0.0, std, (rows, h)), True, name)

        dense("image_proj", c.f, h)
        table("segment_emb", len(BLOCK_ORDER), 0.5)
        table("cell_emb", c.d * c.d, 0.5)
        for i in range(c.comparative.layers if c.comparative.mode == "encoder" else 0):
            attention(f"enc{i}.attn")
            norm(f"enc{i}.ln1")
            dense(f"enc{i}.ff1", h, ff)
            dense(f"enc{i}.ff2", ff, h)
            norm(f"enc{i}.ln2")
        table("token_emb", c.vocab_size, 1.0)
        for i in range(c.decoder_layers):
            attention(f"dec{i}.self")
            norm(f"dec{i}.ln1")
            attention(f"dec{i}.cross")
            norm(f"dec{i}.ln2")
            dense(f"dec{i}.ff1", h, ff)
            dense(f"dec{i}.ff2", ff, h)
            norm(f"dec{i}.ln3")
        dense("out", h, c.vocab_size)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # building blocks -----------------------------------------------------------

    def _dense(self, x: Tensor, name: str) -> Tensor:
        return nx.add(nx.matmul(x, self.params[name + ".w"]), self.params[name + ".b"])

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return nx.layer_norm(x, self.params[name + ".gain"], self.params[name + ".bias"], self.config.ln_eps)

    def _ff(self, x: Tensor, name: str) -> Tensor:
        return self._dense(nx.relu(self._dense(x, name + "1")), name + "2")

    def _attention(self, query: Tensor, memory: Tensor, name: str, causal: bool = False) -> Tensor:
        b, tq, h = query.shape
        tk = memory.shape[1]
        heads = self.config.heads
        dk = h // heads
        q = nx.transpose(nx.reshape(self._dense(query, name + ".q"), (b, tq, heads, dk)), (0, 2, 1, 3))
        k = nx.transpose(nx.reshape(self._dense(memory, name + ".k"), (b, tk, heads, dk)), (0, 2, 3, 1))
        v = nx.transpose(nx.reshape(self._dense(memory, name + ".v"), (b, tk, heads, dk)), (0, 2, 1, 3))
        scores = nx.scale(nx.matmul(q, k), 1.0 / math.sqrt(dk))
        if causal:
            scores = nx.add(scores, Tensor(self._causal_mask(tq)))
        mixed = nx.matmul(nx.softmax(scores, axis=-1), v)
        merged = nx.reshape(nx.transpose(mixed, (0, 2, 1, 3)), (b, tq, h))
        return self._dense(merged, name + ".o")

    def _causal_mask(self, t: int) -> np.ndarray:
        if t not in self._masks:
            self._masks[t] = np.triu(np.full((t, t), -1e9), k=1)
        return self._masks[t]

    # model stages -------------------------------------------------------------

    def embed_images(self, grid1: np.ndarray, grid2: np.ndarray) -> tuple[Tensor, Tensor]:
        """Flatten ``(B, d, d, f)`` grids and project cells to the hidden size."""
        g1, g2 = np.asarray(grid1), np.asarray(grid2)
        c = self.config
        if g1.shape != g2.shape or g1.shape[-3:] != (c.d, c.d, c.f):
            raise nx.ShapeError(f"grids {g1.shape} / {g2.shape} do not match (d={c.d}, f={c.f})")
        e1 = self._dense(Tensor(flatten_grid(g1)), "image_proj")
        e2 = self._dense(Tensor(flatten_grid(g2)), "image_proj")
        return e1, e2

    def joint_encode(self, e1: Tensor, e2: Tensor) -> Tensor:
        blocks = mutation_blocks(e1, e2, self.config.joint)
        joint = nx.concat(blocks, axis=-2) if len(blocks) > 1 else blocks[0]
        marks = nx.add(nx.embedding(self.params["segment_emb"], self._segment_ids),
                       nx.embedding(self.params["cell_emb"], self._cell_ids))
        return nx.add(joint, marks)

    def compare(self, joint: Tensor) -> Tensor:
        c = self.config
        if c.comparative.mode == "passthrough":
            return joint
        x = joint
        for i in range(c.comparative.layers):
            x = self._norm(nx.add(x, self._attention(x, x, f"enc{i}.attn")), f"enc{i}.ln1")
            x = self._norm(nx.add(x, self._ff(x, f"enc{i}.ff")), f"enc{i}.ln2")
        return x

    def encode(self, grid1: np.ndarray, grid2: np.ndarray) -> Tensor:
        return self.compare(self.joint_encode(*self.embed_images(grid1, grid2)))

    def decode(self, memory: Tensor, tokens: np.ndarray) -> Tensor:
        """Teacher-forced logits ``(B, T, vocab)`` for input ids ``tokens`` ``(B, T)``."""
        tokens = np.asarray(tokens, dtype=np.int64)
        b, t = tokens.shape
        if t > self.config.max_len:
            raise ValueError(f"target length {t} exceeds max_len {self.config.max_len}")
        if memory.shape[0] != b:
            raise nx.ShapeError(f"memory batch {memory.shape[0]} vs token batch {b}")
        x = nx.add(nx.embedding(self.params["token_emb"], tokens), Tensor(self._positions[:t]))
        for i in range(self.config.decoder_layers):
            x = self._norm(nx.add(x, self._attention(x, x, f"dec{i}.self", causal=True)), f"dec{i}.ln1")
            x = self._norm(nx.add(x, self._attention(x, memory, f"dec{i}.cross")), f"dec{i}.ln2")
            x = self._norm(nx.add(x, self._ff(x, f"dec{i}.ff")), f"dec{i}.ln3")
        return self._dense(x, "out")

    def forward_train(self, grid1, grid2, tokens_in) -> Tensor:
        return self.decode(self.encode(grid1, grid2), tokens_in)

    def loss(self, grid1, grid2, tokens_in, tokens_out, mask) -> Tensor:
        return nx.cross_entropy(self.forward_train(grid1, grid2, tokens_in), tokens_out, mask)

    def step_function(self, grid1: np.ndarray, grid2: np.ndarray):
        """Next-token log-probabilities for a batch of prefixes of one image pair."""
        with nx.no_grad():
            memory = self.encode(grid1[None], grid2[None])

        def step(prefixes: np.ndarray) -> np.ndarray:
            prefixes = np.asarray(prefixes, dtype=np.int64)
            with nx.no_grad():
                mem = memory if prefixes.shape[0] == 1 else Tensor(
                    np.broadcast_to(memory.data, (prefixes.shape[0],) + memory.shape[1:]))
                logits = self.decode(mem, prefixes).data[:, -1, :]
            shifted = logits - logits.max(axis=1, keepdims=True)
            return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

        return step

    # state -----------------------------------------------------------------

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        for name, value in state.items():
            if name not in self.params:
                raise KeyError(f"unexpected parameter {name!r}")
            if self.params[name].shape != np.shape(value):
                raise nx.ShapeError(f"{name}: checkpoint shape {np.shape(value)} vs model {self.params[name].shape}")
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for name, value in state.items():
            self.params[name].data = np.array(value, dtype=np.float64)
