"""Dense, embedding and LSTM building blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    matmul,
    mul,
    relu,
    sigmoid,
    take_row,
    tanh_,
    zeros,
)

FORGET_BIAS_INIT = 1.0
EMBED_INIT_RANGE = 0.05


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> Tensor:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=(fan_out, fan_in)), requires_grad=True)


@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.shape[0] != self.b.shape[0]:
            raise DimensionError(f"dense: W has {self.W.shape[0]} rows but b has length {self.b.shape[0]}")

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, activation: str = "relu") -> "DenseLayer":
        return cls(glorot_uniform(rng, n_out, n_in), zeros(n_out, requires_grad=True), activation)

    @property
    def in_features(self) -> int:
        return self.W.shape[1]

    @property
    def out_features(self) -> int:
        return self.W.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_features:
        raise DimensionError(f"dense: input length {x.shape[-1]} != layer input {layer.in_features}")
    out = add(matmul(layer.W, x), layer.b)
    return relu(out) if layer.activation == "relu" else out


@dataclass
class EmbeddingLayer:
    M_e: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, d_embed: int = 100) -> "EmbeddingLayer":
        m = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(vocab_size, d_embed))
        m[0] = 0.0  # OOV starts neutral
        return cls(Tensor(m, requires_grad=True))

    @property
    def vocab_size(self) -> int:
        return self.M_e.shape[0]

    @property
    def d_embed(self) -> int:
        return self.M_e.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"M_e": self.M_e}


def embed(layer: EmbeddingLayer, token_index: int) -> Tensor:
    """Row lookup; equal to multiplying a one-hot vector by the embedding matrix."""
    if not 0 <= token_index < layer.vocab_size:
        raise IndexError(f"embed: token index {token_index} outside vocabulary of {layer.vocab_size}")
    return take_row(layer.M_e, token_index)


GATES = ("i", "f", "o", "c")


@dataclass
class LstmParams:
    W_ix: Tensor
    W_ih: Tensor
    b_i: Tensor
    W_fx: Tensor
    W_fh: Tensor
    b_f: Tensor
    W_ox: Tensor
    W_oh: Tensor
    b_o: Tensor
    W_cx: Tensor
    W_ch: Tensor
    b_c: Tensor

    def __post_init__(self):
        n, d = self.hidden_size, self.input_size
        for gate in GATES:
            wx, wh, b = self.gate(gate)
            if wx.shape != (n, d) or wh.shape != (n, n) or b.shape != (n,):
                raise DimensionError(
                    f"lstm gate {gate}: shapes {wx.shape}, {wh.shape}, {b.shape} inconsistent "
                    f"with hidden {n}, input {d}"
                )

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int = 128) -> "LstmParams":
        kwargs = {}
        for gate in GATES:
            kwargs[f"W_{gate}x"] = glorot_uniform(rng, hidden_size, input_size)
            kwargs[f"W_{gate}h"] = glorot_uniform(rng, hidden_size, hidden_size)
            bias = np.full(hidden_size, FORGET_BIAS_INIT if gate == "f" else 0.0)
            kwargs[f"b_{gate}"] = Tensor(bias, requires_grad=True)
        return cls(**kwargs)

    @property
    def hidden_size(self) -> int:
        return self.W_ix.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_ix.shape[1]

    def gate(self, name: str) -> tuple[Tensor, Tensor, Tensor]:
        return getattr(self, f"W_{name}x"), getattr(self, f"W_{name}h"), getattr(self, f"b_{name}")

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for gate in GATES:
            wx, wh, b = self.gate(gate)
            out[f"W_{gate}x"], out[f"W_{gate}h"], out[f"b_{gate}"] = wx, wh, b
        return out


@dataclass
class LstmState:
    c: Tensor
    h: Tensor

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(zeros(hidden_size), zeros(hidden_size))


def _gate_preact(p: LstmParams, name: str, x_t: Tensor, h_prev: Tensor) -> Tensor:
    wx, wh, b = p.gate(name)
    return add(add(matmul(wx, x_t), matmul(wh, h_prev)), b)


def lstm_step(p: LstmParams, x_t: Tensor, prev: LstmState) -> LstmState:
    if x_t.shape != (p.input_size,):
        raise DimensionError(f"lstm_step: input shape {x_t.shape} != ({p.input_size},)")
    if prev.h.shape != (p.hidden_size,) or prev.c.shape != (p.hidden_size,):
        raise DimensionError(f"lstm_step: state shapes {prev.c.shape}/{prev.h.shape} != ({p.hidden_size},)")
    i = sigmoid(_gate_preact(p, "i", x_t, prev.h))
    f = sigmoid(_gate_preact(p, "f", x_t, prev.h))
    o = sigmoid(_gate_preact(p, "o", x_t, prev.h))
    g = tanh_(_gate_preact(p, "c", x_t, prev.h))
    c = add(mul(f, prev.c), mul(i, g))
    h = mul(o, tanh_(c))
    return LstmState(c=c, h=h)


def lstm_encode(p: LstmParams, sequence: Sequence[Tensor], state: LstmState | None = None) -> Tensor:
    """Run the recurrence from ``state`` (zeros by default) and return the last hidden state."""
    if len(sequence) == 0:
        raise ValueError("lstm_encode: empty sequence")
    return lstm_run(p, sequence, state).h


def lstm_run(p: LstmParams, sequence: Sequence[Tensor], state: LstmState | None = None) -> LstmState:
    state = state if state is not None else LstmState.zeros(p.hidden_size)
    for x_t in sequence:
        state = lstm_step(p, x_t, state)
    return state


def lstm_param_count(input_size: int, hidden_size: int) -> int:
    return 4 * (hidden_size * input_size + hidden_size * hidden_size + hidden_size)


__all__ = [
    "DenseLayer",
    "EmbeddingLayer",
    "LstmParams",
    "LstmState",
    "dense_forward",
    "embed",
    "glorot_uniform",
    "lstm_encode",
    "lstm_param_count",
    "lstm_run",
    "lstm_step",
]
