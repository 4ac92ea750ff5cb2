"""Three-stream addressee classifier and its two single-modality baselines.

The multimodal network reads

    x1   = relu(W1 I1 + b1)                      saliency stream
    x2   = relu(W2 [I2_feat | head_loc] + b2)    speaker-appearance stream
    x_u  = last hidden state of an LSTM over embedded tokens
    p(a) = softmax(W_fu [x1 | x2 | x_u] + b_fu)

``visual_only`` keeps the two visual streams, ``text_only`` keeps the
utterance stream; neither carries parameters for the other modality.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .layers import (
    DenseLayer,
    EmbeddingLayer,
    LstmParams,
    dense_forward,
    embed,
    lstm_encode,
    lstm_param_count,
)
from .tensor import DimensionError, Tensor, concat, no_grad, softmax

VARIANTS = ("visual_only", "text_only", "multimodal")
N_CLASSES = 3
HEAD_LOC_DIM = 2


@dataclass(frozen=True)
class ModelConfig:
    d_saliency: int = 4096
    d_speaker_feat: int = 4096
    d_head_loc: int = HEAD_LOC_DIM
    d_visual_hidden: int = 256
    d_embed: int = 100
    d_lstm_hidden: int = 128
    n_classes: int = N_CLASSES
    variant: str = "multimodal"
    vocab_size: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        for name in ("d_saliency", "d_speaker_feat", "d_visual_hidden", "d_embed", "d_lstm_hidden", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_head_loc != HEAD_LOC_DIM:
            raise ValueError("d_head_loc is fixed at 2")
        if self.n_classes != N_CLASSES:
            raise ValueError("n_classes is fixed at 3")

    @property
    def uses_visual(self) -> bool:
        return self.variant != "text_only"

    @property
    def uses_text(self) -> bool:
        return self.variant != "visual_only"

    @property
    def fusion_dim(self) -> int:
        return 2 * self.d_visual_hidden * self.uses_visual + self.d_lstm_hidden * self.uses_text

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def param_count(cfg: ModelConfig) -> int:
    n = 0
    if cfg.uses_visual:
        n += cfg.d_visual_hidden * (cfg.d_saliency + 1)
        n += cfg.d_visual_hidden * (cfg.d_speaker_feat + cfg.d_head_loc + 1)
    if cfg.uses_text:
        n += cfg.vocab_size * cfg.d_embed
        n += lstm_param_count(cfg.d_embed, cfg.d_lstm_hidden)
    n += cfg.n_classes * (cfg.fusion_dim + 1)
    return n


@dataclass
class ModelParams:
    head: DenseLayer
    saliency_dense: DenseLayer | None = None
    speaker_dense: DenseLayer | None = None
    embedding: EmbeddingLayer | None = None
    lstm: LstmParams | None = None

    def named_parameters(self) -> dict[str, Tensor]:
        """All learnable tensors under stable dotted names, in a fixed order."""
        out: dict[str, Tensor] = {}
        for group in ("saliency_dense", "speaker_dense", "embedding", "lstm", "head"):
            layer = getattr(self, group)
            if layer is None:
                continue
            for name, t in layer.parameters().items():
                out[f"{group}.{name}"] = t
        return out

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        if set(named) != set(arrays):
            missing = sorted(set(named) - set(arrays))
            extra = sorted(set(arrays) - set(named))
            raise KeyError(f"parameter names differ; missing={missing} unexpected={extra}")
        for k, t in named.items():
            if arrays[k].shape != t.shape:
                raise DimensionError(f"{k}: stored shape {arrays[k].shape} != model shape {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


def init_params(cfg: ModelConfig, rng: np.random.Generator, embeddings: np.ndarray | None = None) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1.

    ``embeddings`` (vocab_size x d_embed) overrides the random embedding init.
    """
    saliency = speaker = emb = lstm = None
    if cfg.uses_visual:
        saliency = DenseLayer.init(rng, cfg.d_saliency, cfg.d_visual_hidden)
        speaker = DenseLayer.init(rng, cfg.d_speaker_feat + cfg.d_head_loc, cfg.d_visual_hidden)
    if cfg.uses_text:
        emb = EmbeddingLayer.init(rng, cfg.vocab_size, cfg.d_embed)
        if embeddings is not None:
            if embeddings.shape != (cfg.vocab_size, cfg.d_embed):
                raise DimensionError(
                    f"embeddings shape {embeddings.shape} != ({cfg.vocab_size}, {cfg.d_embed})"
                )
            emb.M_e.data = np.array(embeddings, dtype=np.float64)
        lstm = LstmParams.init(rng, cfg.d_embed, cfg.d_lstm_hidden)
    head = DenseLayer.init(rng, cfg.fusion_dim, cfg.n_classes, activation="none")
    return ModelParams(head=head, saliency_dense=saliency, speaker_dense=speaker, embedding=emb, lstm=lstm)


def zero_params(cfg: ModelConfig) -> ModelParams:
    params = init_params(cfg, np.random.Generator(np.random.PCG64(0)))
    for t in params.named_parameters().values():
        t.data = np.zeros_like(t.data)
    return params


@dataclass
class SampleInput:
    I1: np.ndarray
    I2_feat: np.ndarray
    head_loc: np.ndarray
    tokens: Sequence[int] = field(default_factory=list)
    label: int | None = None

    def __post_init__(self):
        self.I1 = np.asarray(self.I1, dtype=np.float64)
        self.I2_feat = np.asarray(self.I2_feat, dtype=np.float64)
        self.head_loc = np.asarray(self.head_loc, dtype=np.float64)


def _check_variant(cfg: ModelConfig, expected: str) -> None:
    if cfg.variant != expected:
        raise ValueError(f"model configured as {cfg.variant!r}, called as {expected!r}")


def _visual_stream(params: ModelParams, cfg: ModelConfig, s: SampleInput) -> Tensor:
    if s.I1.shape != (cfg.d_saliency,):
        raise DimensionError(f"I1 shape {s.I1.shape} != ({cfg.d_saliency},)")
    if s.I2_feat.shape != (cfg.d_speaker_feat,):
        raise DimensionError(f"I2_feat shape {s.I2_feat.shape} != ({cfg.d_speaker_feat},)")
    if s.head_loc.shape != (cfg.d_head_loc,):
        raise DimensionError(f"head_loc shape {s.head_loc.shape} != ({cfg.d_head_loc},)")
    x1 = dense_forward(params.saliency_dense, Tensor(s.I1))
    i2 = concat(Tensor(s.I2_feat), Tensor(s.head_loc))
    x2 = dense_forward(params.speaker_dense, i2)
    return concat(x1, x2)


def _text_stream(params: ModelParams, s: SampleInput) -> Tensor:
    if len(s.tokens) == 0:
        raise ValueError("empty token sequence; substitute the OOV token upstream")
    return lstm_encode(params.lstm, [embed(params.embedding, t) for t in s.tokens])


def _head(params: ModelParams, x: Tensor) -> Tensor:
    return softmax(dense_forward(params.head, x))


def forward(params: ModelParams, cfg: ModelConfig, s: SampleInput) -> Tensor:
    """Class probabilities of the full three-stream model."""
    _check_variant(cfg, "multimodal")
    x_im = _visual_stream(params, cfg, s)
    x_u = _text_stream(params, s)
    return _head(params, concat(x_im, x_u))


def forward_visual_only(params: ModelParams, cfg: ModelConfig, s: SampleInput) -> Tensor:
    _check_variant(cfg, "visual_only")
    return _head(params, _visual_stream(params, cfg, s))


def forward_text_only(params: ModelParams, cfg: ModelConfig, s: SampleInput) -> Tensor:
    _check_variant(cfg, "text_only")
    return _head(params, _text_stream(params, s))


_FORWARDS = {
    "multimodal": forward,
    "visual_only": forward_visual_only,
    "text_only": forward_text_only,
}


def probabilities(params: ModelParams, cfg: ModelConfig, s: SampleInput) -> Tensor:
    """Dispatch to the forward pass matching ``cfg.variant``."""
    return _FORWARDS[cfg.variant](params, cfg, s)


def argmax_lowest(values) -> int:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return int(np.argmax(np.asarray(values)))


def predict(params: ModelParams, cfg: ModelConfig, s: SampleInput) -> int:
    with no_grad():
        return argmax_lowest(probabilities(params, cfg, s).data)
