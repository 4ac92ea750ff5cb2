"""Tokenizer, vocabulary and word-vector file loader."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .layers import EMBED_INIT_RANGE
from .tensor import make_rng

OOV, PAD = 0, 1
RESERVED = ("<oov>", "<pad>")
_STRIP = string.punctuation


def tokenize(utterance: str) -> list[str]:
    """Lowercase, split on whitespace, trim punctuation from token edges.

    >>> tokenize("It's great, isn't it?")
    ["it's", 'great', "isn't", 'it']
    """
    tokens = []
    for raw in utterance.lower().split():
        tok = raw.strip(_STRIP)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass
class Vocabulary:
    itos: list[str] = field(default_factory=lambda: list(RESERVED))
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.itos[:2]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved <oov>, <pad> entries")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi and self.stoi[token] > PAD

    def index(self, token: str) -> int:
        i = self.stoi.get(token, OOV)
        return OOV if i == PAD else i

    def encode(self, tokens: Sequence[str], max_len: int | None = None) -> list[int]:
        """Token indices, cut to the first ``max_len``; an empty sequence becomes a single OOV token."""
        if max_len is not None and max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        ids = [self.index(t) for t in tokens[:max_len]]
        return ids or [OOV]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Keep tokens seen at least ``min_count`` times, most frequent first, ties alphabetical."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(tok for tokens in corpus for tok in tokens)
    kept = sorted((tok for tok, n in counts.items() if n >= min_count and tok not in RESERVED),
                  key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(RESERVED) + kept)


@dataclass
class PretrainedLoad:
    matrix: np.ndarray
    found: int
    skipped: int


def load_pretrained(path: str | Path, vocab: Vocabulary, d_embed: int = 100, seed: int = 0) -> PretrainedLoad:
    """Initialise an embedding matrix from a whitespace-separated word-vector file.

    Vocabulary tokens found in the file copy their vector; the OOV row is zero;
    everything else draws from uniform(-0.05, 0.05) under ``seed``. Lines that
    do not parse, or whose vector length differs from the file's dimension,
    are skipped and counted. The file's dimension is taken from its first
    parseable line and must equal ``d_embed``.
    """
    rng = make_rng(seed)
    matrix = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(len(vocab), d_embed))
    matrix[OOV] = 0.0
    file_dim = None
    found = skipped = 0
    try:
        fh = open(path, encoding="utf-8", errors="replace")
    except OSError as exc:
        raise OSError(f"cannot read word vectors from {path}: {exc}") from exc
    with fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                skipped += 1
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                skipped += 1
                continue
            if not np.all(np.isfinite(vec)):
                skipped += 1
                continue
            if file_dim is None:
                if len(vec) == 1:
                    # word2vec-style "count dim" header
                    skipped += 1
                    continue
                file_dim = len(vec)
                if file_dim != d_embed:
                    raise ValueError(f"{path}: vectors have dimension {file_dim}, expected {d_embed}")
            if len(vec) != file_dim:
                skipped += 1
                continue
            word = parts[0]
            if word in vocab:
                matrix[vocab.stoi[word]] = vec
                found += 1
    return PretrainedLoad(matrix=matrix, found=found, skipped=skipped)
