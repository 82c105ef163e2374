"""Token vocabulary and a compact trainable contextual encoder.

The encoder maps a tokenized sentence (boundary markers included) to one
contextual embedding per token: a learned lookup plus a fixed sinusoidal
position signal, mixed by a single-head scaled dot-product self-attention
layer with a residual connection, then row-wise layer normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ContractError

PAD_TOKEN = "<pad>"
START_TOKEN = "<s>"
END_TOKEN = "</s>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = (PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN)


@dataclass
class TokenizedSentence:
    """Surface tokens and vocabulary ids, both including the two boundary markers."""

    tokens: list
    ids: np.ndarray

    @property
    def n(self):
        return len(self.tokens)


@dataclass
class EncodedSequence:
    """Per-token contextual embeddings, one row per token."""

    features: ad.Tensor

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def width(self):
        return self.features.shape[1]


class Vocabulary:
    """Deterministic token -> id map; specials first, then first occurrence order."""

    def __init__(self, tokens):
        self._tokens = list(tokens)
        self._index = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise ContractError("vocabulary contains duplicate tokens")
        for special in SPECIAL_TOKENS:
            if special not in self._index:
                raise ContractError(f"vocabulary is missing the {special} marker")

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._index

    @property
    def tokens(self):
        return list(self._tokens)

    def id_of(self, token):
        return self._index.get(token, self._index[UNK_TOKEN])

    def token_of(self, idx):
        return self._tokens[idx]

    @classmethod
    def build(cls, corpus):
        """Build from an iterable of body-token lists (markers added here)."""
        corpus = list(corpus)
        if not corpus:
            raise ContractError("cannot build a vocabulary from an empty corpus")
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        for sent in corpus:
            for tok in sent:
                if tok not in seen:
                    seen.add(tok)
                    tokens.append(tok)
        return cls(tokens)

    def encode_tokens(self, body_tokens):
        """Wrap body tokens with boundary markers and map to ids (unk for OOV)."""
        tokens = [START_TOKEN, *body_tokens, END_TOKEN]
        ids = np.array([self._index[START_TOKEN],
                        *(self.id_of(t) for t in body_tokens),
                        self._index[END_TOKEN]], dtype=np.intp)
        return TokenizedSentence(tokens, ids)

    def save(self, path):
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def build_vocab(corpus):
    """Deterministic vocabulary over a corpus of body-token lists."""
    return Vocabulary.build(corpus)


@dataclass
class EncoderParams:
    embedding: ad.Tensor
    attn_query: ad.Tensor
    attn_key: ad.Tensor
    attn_value: ad.Tensor

    def tensors(self):
        return [self.embedding, self.attn_query, self.attn_key, self.attn_value]


@lru_cache(maxsize=128)
def positional_signal(n, width):
    """Fixed sinusoidal position encoding (n x width). Treat as read-only."""
    pos = np.arange(n)[:, None].astype(np.float64)
    dim = np.arange(width)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * np.floor(dim / 2.0) / width)
    out = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    out.flags.writeable = False
    return out


def layer_norm_rows(x, eps=1e-12):
    """Row-wise normalization to zero mean, unit variance (no affine part)."""
    width = x.shape[-1]
    mu = ad.mul(ad.sum_(x, axis=-1, keepdims=True), 1.0 / width)
    centered = ad.sub(x, mu)
    var = ad.mul(ad.sum_(ad.mul(centered, centered), axis=-1, keepdims=True), 1.0 / width)
    return ad.mul(centered, ad.div(1.0, ad.sqrt(ad.add(var, eps))))


def encode(sentence, params):
    """Contextual embeddings H = LN(X + SelfAttn(X)) with X = embed + position."""
    width = params.embedding.shape[1]
    emb = ad.gather_rows(params.embedding, sentence.ids)
    x = ad.add(emb, ad.Tensor(positional_signal(sentence.n, width)))
    q = ad.matmul(x, params.attn_query)
    k = ad.matmul(x, params.attn_key)
    v = ad.matmul(x, params.attn_value)
    weights = ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(width)), axis=-1)
    mixed = ad.matmul(weights, v)
    return EncodedSequence(layer_norm_rows(ad.add(x, mixed)))
