"""Transformer encoder shared by articles and historical headlines.

The same parameters encode the article (giving ``H_A``) and every history
headline; a headline's representation is the encoder output at its leading
[CLS] position, and the author's style vector is the mean of those rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import CLS_ID
from .errors import ConfigError, ContractError
from .numcore import NEG_INF, LayerNorm, Linear, Module, Parameter, Tensor
from .numcore import tensor as T
from .numcore.module import xavier_uniform


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    dropout_rate: float = 0.1
    max_positions: int = 160

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, dropout_rate: float, rng: np.random.Generator):
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.dropout_rate = dropout_rate
        self.query = Linear(d_model, d_model, rng)
        # no key bias: it shifts every score of a query equally, so softmax cancels it
        self.key = Linear(d_model, d_model, rng, bias=False)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return x.reshape(B, L, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def __call__(self, x_q: Tensor, x_kv: Tensor, key_mask: np.ndarray, causal: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        B, Lq, d = x_q.shape
        Lk = x_kv.shape[1]
        q = self._split(self.query(x_q))
        k = self._split(self.key(x_kv))
        v = self._split(self.value(x_kv))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.d_head))
        bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, NEG_INF)[:, None, None, :]
        if causal:
            bias = bias + np.triu(np.full((Lq, Lk), NEG_INF), k=1)[None, None]
        weights = T.softmax(scores + bias, axis=-1)
        weights = T.dropout(weights, self.dropout_rate, rng, self.training)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, Lq, d)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d_model, d_ff, rng)
        self.outer = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.gelu(self.inner(x)))


class EncoderLayer(Module):
    """Post-norm block: x -> LN(x + SelfAttn(x)) -> LN(. + FFN(.))."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.attention = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.dropout_rate = cfg.dropout_rate

    def __call__(self, x: Tensor, mask: np.ndarray, rng=None) -> Tensor:
        h = T.dropout(self.attention(x, x, mask, rng=rng), self.dropout_rate, rng, self.training)
        x = self.norm1(x + h)
        h = T.dropout(self.ffn(x), self.dropout_rate, rng, self.training)
        return self.norm2(x + h)


class Embeddings(Module):
    """Token plus learned position embeddings, then LayerNorm and dropout."""

    def __init__(self, token_weight: Parameter, max_positions: int, d_model: int,
                 dropout_rate: float, rng: np.random.Generator):
        self.token = token_weight
        self.position = Parameter(xavier_uniform(rng, max_positions, d_model))
        self.norm = LayerNorm(d_model)
        self.dropout_rate = dropout_rate

    def __call__(self, ids: np.ndarray, rng=None) -> Tensor:
        L = ids.shape[-1]
        if L > self.position.shape[0]:
            raise ContractError(f"sequence length {L} exceeds max_positions {self.position.shape[0]}")
        x = T.embedding(self.token, ids) + self.position[:L]
        return T.dropout(self.norm(x), self.dropout_rate, rng, self.training)


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, token_weight: Parameter | None = None):
        cfg.validate()
        self.config = cfg
        if token_weight is None:
            token_weight = Parameter(xavier_uniform(rng, cfg.vocab_size, cfg.d_model))
        self.embeddings = Embeddings(token_weight, cfg.max_positions, cfg.d_model, cfg.dropout_rate, rng)
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_layers)]

    def __call__(self, ids: np.ndarray, mask: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        """Encode a padded batch ``(B, L)`` into ``(B, L, d)``."""
        ids = np.asarray(ids, dtype=np.int64)
        x = self.embeddings(ids, rng)
        for layer in self.layers:
            x = layer(x, mask, rng)
        return x


def encode_sequence(encoder: Encoder, token_ids, mask=None, rng=None) -> Tensor:
    """Encode one sequence; returns ``(len, d)``."""
    ids = np.asarray(token_ids, dtype=np.int64)[None, :]
    mask = np.ones_like(ids, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)[None, :]
    out = encoder(ids, mask, rng)
    return out.reshape(out.shape[1], out.shape[2])


def headline_embedding(encoder: Encoder, headline_ids, rng=None) -> Tensor:
    """Encoder output at the leading [CLS] position, shape ``(1, d)``."""
    ids = np.asarray(headline_ids, dtype=np.int64)
    if ids.size == 0 or ids[0] != CLS_ID:
        raise ContractError("headline must start with the [CLS] token")
    return encode_sequence(encoder, ids, rng=rng)[0:1]


def style_vector(H_T: Tensor, d_model: int | None = None) -> Tensor:
    """Row mean of the ``(k, d)`` headline matrix; the zero vector when k = 0."""
    if H_T.shape[0] == 0:
        return Tensor(np.zeros((1, d_model if d_model is not None else H_T.shape[1])))
    return H_T.mean(axis=0, keepdims=True)


def batched_style_vectors(cls_rows: Tensor, owner: np.ndarray, batch_size: int, d_model: int) -> Tensor:
    """Per-sample mean of headline rows: ``(M, d)`` rows owned by samples -> ``(B, d)``.

    Samples owning no row get the zero vector.
    """
    if len(owner) == 0:
        return Tensor(np.zeros((batch_size, d_model)))
    averager = np.zeros((batch_size, len(owner)))
    averager[owner, np.arange(len(owner))] = 1.0
    counts = averager.sum(axis=1, keepdims=True)
    averager = np.divide(averager, counts, out=np.zeros_like(averager), where=counts > 0)
    return Tensor(averager) @ cls_rows
