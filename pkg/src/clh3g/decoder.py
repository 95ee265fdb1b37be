"""Transformer decoder, style fusion and the style-conditioned pointer-generator.

Shapes use B for batch, a for article length, h for target length, d for the
model width, V for the base vocabulary and E for the batch's extended ids.

Two fusion switches exist. Concat fusion appends the style vector as one
extra, always-visible slot of the cross-attention memory. Pointer fusion feeds
the style vector to the copy attention and to the generation gate; with it off
the style inputs of both are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, FeedForward, MultiHeadAttention, Embeddings
from .errors import ConfigError, ContractError, DimensionError
from .numcore import NEG_INF, LayerNorm, Module, Parameter, Tensor
from .numcore import tensor as T
from .numcore.module import xavier_uniform

LOG_FLOOR = 1e-12
POINTER_SCORINGS = ("tanh", "linear")


@dataclass
class FusionConfig:
    use_concat_fusion: bool = True
    use_pointer_fusion: bool = True
    use_pointer: bool = True

    def validate(self) -> None:
        if self.use_pointer_fusion and not self.use_pointer:
            raise ConfigError("fusion.use_pointer_fusion requires fusion.use_pointer")


@dataclass
class StepDistribution:
    """Per-step pieces of the output distribution, batched as ``(B, h, .)``.

    ``alpha`` and ``p_gen`` are None when the pointer is disabled.
    """

    p_vocab: Tensor
    p_w: Tensor
    alpha: Tensor | None = None
    p_gen: Tensor | None = None


# ---------------------------------------------------------------------------
# Concat fusion
# ---------------------------------------------------------------------------

def concat_fuse(H_A: Tensor, s_t: Tensor, article_mask: np.ndarray | None = None):
    """Append the style vector as the last memory row.

    Accepts ``(a, d)`` with ``(1, d)`` or batched ``(B, a, d)`` with ``(B, d)``.
    Returns the fused memory, plus the widened mask when ``article_mask`` is given.
    """
    if H_A.shape[-1] != s_t.shape[-1]:
        raise ContractError(f"concat_fuse: width mismatch {H_A.shape} vs {s_t.shape}")
    if H_A.ndim == 2:
        memory = T.concat([H_A, s_t.reshape(1, -1)], axis=0)
    else:
        memory = T.concat([H_A, s_t.reshape(s_t.shape[0], 1, s_t.shape[-1])], axis=1)
    if article_mask is None:
        return memory
    mask = np.asarray(article_mask, dtype=bool)
    extra = np.ones(mask.shape[:-1] + (1,), dtype=bool)
    return memory, np.concatenate([mask, extra], axis=-1)


# ---------------------------------------------------------------------------
# Decoder stack
# ---------------------------------------------------------------------------

class DecoderLayer(Module):
    """Post-norm: causal self-attention, cross-attention to memory, feed-forward."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.self_attention = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attention = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm3 = LayerNorm(cfg.d_model)
        self.dropout_rate = cfg.dropout_rate

    def __call__(self, x, target_mask, memory, memory_mask, rng=None):
        drop = lambda t: T.dropout(t, self.dropout_rate, rng, self.training)  # noqa: E731
        x = self.norm1(x + drop(self.self_attention(x, x, target_mask, causal=True, rng=rng)))
        x = self.norm2(x + drop(self.cross_attention(x, memory, memory_mask, rng=rng)))
        return self.norm3(x + drop(self.ffn(x)))


class Decoder(Module):
    def __init__(self, cfg: EncoderConfig, token_weight: Parameter, rng: np.random.Generator):
        self.embeddings = Embeddings(token_weight, cfg.max_positions, cfg.d_model, cfg.dropout_rate, rng)
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.vocab_proj = Parameter(xavier_uniform(rng, cfg.d_model, cfg.vocab_size))
        self.vocab_bias = Parameter(np.zeros(cfg.vocab_size))

    def states(self, target_in: np.ndarray, memory: Tensor, memory_mask: np.ndarray,
               target_mask: np.ndarray | None = None, rng=None) -> Tensor:
        """``D_H`` of shape ``(B, h, d)``; step t sees targets <= t and all memory."""
        target_in = np.asarray(target_in, dtype=np.int64)
        if target_mask is None:
            target_mask = np.ones(target_in.shape, dtype=bool)
        x = self.embeddings(target_in, rng)
        for layer in self.layers:
            x = layer(x, target_mask, memory, memory_mask, rng)
        return x


def decode_states(decoder: Decoder, target_shifted_ids, memory: Tensor, memory_mask=None) -> Tensor:
    """Unbatched convenience form: ``(h,)`` ids and ``(m, d)`` memory -> ``(h, d)``."""
    ids = np.asarray(target_shifted_ids, dtype=np.int64)[None, :]
    mem = memory.reshape(1, *memory.shape)
    mask = np.ones((1, memory.shape[0]), dtype=bool) if memory_mask is None else np.asarray(memory_mask)[None, :]
    out = decoder.states(ids, mem, mask)
    return out.reshape(out.shape[1], out.shape[2])


def vocab_distribution(d_H: Tensor, V: Tensor, b_vocab: Tensor) -> Tensor:
    """``softmax(d_H V + b_vocab)`` over the base vocabulary."""
    return T.softmax(d_H @ V + b_vocab, axis=-1)


# ---------------------------------------------------------------------------
# Pointer-generator
# ---------------------------------------------------------------------------

class PointerGenerator(Module):
    """Copy attention over article rows and the generation gate.

    ``scoring="tanh"`` scores position j for step i as
    ``v . tanh(W1 [H_A_j ; s] + W2 [d_i ; s] + b)``; ``scoring="linear"`` drops
    the tanh and ``v`` (``w1 . [H_A_j ; s] + w2 . [d_i ; s] + b``), in which
    case every term but ``w1 . H_A_j`` is constant over j and cancels in the
    softmax, so the copy attention ignores both the decoder state and the style.
    """

    def __init__(self, d_model: int, rng: np.random.Generator, scoring: str = "tanh"):
        if scoring not in POINTER_SCORINGS:
            raise ConfigError(f"pointer_scoring must be one of {POINTER_SCORINGS}, got {scoring!r}")
        self.scoring = scoring
        self.d_model = d_model
        width = d_model if scoring == "tanh" else 1
        self.w_alpha1 = Parameter(xavier_uniform(rng, 2 * d_model, width))
        self.w_alpha2 = Parameter(xavier_uniform(rng, 2 * d_model, width))
        self.b_alpha = Parameter(np.zeros(width))
        if scoring == "tanh":
            self.v_alpha = Parameter(xavier_uniform(rng, width, 1))
        self.w_gen1 = Parameter(xavier_uniform(rng, d_model, 1))
        self.w_gen2 = Parameter(xavier_uniform(rng, d_model, 1))
        self.w_gen3 = Parameter(xavier_uniform(rng, d_model, 1))
        self.b_gen = Parameter(np.zeros(1))

    def attention(self, H_A: Tensor, s_t: Tensor | None, D: Tensor, article_mask: np.ndarray) -> Tensor:
        """``alpha`` of shape ``(B, h, a)``; ``s_t`` None means the zero style vector."""
        d = self.d_model
        art = H_A @ self.w_alpha1[:d]  # (B, a, w)
        dec = D @ self.w_alpha2[:d]  # (B, h, w)
        if s_t is not None:
            style = s_t @ self.w_alpha1[d:] + s_t @ self.w_alpha2[d:]  # (B, w)
            dec = dec + style.reshape(style.shape[0], 1, style.shape[1])
        mask = np.asarray(article_mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ContractError("pointer attention: every article position is masked")
        B, a, w = art.shape
        h = dec.shape[1]
        if self.scoring == "tanh":
            pre = art.reshape(B, 1, a, w) + dec.reshape(B, h, 1, w) + self.b_alpha
            scores = (T.tanh(pre) @ self.v_alpha).reshape(B, h, a)
        else:
            scores = art.reshape(B, 1, a) + dec.reshape(B, h, 1) + self.b_alpha
        bias = np.where(mask, 0.0, NEG_INF)[:, None, :]
        return T.softmax(scores + bias, axis=-1)

    def gate(self, context: Tensor, D: Tensor, s_t: Tensor | None) -> Tensor:
        """``p_gen`` of shape ``(B, h, 1)``."""
        logit = context @ self.w_gen1 + D @ self.w_gen2 + self.b_gen
        if s_t is not None:
            style = s_t @ self.w_gen3
            logit = logit + style.reshape(style.shape[0], 1, 1)
        return T.sigmoid(logit)


def _batched(*tensors):
    return [t.reshape(1, *t.shape) if t is not None else None for t in tensors]


def pointer_attention(pointer: PointerGenerator, H_A: Tensor, s_t: Tensor, d_H: Tensor,
                      article_mask=None, pointer_fusion: bool = True) -> Tensor:
    """Unbatched form: ``(a, d)``, ``(1, d)``, ``(h, d)`` -> ``alpha (h, a)``."""
    if article_mask is None:
        article_mask = np.ones(H_A.shape[0], dtype=bool)
    HA, D = _batched(H_A, d_H)
    style = s_t.reshape(1, -1) if pointer_fusion else None
    alpha = pointer.attention(HA, style, D, np.asarray(article_mask)[None, :])
    return alpha.reshape(alpha.shape[1], alpha.shape[2])


def generation_probability(pointer: PointerGenerator, h_A_ctx: Tensor, d_H: Tensor, s_t: Tensor,
                           pointer_fusion: bool = True) -> Tensor:
    """Unbatched form: context ``(h, d)``, states ``(h, d)``, style ``(1, d)`` -> ``(h, 1)``."""
    ctx, D = _batched(h_A_ctx, d_H)
    style = s_t.reshape(1, -1) if pointer_fusion else None
    p = pointer.gate(ctx, D, style)
    return p.reshape(p.shape[1], 1)


def mixture_distribution(p_vocab: Tensor, alpha: Tensor, p_gen: Tensor, article_ids_extended, n_ext: int) -> Tensor:
    """``P_w = p_gen * P_vocab (padded with zeros over E) + (1 - p_gen) * copy mass``.

    Copy mass of article position j lands on its extended id; repeats add up.
    ``p_vocab`` is ``(..., V)``, ``alpha`` ``(..., a)``, ``p_gen`` ``(..., 1)``;
    ``article_ids_extended`` must broadcast against ``alpha``.
    """
    V = p_vocab.shape[-1]
    ids = np.asarray(article_ids_extended, dtype=np.int64)
    if alpha.ndim == 3 and ids.ndim == 2:
        ids = ids[:, None, :]
    generated = p_gen * p_vocab
    if n_ext:
        generated = T.concat([generated, Tensor(np.zeros(p_vocab.shape[:-1] + (n_ext,)))], axis=-1)
    copied = T.scatter_add((1.0 - p_gen) * alpha, ids, V + n_ext)
    return generated + copied


def teacher_forcing_loss(p_w: Tensor, target_ids: np.ndarray, target_mask: np.ndarray | None = None) -> Tensor:
    """Mean over unpadded steps of ``-log max(P_w(target), 1e-12)``."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if target_ids.shape != p_w.shape[:-1]:
        raise DimensionError(f"targets {target_ids.shape} do not match distributions {p_w.shape}")
    if target_ids.size and (target_ids.min() < 0 or target_ids.max() >= p_w.shape[-1]):
        raise ContractError(f"target id outside the {p_w.shape[-1]}-way extended vocabulary")
    mask = np.ones(target_ids.shape) if target_mask is None else np.asarray(target_mask, dtype=np.float64)
    n = mask.sum()
    if n == 0:
        raise ContractError("teacher_forcing_loss: no unpadded target steps")
    probs = T.gather(p_w, target_ids[..., None], axis=-1).reshape(target_ids.shape)
    nll = -T.log(T.maximum(probs, LOG_FLOOR))
    return (nll * mask).sum() * (1.0 / n)
