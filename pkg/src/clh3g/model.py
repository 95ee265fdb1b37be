"""The full headline generator and its checkpoint (de)serialisation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .contrastive import PairChoice, ProjectionHead, nt_xent_loss, partner_index
from .corpus import UNK_ID, Batch, Vocabulary
from .decoder import (
    POINTER_SCORINGS,
    Decoder,
    FusionConfig,
    PointerGenerator,
    StepDistribution,
    concat_fuse,
    mixture_distribution,
    teacher_forcing_loss,
    vocab_distribution,
)
from .encoder import Encoder, EncoderConfig, batched_style_vectors
from .errors import ConfigError
from .numcore import Module, Parameter, Tensor, load_checkpoint, save_checkpoint
from .numcore import tensor as T
from .numcore.module import xavier_uniform


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    max_positions: int = 160
    pointer_scoring: str = "tanh"
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def validate(self) -> None:
        self.encoder_config(1).validate()
        self.fusion.validate()
        if self.pointer_scoring not in POINTER_SCORINGS:
            raise ConfigError(f"model.pointer_scoring must be one of {POINTER_SCORINGS}")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff,
                             self.dropout, self.max_positions)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        fusion = FusionConfig(**d.pop("fusion", {}))
        return cls(fusion=fusion, **d)


@dataclass
class EncodedSource:
    """Everything the decoder needs about the inputs, computed once per batch."""

    H_A: Tensor
    article_mask: np.ndarray
    style: Tensor  # (B, d); zero rows for samples without histories
    memory: Tensor
    memory_mask: np.ndarray
    article_ext: np.ndarray
    n_ext: int

    def repeat(self, n: int) -> EncodedSource:
        """Tile a single-sample encoding ``n`` times along the batch axis (no grad)."""
        rep = lambda t: Tensor(np.repeat(t.data, n, axis=0))  # noqa: E731
        return EncodedSource(rep(self.H_A), np.repeat(self.article_mask, n, axis=0), rep(self.style),
                             rep(self.memory), np.repeat(self.memory_mask, n, axis=0),
                             np.repeat(self.article_ext, n, axis=0), self.n_ext)


@dataclass
class ForwardResult:
    dist: StepDistribution
    tf_loss: Tensor
    cl_loss: Tensor | None
    n_cl_pairs: int


class HeadlineGenerator(Module):
    """Encoder, decoder, optional pointer-generator and the contrastive projection head.

    Token embeddings are shared by encoder and decoder inputs; the output
    projection is a separate matrix.
    """

    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0):
        config.validate()
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        enc_cfg = config.encoder_config(len(vocab))
        token = Parameter(xavier_uniform(rng, len(vocab), config.d_model))
        self.encoder = Encoder(enc_cfg, rng, token)
        self.decoder = Decoder(enc_cfg, token, rng)
        self.pointer = PointerGenerator(config.d_model, rng, config.pointer_scoring) if config.fusion.use_pointer else None
        self.projection = ProjectionHead(config.d_model, rng)

    @property
    def fusion(self) -> FusionConfig:
        return self.config.fusion

    # -- encoding -----------------------------------------------------------
    def _encode_headlines(self, batch: Batch, extra_targets: Sequence[int], rng) -> tuple[Tensor | None, np.ndarray]:
        """[CLS] rows for every present history, then for each sample in ``extra_targets``."""
        hist_b, hist_k = np.nonzero(batch.history_present)
        rows = [batch.history_ids[hist_b, hist_k]]
        masks = [batch.history_mask[hist_b, hist_k]]
        if len(extra_targets):
            rows.append(batch.target_cls[list(extra_targets)])
            masks.append(batch.target_cls_mask[list(extra_targets)])
        n_rows = sum(len(r) for r in rows)
        if n_rows == 0:
            return None, hist_b
        width = max(r.shape[1] for r in rows if len(r))
        ids = np.zeros((n_rows, width), dtype=np.int64)
        mask = np.zeros((n_rows, width), dtype=bool)
        at = 0
        for r, m in zip(rows, masks):
            ids[at : at + len(r), : r.shape[1]] = r
            mask[at : at + len(r), : m.shape[1]] = m
            at += len(r)
        out = self.encoder(ids, mask, rng)
        return out[:, 0, :], hist_b

    def encode_source(self, batch: Batch, rng=None, headline_rows=None) -> EncodedSource:
        H_A = self.encoder(batch.article_ids, batch.article_mask, rng)
        B, d = batch.size, self.config.d_model
        if headline_rows is None:
            headline_rows, owner = self._encode_headlines(batch, [], rng)
        else:
            headline_rows, owner = headline_rows
        n_hist = len(owner)
        if n_hist:
            style = batched_style_vectors(headline_rows[:n_hist], owner, B, d)
        else:
            style = Tensor(np.zeros((B, d)))
        if self.fusion.use_concat_fusion:
            memory, memory_mask = concat_fuse(H_A, style, batch.article_mask)
        else:
            memory, memory_mask = H_A, batch.article_mask
        return EncodedSource(H_A, batch.article_mask, style, memory, memory_mask, batch.article_ext, batch.n_ext)

    # -- decoding -----------------------------------------------------------
    def step_distributions(self, enc: EncodedSource, target_in: np.ndarray,
                           target_mask: np.ndarray | None = None, rng=None) -> StepDistribution:
        D = self.decoder.states(target_in, enc.memory, enc.memory_mask, target_mask, rng)
        p_vocab = vocab_distribution(D, self.decoder.vocab_proj, self.decoder.vocab_bias)
        if self.pointer is None:
            p_w = p_vocab
            if enc.n_ext:
                p_w = T.concat([p_vocab, Tensor(np.zeros(p_vocab.shape[:-1] + (enc.n_ext,)))], axis=-1)
            return StepDistribution(p_vocab, p_w)
        style = enc.style if self.fusion.use_pointer_fusion else None
        alpha = self.pointer.attention(enc.H_A, style, D, enc.article_mask)
        context = alpha @ enc.H_A
        p_gen = self.pointer.gate(context, D, style)
        p_w = mixture_distribution(p_vocab, alpha, p_gen, enc.article_ext, enc.n_ext)
        return StepDistribution(p_vocab, p_w, alpha, p_gen)

    def loss_targets(self, batch: Batch) -> np.ndarray:
        """Extended-id targets; without a pointer, copy-only ids fall back to UNK."""
        if self.pointer is None:
            return np.where(batch.target_out >= batch.vocab_size, UNK_ID, batch.target_out)
        return batch.target_out

    # -- training objective -------------------------------------------------
    def forward(self, batch: Batch, cl_pairs: Sequence[PairChoice] = (), tau: float = 0.1,
                rng=None) -> ForwardResult:
        """Teacher-forcing loss and, when pairs are given, the contrastive loss.

        Pairs are kept only for the first sample of each author so that every
        other headline in the contrastive batch is a valid negative. The style
        vector is built from histories only; the target headline is encoded
        solely for the pairs that draw it.
        """
        seen, pairs = set(), []
        for p in cl_pairs:
            author = batch.samples[p.sample].author_id
            if author not in seen:
                seen.add(author)
                pairs.append(p)
        n_hist = batch.history_present.sum(axis=1)
        targets_needed = sorted({p.sample for p in pairs if n_hist[p.sample] in (p.first, p.second)})
        rows, owner = self._encode_headlines(batch, targets_needed, rng) if (
            batch.history_present.any() or targets_needed) else (None, np.zeros(0, dtype=np.int64))
        enc = self.encode_source(batch, rng, headline_rows=(rows, owner))
        dist = self.step_distributions(enc, batch.target_in, batch.target_mask, rng)
        tf_loss = teacher_forcing_loss(dist.p_w, self.loss_targets(batch), batch.target_mask)

        cl_loss = None
        if pairs:
            hist_b, hist_k = np.nonzero(batch.history_present)
            row_of = {(int(b), int(k)): i for i, (b, k) in enumerate(zip(hist_b, hist_k))}
            target_row = {b: len(hist_b) + i for i, b in enumerate(targets_needed)}

            def locate(b: int, pos: int) -> int:
                return target_row[b] if pos == n_hist[b] else row_of[(b, pos)]

            chosen = [locate(p.sample, q) for p in pairs for q in (p.first, p.second)]
            z = self.projection(rows[np.asarray(chosen)])
            cl_loss = nt_xent_loss(z, partner_index(len(pairs)), tau)
        return ForwardResult(dist, tf_loss, cl_loss, len(pairs))

    def generation_parameters(self) -> list[Parameter]:
        """Everything except the projection head, i.e. what inference depends on."""
        head = {id(p) for p in self.projection.parameters()}
        return [p for p in self.parameters() if id(p) not in head]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(path, model: HeadlineGenerator, extra_config: dict | None = None,
               metadata: dict | None = None, optimizer_state: dict[str, np.ndarray] | None = None) -> None:
    tensors = {f"param/{k}": v for k, v in model.state_dict().items()}
    for k, v in (optimizer_state or {}).items():
        tensors[f"optim/{k}"] = v
    config = {"model": model.config.to_dict(), **(extra_config or {})}
    meta = {"vocab": model.vocab.to_list(), **(metadata or {})}
    save_checkpoint(path, tensors, config, meta)


def load_model(path) -> tuple[HeadlineGenerator, dict, dict, dict[str, np.ndarray]]:
    """Return ``(model, config, metadata, optimizer_state)``."""
    tensors, config, meta = load_checkpoint(path)
    model = HeadlineGenerator(ModelConfig.from_dict(config["model"]), Vocabulary(meta["vocab"]))
    model.load_state_dict({k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")})
    optim = {k[len("optim/"):]: v for k, v in tensors.items() if k.startswith("optim/")}
    return model, config, meta, optim
