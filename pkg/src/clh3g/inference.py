"""Beam-search decoding with length penalty over the extended vocabulary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import (BOS_ID, CLS_ID, EOS_ID, PAD_ID, UNK_ID, Batch, HeadlineDataset, Sample,
                     detokenize, make_batch, tokenize)
from .errors import ConfigError, ContractError
from .numcore import no_grad

LENGTH_PENALTIES = ("gnmt", "power")
# never proposed during search
BANNED_IDS = (PAD_ID, BOS_ID, CLS_ID)


@dataclass
class InferenceConfig:
    beam_size: int = 4
    length_penalty: float = 1.5
    max_len: int = 16
    penalty_form: str = "gnmt"

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.length_penalty < 0:
            raise ConfigError(f"length_penalty must be >= 0, got {self.length_penalty}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if self.penalty_form not in LENGTH_PENALTIES:
            raise ConfigError(f"penalty_form must be one of {LENGTH_PENALTIES}")


def length_penalty(length: int, alpha: float, form: str = "gnmt") -> float:
    """``((5 + length) / 6) ** alpha`` (``form="gnmt"``) or ``length ** alpha`` (``"power"``)."""
    if length < 1:
        raise ContractError(f"length must be >= 1, got {length}")
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    if form == "gnmt":
        return ((5.0 + length) / 6.0) ** alpha
    if form == "power":
        return float(length) ** alpha
    raise ConfigError(f"unknown length penalty form {form!r}")


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    score: float = 0.0  # penalised, filled in when finished


@dataclass
class Beam:
    width: int
    hypotheses: list[Hypothesis] = field(default_factory=lambda: [Hypothesis([], 0.0)])
    finished: list[Hypothesis] = field(default_factory=list)


def _rank_key(h: Hypothesis, use_score: bool):
    return (-(h.score if use_score else h.logprob), h.tokens)


def beam_search(model, batch: Batch, beam_size: int = 4, alpha: float = 1.5, max_len: int = 16,
                penalty_form: str = "gnmt") -> Hypothesis:
    """Decode the single sample in ``batch``.

    At each step every live hypothesis is expanded over the whole extended
    vocabulary; the ``beam_size`` best candidates by summed log-probability are
    kept (ties go to the lexicographically smaller token sequence). Candidates
    ending in EOS, and all candidates at ``max_len``, move to the finished list
    and never extend again. The finished hypothesis with the highest penalised
    score ``logprob / length_penalty(len)`` is returned, where the length counts
    generated tokens including EOS.
    """
    if beam_size < 1:
        raise ConfigError(f"beam_size must be >= 1, got {beam_size}")
    if batch.size != 1:
        raise ContractError("beam_search decodes one sample at a time")
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            enc = model.encode_source(batch)
            beam = Beam(beam_size)
            V = batch.vocab_size
            for step in range(max_len):
                live = beam.hypotheses
                prefixes = np.array([[BOS_ID] + [t if t < V else UNK_ID for t in h.tokens] for h in live],
                                    dtype=np.int64)
                dist = model.step_distributions(enc.repeat(len(live)), prefixes)
                with np.errstate(divide="ignore"):
                    logp = np.log(dist.p_w.data[:, -1, :])
                logp[:, list(BANNED_IDS)] = -np.inf
                base = np.array([h.logprob for h in live])[:, None] + logp
                flat = base.reshape(-1)
                finite = np.flatnonzero(np.isfinite(flat))
                # ties: all live prefixes have equal length, so comparing
                # (prefix lexicographic rank, token) is lexicographic on the sequence
                lex_rank = np.empty(len(live), dtype=np.int64)
                lex_rank[sorted(range(len(live)), key=lambda i: live[i].tokens)] = np.arange(len(live))
                parent_rank = lex_rank[finite // logp.shape[1]]
                order = finite[np.lexsort((finite % logp.shape[1], parent_rank, -flat[finite]))]
                chosen = order[:beam_size]
                candidates = []
                for idx in chosen:
                    parent, tok = divmod(int(idx), logp.shape[1])
                    candidates.append(Hypothesis(live[parent].tokens + [tok], float(flat[idx])))
                candidates.sort(key=lambda h: _rank_key(h, False))
                next_live = []
                for cand in candidates:
                    if cand.tokens[-1] == EOS_ID or step == max_len - 1:
                        cand.score = cand.logprob / length_penalty(len(cand.tokens), alpha, penalty_form)
                        beam.finished.append(cand)
                    else:
                        next_live.append(cand)
                beam.hypotheses = next_live
                if not next_live:
                    break
    finally:
        model.train(was_training)
    return min(beam.finished, key=lambda h: _rank_key(h, True))


def tokens_to_text(token_ids: Sequence[int], batch: Batch, vocab) -> list[str]:
    """Drop EOS and resolve extended ids to the article's surface forms."""
    out = []
    for t in token_ids:
        if t == EOS_ID:
            break
        out.append(batch.ext_token(t) if t >= batch.vocab_size else vocab.itos[t])
    return out


def generate_headline(model, article_text: str, history_texts: Iterable[str] = (),
                      config: InferenceConfig | None = None, max_article_len: int = 128,
                      max_headline_len: int = 16) -> str:
    """Tokenise, encode, beam-search and detokenise one headline."""
    config = config or InferenceConfig()
    config.validate()
    article = tokenize(article_text)
    if not article:
        raise ContractError("generate_headline: empty article")
    histories = [tokenize(h) for h in history_texts]
    sample = Sample(article[:max_article_len], [h for h in histories if h], [], "")
    batch = make_batch([sample], model.vocab, max_article_len, max_headline_len)
    hyp = beam_search(model, batch, config.beam_size, config.length_penalty, config.max_len, config.penalty_form)
    return detokenize(tokens_to_text(hyp.tokens, batch, model.vocab))


@dataclass
class Generation:
    sample_id: int
    generated_headline: str
    penalized_score: float
    histories: list[str]
    reference: str
    author_id: str

    def to_json(self) -> str:
        return json.dumps(
            {"sample_id": self.sample_id, "generated_headline": self.generated_headline,
             "penalized_score": self.penalized_score, "histories": self.histories,
             "reference": self.reference, "author_id": self.author_id},
            sort_keys=True, ensure_ascii=False,
        )


def generate_samples(model, dataset: HeadlineDataset, samples: Sequence[Sample],
                     config: InferenceConfig) -> list[Generation]:
    config.validate()
    out = []
    for s in samples:
        batch = dataset.batch([s])
        hyp = beam_search(model, batch, config.beam_size, config.length_penalty, config.max_len, config.penalty_form)
        out.append(Generation(
            s.sample_id, detokenize(tokens_to_text(hyp.tokens, batch, model.vocab)), hyp.score,
            [detokenize(h) for h in s.histories], detokenize(s.target), s.author_id,
        ))
    return out


def write_generations(gens: Iterable[Generation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in gens:
            fh.write(g.to_json() + "\n")


def read_generations(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
