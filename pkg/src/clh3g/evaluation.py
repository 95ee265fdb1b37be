"""Automatic metrics (ROUGE-1/2/L, corpus BLEU) and the contrastive style classifier."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .contrastive import ProjectionHead, nt_xent_loss, partner_index
from .corpus import CLS_ID, AuthorRecord, Vocabulary, build_vocab, tokenize, _pad
from .encoder import Encoder, EncoderConfig
from .errors import ConfigError, ContractError, TrainingError
from .numcore import Adam, Module, Tensor, no_grad

Tokens = Sequence[str]


# ---------------------------------------------------------------------------
# ROUGE / BLEU
# ---------------------------------------------------------------------------

def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: int, n_hyp: int, n_ref: int) -> float:
    if n_hyp == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    p, r = overlap / n_hyp, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n(hypothesis: Tokens, reference: Tokens, n: int) -> float:
    """F1 of clipped n-gram overlap; 0 when either side has no n-grams."""
    if n not in (1, 2):
        raise ContractError(f"rouge_n supports n in {{1, 2}}, got {n}")
    hyp, ref = ngrams(hypothesis, n), ngrams(reference, n)
    overlap = sum((hyp & ref).values())
    return _f1(overlap, sum(hyp.values()), sum(ref.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Tokens, reference: Tokens) -> float:
    return _f1(lcs_length(hypothesis, reference), len(hypothesis), len(reference))


def bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4,
         smoothing: str | None = None) -> float:
    """Corpus BLEU: geometric mean of clipped n-gram precisions times brevity penalty.

    Without smoothing any zero precision gives 0. ``smoothing="add1"`` adds one to
    numerator and denominator for n > 1.
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"bleu: {len(hypotheses)} hypotheses vs {len(references)} references")
    if smoothing not in (None, "add1"):
        raise ConfigError(f"unknown BLEU smoothing {smoothing!r}")
    matches, totals = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = ngrams(hyp, n), ngrams(ref, n)
            matches[n - 1] += sum((h & r).values())
            totals[n - 1] += sum(h.values())
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if smoothing == "add1" and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


@dataclass
class MetricReport:
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float
    bleu: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_texts(hypotheses: Sequence[str], references: Sequence[str]) -> MetricReport:
    """ROUGE as mean per-sample F1, BLEU at corpus level; all scaled to [0, 100]."""
    if len(hypotheses) != len(references):
        raise ContractError("evaluate_texts: hypothesis/reference count mismatch")
    hyps = [tokenize(h) for h in hypotheses]
    refs = [tokenize(r) for r in references]
    n = len(hyps)
    mean = lambda xs: 100.0 * sum(xs) / n if n else 0.0  # noqa: E731
    return MetricReport(
        rouge1_f=mean([rouge_n(h, r, 1) for h, r in zip(hyps, refs)]),
        rouge2_f=mean([rouge_n(h, r, 2) for h, r in zip(hyps, refs)]),
        rougeL_f=mean([rouge_l(h, r) for h, r in zip(hyps, refs)]),
        bleu=100.0 * bleu(hyps, refs),
        n_samples=n,
    )


# ---------------------------------------------------------------------------
# Contrastive style classifier
# ---------------------------------------------------------------------------

@dataclass
class StyleClassifierConfig:
    d_model: int = 32
    n_layers: int = 1
    n_heads: int = 4
    d_ff: int = 64
    dropout: float = 0.0
    max_headline_len: int = 16
    vocab_size: int = 2000
    tau: float = 0.1
    lr: float = 3e-3
    steps: int = 1000
    batch_authors: int = 16
    validate_every: int = 50
    val_fraction: float = 0.2
    val_pairs: int = 200
    threshold: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 0 or self.validate_every < 1:
            raise ConfigError("style.steps must be >= 0 and style.validate_every >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("style.val_fraction must lie in (0, 1)")
        if self.tau <= 0:
            raise ConfigError("style.tau must be > 0")


class StyleClassifier(Module):
    """Encoder plus projection head; scores headline pairs by cosine similarity."""

    def __init__(self, config: StyleClassifierConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        enc_cfg = EncoderConfig(len(vocab), config.d_model, config.n_layers, config.n_heads, config.d_ff,
                                config.dropout, config.max_headline_len + 1)
        self.encoder = Encoder(enc_cfg, rng)
        self.projection = ProjectionHead(config.d_model, rng)

    def _ids(self, headlines: Sequence[Sequence[str]]):
        rows = [[CLS_ID] + self.vocab.encode(list(h)[: self.config.max_headline_len]) for h in headlines]
        return _pad(rows)

    def embed(self, headlines: Sequence[Sequence[str]], rng=None) -> Tensor:
        ids, mask = self._ids(headlines)
        return self.projection(self.encoder(ids, mask, rng)[:, 0, :])

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            with no_grad():
                z = self.embed([tokenize(t) for t in texts]).data
        finally:
            self.train(was)
        return z


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.sqrt(u @ u)), float(np.sqrt(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip((u @ v) / (nu * nv), -1.0, 1.0))


def style_score(classifier: StyleClassifier, headline_a: str, headline_b: str) -> float:
    """Cosine similarity of projected [CLS] embeddings, in [-1, 1]."""
    za, zb = classifier.embed_texts([headline_a, headline_b])
    return _cosine(za, zb)


def _pair_scores(classifier: StyleClassifier, pairs: Sequence[tuple[str, str]]) -> np.ndarray:
    if not pairs:
        return np.zeros(0)
    texts = sorted({t for p in pairs for t in p})
    z = dict(zip(texts, classifier.embed_texts(texts)))
    return np.array([_cosine(z[a], z[b]) for a, b in pairs])


def build_validation_pairs(groups: Mapping[str, Sequence[str]], n_pairs: int,
                           rng: np.random.Generator) -> tuple[list[tuple[str, str]], list[bool]]:
    """Equal numbers of same-author positives and cross-author negatives."""
    multi = [a for a, hs in groups.items() if len(hs) >= 2]
    authors = list(groups)
    if not multi or len(authors) < 2:
        raise ContractError("validation pairs need an author with >= 2 headlines and >= 2 authors")
    pairs, labels = [], []
    for _ in range(n_pairs):
        a = multi[int(rng.integers(len(multi)))]
        i, j = rng.choice(len(groups[a]), size=2, replace=False)
        pairs.append((groups[a][i], groups[a][j]))
        labels.append(True)
        x, y = rng.choice(len(authors), size=2, replace=False)
        gx, gy = groups[authors[x]], groups[authors[y]]
        pairs.append((gx[int(rng.integers(len(gx)))], gy[int(rng.integers(len(gy)))]))
        labels.append(False)
    return pairs, labels


def pair_accuracy(scores: np.ndarray, labels: Sequence[bool], threshold: float = 0.0) -> float:
    labels = np.asarray(labels, dtype=bool)
    return float(np.mean((scores > threshold) == labels)) if len(labels) else 0.0


@dataclass
class StyleTrainingReport:
    best_step: int
    best_accuracy: float
    history: list[dict] = field(default_factory=list)


def train_style_classifier(
    train_headline_groups: Mapping[str, Sequence[str]],
    config: StyleClassifierConfig | None = None,
    val_headline_groups: Mapping[str, Sequence[str]] | None = None,
) -> tuple[StyleClassifier, StyleTrainingReport]:
    """Contrastive training on random same-author pairs, one pair per author per step.

    Without explicit validation groups a ``val_fraction`` slice of each author's
    headlines is held out. The parameters with the best validation pair accuracy
    are kept.
    """
    config = config or StyleClassifierConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    groups = {a: list(hs) for a, hs in train_headline_groups.items()}
    if val_headline_groups is None:
        val_groups, train_groups = {}, {}
        for a, hs in groups.items():
            order = rng.permutation(len(hs))
            n_val = max(2, int(len(hs) * config.val_fraction)) if len(hs) >= 4 else 0
            val_groups[a] = [hs[i] for i in order[:n_val]]
            train_groups[a] = [hs[i] for i in order[n_val:]]
        val_groups = {a: hs for a, hs in val_groups.items() if hs}
    else:
        train_groups, val_groups = groups, {a: list(hs) for a, hs in val_headline_groups.items() if hs}
    trainable = sorted(a for a, hs in train_groups.items() if len(hs) >= 2)
    if len(trainable) < 2:
        raise TrainingError("style classifier needs at least two authors with >= 2 headlines")

    vocab = build_vocab([AuthorRecord(a, [("", h) for h in hs]) for a, hs in train_groups.items()],
                        config.vocab_size)
    clf = StyleClassifier(config, vocab)
    optim = Adam(list(clf.named_parameters()))
    val_pairs, val_labels = build_validation_pairs(val_groups or train_groups, config.val_pairs,
                                                   np.random.default_rng([config.seed, 1]))
    tok_groups = {a: [tokenize(h) for h in train_groups[a]] for a in trainable}

    def validate(step: int) -> float:
        return pair_accuracy(_pair_scores(clf, val_pairs), val_labels, config.threshold)

    best_acc = validate(0)
    best_state, best_step = clf.state_dict(), 0
    history = [{"step": 0, "val_accuracy": best_acc}]
    clf.train()
    for step in range(1, config.steps + 1):
        step_rng = np.random.default_rng([config.seed, 2, step])
        n = min(config.batch_authors, len(trainable))
        authors = [trainable[i] for i in step_rng.choice(len(trainable), size=n, replace=False)]
        heads = []
        for a in authors:
            i, j = step_rng.choice(len(tok_groups[a]), size=2, replace=False)
            heads += [tok_groups[a][i], tok_groups[a][j]]
        clf.zero_grad()
        loss = nt_xent_loss(clf.embed(heads, step_rng), partner_index(n), config.tau)
        loss.backward()
        optim.step(config.lr)
        if step % config.validate_every == 0 or step == config.steps:
            acc = validate(step)
            history.append({"step": step, "loss": loss.item(), "val_accuracy": acc})
            if acc > best_acc:
                best_acc, best_state, best_step = acc, clf.state_dict(), step
    clf.load_state_dict(best_state)
    clf.eval()
    return clf, StyleTrainingReport(best_step, best_acc, history)


@dataclass
class StyleReport:
    accuracy: float  # [0, 100]
    average_score: float  # [-100, 100]
    n_pairs: int
    n_skipped: int

    def to_dict(self) -> dict:
        return asdict(self)


def style_eval(
    classifier: StyleClassifier,
    generated: Sequence[str],
    histories_per_sample: Sequence[Sequence[str]],
    negative_pool: Sequence[Sequence[str]],
    threshold: float = 0.0,
    seed: int = 0,
) -> StyleReport:
    """Pair each generated headline with each of its histories (positives) and
    with as many headlines drawn from ``negative_pool[i]`` (other authors).

    Accuracy is over all pairs at ``threshold``; the average score is over
    positives only. Samples without histories are skipped and counted.
    """
    if not len(generated) == len(histories_per_sample) == len(negative_pool):
        raise ContractError("style_eval: generated/histories/negative_pool lengths differ")
    rng = np.random.default_rng(seed)
    pos_pairs, neg_pairs, skipped = [], [], 0
    for gen, hists, negs in zip(generated, histories_per_sample, negative_pool):
        if not hists:
            skipped += 1
            continue
        pos_pairs += [(gen, h) for h in hists]
        if negs:
            neg_pairs += [(gen, negs[int(i)]) for i in rng.integers(len(negs), size=len(hists))]
    pos = _pair_scores(classifier, pos_pairs)
    neg = _pair_scores(classifier, neg_pairs)
    scores = np.concatenate([pos, neg])
    labels = [True] * len(pos) + [False] * len(neg)
    return StyleReport(
        accuracy=100.0 * pair_accuracy(scores, labels, threshold),
        average_score=100.0 * float(pos.mean()) if len(pos) else 0.0,
        n_pairs=len(labels),
        n_skipped=skipped,
    )


def negative_pools(author_ids: Sequence[str], groups: Mapping[str, Sequence[str]]) -> list[list[str]]:
    """For each sample, every training headline written by someone else."""
    return [[h for a, hs in groups.items() if a != author for h in hs] for author in author_ids]
