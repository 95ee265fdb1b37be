"""Corpus loading, vocabulary, history sampling, batching and synthetic corpora.

The on-disk corpus is UTF-8 JSON lines, one article per line::

    {"author_id": "a03", "article": "...", "headline": "..."}

The sample id of an article is its zero-based line number.
"""

from __future__ import annotations

import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, CorpusError

PAD, UNK, BOS, EOS, CLS = "<pad>", "<unk>", "<bos>", "<eos>", "[CLS]"
RESERVED = (PAD, UNK, BOS, EOS, CLS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, CLS_ID = range(5)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class AuthorRecord:
    author_id: str
    articles: list[tuple[str, str]] = field(default_factory=list)
    # corpus line number of each article, parallel to ``articles``
    sample_ids: list[int] = field(default_factory=list)

    @property
    def headlines(self) -> list[str]:
        return [h for _, h in self.articles]


def load_corpus(path: str | os.PathLike) -> list[AuthorRecord]:
    """Read a JSON-lines corpus and group it by author (first-seen author order)."""
    records: dict[str, AuthorRecord] = {}
    line_no = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                raise CorpusError(f"{path}:{line_no}: blank line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{line_no}: expected a JSON object")
            for key in ("author_id", "article", "headline"):
                if key not in obj:
                    raise CorpusError(f"{path}:{line_no}: missing field {key!r}")
                if not isinstance(obj[key], str):
                    raise CorpusError(f"{path}:{line_no}: field {key!r} must be a string")
            rec = records.setdefault(obj["author_id"], AuthorRecord(obj["author_id"]))
            rec.articles.append((obj["article"], obj["headline"]))
            rec.sample_ids.append(line_no - 1)
    if not records:
        raise CorpusError(f"{path}: empty corpus")
    return list(records.values())


def write_corpus(records: Iterable[AuthorRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            for article, headline in rec.articles:
                fh.write(json.dumps({"author_id": rec.author_id, "article": article, "headline": headline},
                                    ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ConfigError("vocabulary must start with the reserved tokens " + ", ".join(RESERVED))
        self.itos = list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos)


def build_vocab(records: Iterable[AuthorRecord], max_size: int) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically."""
    if max_size <= len(RESERVED):
        raise ConfigError(f"vocab max_size must exceed {len(RESERVED)} reserved tokens, got {max_size}")
    counts: Counter[str] = Counter()
    for rec in records:
        for article, headline in rec.articles:
            counts.update(tokenize(article))
            counts.update(tokenize(headline))
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(RESERVED) + [tok for tok, _ in ranked[: max_size - len(RESERVED)]])


# ---------------------------------------------------------------------------
# Samples and history sampling
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    """One generation instance, held as surface tokens so OOV words survive."""

    article: list[str]
    histories: list[list[str]]
    target: list[str]
    author_id: str
    sample_id: int = -1


def sample_histories(
    record: AuthorRecord,
    target_index: int,
    k_max: int,
    rng: np.random.Generator,
    allowed: Iterable[int] | None = None,
) -> list[str]:
    """Draw k ~ U{1..min(k_max, n)} headlines without replacement from the pool.

    The pool is the author's articles (restricted to positions in ``allowed``
    when given) minus the target. An empty pool yields no histories.
    """
    if k_max < 1:
        raise ConfigError(f"k_max must be >= 1, got {k_max}")
    candidates = range(len(record.articles)) if allowed is None else sorted(set(allowed))
    pool = [i for i in candidates if i != target_index]
    if not pool:
        return []
    k = int(rng.integers(1, min(k_max, len(pool)) + 1))
    chosen = rng.choice(len(pool), size=k, replace=False)
    return [record.articles[pool[i]][1] for i in chosen]


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    samples: list[Sample]
    vocab_size: int
    article_ids: np.ndarray  # (B, a) base ids, OOV -> UNK
    article_ext: np.ndarray  # (B, a) extended ids, OOV -> >= |V|
    article_mask: np.ndarray  # (B, a) bool
    history_ids: np.ndarray  # (B, K, 1 + L_head), each row starts with CLS
    history_mask: np.ndarray  # (B, K, 1 + L_head)
    history_present: np.ndarray  # (B, K) bool
    target_in: np.ndarray  # (B, h) BOS + target, OOV -> UNK
    target_out: np.ndarray  # (B, h) target + EOS, extended ids
    target_mask: np.ndarray  # (B, h)
    target_cls: np.ndarray  # (B, 1 + L_head) CLS + target for the contrastive pool
    target_cls_mask: np.ndarray
    ext_tokens: list[str]  # ext_tokens[i] has extended id |V| + i

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def n_ext(self) -> int:
        return len(self.ext_tokens)

    @property
    def extended_vocab(self) -> dict[str, int]:
        return {tok: self.vocab_size + i for i, tok in enumerate(self.ext_tokens)}

    def ext_token(self, ext_id: int) -> str:
        return self.ext_tokens[ext_id - self.vocab_size]


def _pad(rows: list[list[int]], width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    width = max([len(r) for r in rows] + [1]) if width is None else width
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = True
    return ids, mask


def make_batch(samples: Sequence[Sample], vocab: Vocabulary, max_article_len: int, max_headline_len: int) -> Batch:
    """Truncate, encode and pad; OOV article tokens get batch-level extended ids."""
    if not samples:
        raise CorpusError("make_batch needs at least one sample")
    V = len(vocab)
    ext: dict[str, int] = {}
    art_base, art_ext = [], []
    for s in samples:
        toks = s.article[:max_article_len]
        base = vocab.encode(toks)
        extended = []
        for tok, idx in zip(toks, base):
            if idx == UNK_ID and tok not in vocab:
                idx = ext.setdefault(tok, V + len(ext))
            extended.append(idx)
        art_base.append(base)
        art_ext.append(extended)
    article_ids, article_mask = _pad(art_base)
    article_ext, _ = _pad(art_ext, article_ids.shape[1])

    K = max([len(s.histories) for s in samples] + [1])
    hist_width = 1 + max([len(h[:max_headline_len]) for s in samples for h in s.histories] + [0])
    history_ids = np.full((len(samples), K, hist_width), PAD_ID, dtype=np.int64)
    history_mask = np.zeros_like(history_ids, dtype=bool)
    history_present = np.zeros((len(samples), K), dtype=bool)
    for b, s in enumerate(samples):
        for k, h in enumerate(s.histories):
            row = [CLS_ID] + vocab.encode(h[:max_headline_len])
            history_ids[b, k, : len(row)] = row
            history_mask[b, k, : len(row)] = True
            history_present[b, k] = True

    tin, tout, tcls = [], [], []
    for s in samples:
        toks = s.target[:max_headline_len]
        base = vocab.encode(toks)
        extended = [ext.get(t, i) if i == UNK_ID else i for t, i in zip(toks, base)]
        tin.append([BOS_ID] + base)
        tout.append(extended + [EOS_ID])
        tcls.append([CLS_ID] + base)
    target_in, target_mask = _pad(tin)
    target_out, _ = _pad(tout, target_in.shape[1])
    target_cls, target_cls_mask = _pad(tcls)

    ext_tokens = [None] * len(ext)
    for tok, idx in ext.items():
        ext_tokens[idx - V] = tok
    return Batch(
        samples=list(samples), vocab_size=V,
        article_ids=article_ids, article_ext=article_ext, article_mask=article_mask,
        history_ids=history_ids, history_mask=history_mask, history_present=history_present,
        target_in=target_in, target_out=target_out, target_mask=target_mask,
        target_cls=target_cls, target_cls_mask=target_cls_mask, ext_tokens=ext_tokens,
    )


def merge_histories_into_article(sample: Sample, max_article_len: int) -> Sample:
    """Merge-H3G input: histories concatenated before the article, then truncated."""
    merged: list[str] = []
    for h in sample.histories:
        merged.extend(h)
        merged.append(EOS)
    merged.extend(sample.article)
    return Sample(merged[:max_article_len], [], sample.target, sample.author_id, sample.sample_id)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass
class SplitManifest:
    seed: int
    train: list[int]
    val: list[int]
    test: list[int]
    # validation/test authors may also appear in training; their histories
    # are always drawn from training headlines only
    author_overlap: bool = True

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test,
                "author_overlap": self.author_overlap,
                "history_source": "train"}

    @classmethod
    def from_dict(cls, d: dict) -> SplitManifest:
        return cls(int(d["seed"]), list(d["train"]), list(d["val"]), list(d["test"]),
                   bool(d.get("author_overlap", True)))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> SplitManifest:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def make_split(records: Sequence[AuthorRecord], val_size: int, test_size: int, seed: int) -> SplitManifest:
    """Author-stratified random split with fixed-size validation and test sets.

    Authors are visited round-robin in a seeded order, each giving up one random
    article per visit, while always keeping at least two training articles (one
    when the author has only one or two).
    """
    rng = np.random.default_rng(seed)
    remaining = {rec.author_id: list(rng.permutation(rec.sample_ids)) for rec in records}
    keep = {rec.author_id: min(2, len(rec.sample_ids)) for rec in records}
    capacity = sum(len(v) - keep[a] for a, v in remaining.items())
    if val_size + test_size > capacity:
        raise ConfigError(
            f"split: val_size + test_size = {val_size + test_size} exceeds the {capacity} "
            "articles that can be held out while keeping training histories"
        )
    order = [rec.author_id for rec in records]
    order = [order[i] for i in rng.permutation(len(order))]
    held: list[int] = []
    while len(held) < val_size + test_size:
        for author in order:
            if len(held) == val_size + test_size:
                break
            if len(remaining[author]) > keep[author]:
                held.append(int(remaining[author].pop()))
    val, test = sorted(held[:val_size]), sorted(held[val_size:])
    train = sorted(int(i) for v in remaining.values() for i in v)
    return SplitManifest(seed, train, val, test)


# ---------------------------------------------------------------------------
# Dataset: samples with histories drawn from training headlines only
# ---------------------------------------------------------------------------

class HeadlineDataset:
    """Binds a corpus, a split and a vocabulary into samples and batches."""

    def __init__(
        self,
        records: Sequence[AuthorRecord],
        split: SplitManifest,
        vocab: Vocabulary | None = None,
        *,
        vocab_size: int = 2000,
        k_max: int = 10,
        max_article_len: int = 128,
        max_headline_len: int = 16,
        use_histories: bool = True,
        merge_histories: bool = False,
    ):
        self.records = list(records)
        self.split = split
        self.k_max = k_max
        self.max_article_len = max_article_len
        self.max_headline_len = max_headline_len
        self.use_histories = use_histories
        self.merge_histories = merge_histories
        self._by_author = {rec.author_id: rec for rec in self.records}
        self._locate: dict[int, tuple[AuthorRecord, int]] = {}
        for rec in self.records:
            for pos, sid in enumerate(rec.sample_ids):
                self._locate[sid] = (rec, pos)
        missing = [i for i in split.train + split.val + split.test if i not in self._locate]
        if missing:
            raise CorpusError(f"split refers to unknown sample ids {missing[:5]}")
        train_set = set(split.train)
        self._train_positions = {
            rec.author_id: [pos for pos, sid in enumerate(rec.sample_ids) if sid in train_set]
            for rec in self.records
        }
        self.vocab = vocab or build_vocab(self._train_records(), vocab_size)
        self._train_authors = sorted(a for a, p in self._train_positions.items() if p)

    def _train_records(self) -> list[AuthorRecord]:
        train_set = set(self.split.train)
        out = []
        for rec in self.records:
            pairs = [(art, sid) for art, sid in zip(rec.articles, rec.sample_ids) if sid in train_set]
            if pairs:
                out.append(AuthorRecord(rec.author_id, [a for a, _ in pairs], [s for _, s in pairs]))
        return out

    def headline_groups(self, split: str = "train") -> dict[str, list[str]]:
        ids = set(getattr(self.split, split))
        groups: dict[str, list[str]] = {}
        for rec in self.records:
            hs = [h for (_, h), sid in zip(rec.articles, rec.sample_ids) if sid in ids]
            if hs:
                groups[rec.author_id] = hs
        return groups

    def reference(self, sample_id: int) -> str:
        rec, pos = self._locate[sample_id]
        return rec.articles[pos][1]

    def author_of(self, sample_id: int) -> str:
        return self._locate[sample_id][0].author_id

    def sample(self, sample_id: int, rng: np.random.Generator) -> Sample:
        rec, pos = self._locate[sample_id]
        article, headline = rec.articles[pos]
        histories: list[str] = []
        if self.use_histories or self.merge_histories:
            histories = sample_histories(rec, pos, self.k_max, rng, allowed=self._train_positions[rec.author_id])
        s = Sample(tokenize(article), [tokenize(h) for h in histories], tokenize(headline), rec.author_id, sample_id)
        return merge_histories_into_article(s, self.max_article_len) if self.merge_histories else s

    def eval_samples(self, split: str, seed: int) -> list[Sample]:
        """Fixed samples for validation/test: histories seeded per sample id."""
        return [self.sample(sid, np.random.default_rng([seed, sid])) for sid in getattr(self.split, split)]

    def train_batch(self, step: int, batch_size: int, seed: int) -> Batch:
        """One sample from each of ``batch_size`` distinct authors (fewer if not enough)."""
        rng = np.random.default_rng([seed, step, 0])
        n = min(batch_size, len(self._train_authors))
        authors = [self._train_authors[i] for i in rng.choice(len(self._train_authors), size=n, replace=False)]
        samples = []
        for author in authors:
            rec = self._by_author[author]
            pos = self._train_positions[author][int(rng.integers(len(self._train_positions[author])))]
            samples.append(self.sample(rec.sample_ids[pos], rng))
        return self.batch(samples)

    def batch(self, samples: Sequence[Sample]) -> Batch:
        return make_batch(samples, self.vocab, self.max_article_len, self.max_headline_len)


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------

LEAD_WORDS = ("breaking", "exclusive", "revealed", "watch", "update", "insight", "alert", "report")
SUFFIXES = ("!", "?")
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def parse_style(spec: str) -> dict[str, str]:
    """``"lead=breaking;suffix=!"`` -> ``{"lead": "breaking", "suffix": "!"}``."""
    style = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, sep, value = part.partition("=")
        if not sep or key not in ("lead", "suffix", "skeleton"):
            raise ConfigError(f"style_spec: cannot parse {part!r} (keys: lead, suffix, skeleton)")
        style[key] = value
    return style


def default_styles(n_authors: int) -> list[str]:
    """Distinct two-marker styles: a lead word and a closing punctuation mark."""
    combos = [f"lead={lead};suffix={suf}" for lead in LEAD_WORDS for suf in SUFFIXES]
    if n_authors > len(combos):
        raise ConfigError(f"default styles support at most {len(combos)} authors")
    return combos[:n_authors]


def apply_style(keywords: Sequence[str], style: dict[str, str]) -> list[str]:
    words = list(keywords)
    if "skeleton" in style:
        # two clauses joined by the author's connector: "w1 w2 , <conn> w3 ..."
        cut = max(1, len(words) // 2)
        words = words[:cut] + [",", style["skeleton"]] + words[cut:]
    if "lead" in style:
        words = [style["lead"]] + words
    if "suffix" in style:
        words = words + [style["suffix"]]
    return words


def _lexicon(n_words: int, rng: np.random.Generator) -> list[str]:
    words: set[str] = set()
    out = []
    while len(out) < n_words:
        n_syll = int(rng.integers(2, 4))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(n_syll))
        if w not in words and w not in LEAD_WORDS:
            words.add(w)
            out.append(w)
    return out


def generate_synthetic_corpus(
    n_authors: int,
    articles_per_author: int | tuple[int, int] = (3, 60),
    style_spec: Sequence[str] | None = None,
    rng: np.random.Generator | int | None = None,
    *,
    n_content_words: int = 400,
    n_keywords: int = 3,
    n_filler_sentences: int = 3,
    filler_length: tuple[int, int] = (5, 8),
) -> list[AuthorRecord]:
    """Authors with deterministic headline templates over a shared content vocabulary.

    Each article opens with its keywords and continues with filler sentences drawn
    from the same Zipf-weighted lexicon; its headline is the keywords dressed in
    the author's template. Nothing in an article reveals its author.
    """
    if n_authors < 1:
        raise ConfigError("n_authors must be >= 1")
    rng = np.random.default_rng(rng)
    styles = list(style_spec) if style_spec is not None else default_styles(n_authors)
    if len(styles) != n_authors:
        raise ConfigError(f"style_spec lists {len(styles)} styles for {n_authors} authors")
    parsed = [parse_style(s) for s in styles]
    if isinstance(articles_per_author, int):
        lo = hi = articles_per_author
    else:
        lo, hi = articles_per_author
    if lo < 1 or hi < lo:
        raise ConfigError(f"articles_per_author must be a positive count or range, got {articles_per_author}")

    lexicon = _lexicon(n_content_words, rng)
    weights = 1.0 / np.arange(1, n_content_words + 1)
    weights /= weights.sum()
    width = len(str(n_authors - 1))
    records, next_id = [], 0
    for a in range(n_authors):
        count = int(rng.integers(lo, hi + 1))
        rec = AuthorRecord(f"author{a:0{width}d}")
        for _ in range(count):
            keys = [lexicon[i] for i in rng.choice(n_content_words, size=n_keywords, replace=False, p=weights)]
            body = list(keys) + ["."]
            for _ in range(n_filler_sentences):
                n = int(rng.integers(filler_length[0], filler_length[1] + 1))
                body += [lexicon[i] for i in rng.choice(n_content_words, size=n, p=weights)] + ["."]
            rec.articles.append((detokenize(body), detokenize(apply_style(keys, parsed[a]))))
            rec.sample_ids.append(next_id)
            next_id += 1
        records.append(rec)
    return records
