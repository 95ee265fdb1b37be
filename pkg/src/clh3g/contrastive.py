"""Projection head and the NT-Xent loss over same-author headline pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Sample
from .errors import ContractError, NumericError
from .numcore import NEG_INF, Linear, Module, Tensor
from .numcore import tensor as T


class ProjectionHead(Module):
    """Two affine layers ``d -> d -> d`` with a ReLU between them."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.hidden = Linear(d_model, d_model, rng)
        self.output = Linear(d_model, d_model, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return self.output(T.relu(self.hidden(h)))


def project(head: ProjectionHead, h: Tensor) -> Tensor:
    return head(h)


@dataclass(frozen=True)
class PairChoice:
    """Positions in a sample's pool ``histories + [target]``; ``len(histories)`` is the target."""

    sample: int
    first: int
    second: int


def choose_cl_pairs(samples: Sequence[Sample], rng: np.random.Generator) -> list[PairChoice]:
    """Two distinct pool positions per sample, uniform without replacement.

    Samples whose pool holds a single headline contribute nothing.
    """
    pairs = []
    for b, s in enumerate(samples):
        pool_size = len(s.histories) + 1
        if pool_size < 2:
            continue
        i, j = rng.choice(pool_size, size=2, replace=False)
        pairs.append(PairChoice(b, int(i), int(j)))
    return pairs


def make_cl_pairs(samples: Sequence[Sample], rng: np.random.Generator) -> list[tuple[list[str], list[str]]]:
    """The chosen pairs as headline token sequences."""
    out = []
    for p in choose_cl_pairs(samples, rng):
        pool = samples[p.sample].histories + [samples[p.sample].target]
        out.append((pool[p.first], pool[p.second]))
    return out


def partner_index(n_pairs: int) -> np.ndarray:
    """Rows laid out as ``[a0, b0, a1, b1, ...]``: partner of row i is ``i ^ 1``."""
    return np.arange(2 * n_pairs) ^ 1


def nt_xent_loss(z: Tensor, pair_index: Sequence[int], tau: float) -> Tensor:
    """Mean over all 2N anchors of ``-log softmax_{k != i}(sim(z_i, z_k) / tau)[pair(i)]``.

    ``sim`` is cosine similarity.
    """
    if tau <= 0:
        raise ContractError(f"tau must be > 0, got {tau}")
    n = z.shape[0]
    pair_index = np.asarray(pair_index, dtype=np.int64)
    if n < 2 or n % 2 or pair_index.shape != (n,):
        raise ContractError(f"nt_xent_loss needs 2N >= 2 rows and a partner per row, got {n} rows")
    if np.any(pair_index[pair_index] != np.arange(n)) or np.any(pair_index == np.arange(n)):
        raise ContractError("pair_index must be a fixed-point-free involution")
    norms_sq = (z * z).sum(axis=1, keepdims=True)
    if np.any(norms_sq.data == 0.0):
        raise NumericError("nt_xent_loss: zero-norm row makes cosine similarity undefined")
    unit = z / T.sqrt(norms_sq)
    logits = (unit @ unit.T) * (1.0 / tau)
    logits = logits + np.diag(np.full(n, NEG_INF))
    log_probs = T.log_softmax(logits, axis=1)
    positives = T.gather(log_probs, pair_index[:, None], axis=1)
    return -positives.mean()
