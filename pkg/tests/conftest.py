import numpy as np
import pytest

from clh3g.corpus import RESERVED, Sample, Vocabulary, generate_synthetic_corpus, make_batch, make_split
from clh3g.decoder import FusionConfig
from clh3g.model import HeadlineGenerator, ModelConfig

TOY_WORDS = ["a", "b", "c", "d", "e", "f"]


@pytest.fixture
def toy_vocab():
    return Vocabulary(list(RESERVED) + TOY_WORDS)


def tiny_config(fusion=None, d=8, dropout=0.0, max_positions=24, **kw):
    return ModelConfig(d_model=d, n_layers=1, n_heads=2, d_ff=16, dropout=dropout, max_positions=max_positions,
                       fusion=fusion or FusionConfig(), **kw)


def tiny_model(vocab, fusion=None, seed=0, **kw):
    return HeadlineGenerator(tiny_config(fusion, **kw), vocab, seed=seed)


def toy_samples():
    return [
        Sample("a b zz c".split(), [["a", "b", "!"], ["c", "!"]], "a zz !".split(), "u1", 0),
        Sample("d e f".split(), [["d", "?"]], "e f ?".split(), "u2", 1),
        Sample("b c".split(), [], "c".split(), "u3", 2),
    ]


def toy_batch(vocab, samples=None):
    return make_batch(samples or toy_samples(), vocab, 12, 6)


@pytest.fixture(scope="session")
def small_corpus():
    records = generate_synthetic_corpus(6, 10, rng=11)
    return records, make_split(records, 6, 6, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
