"""Walk through one pointer-generator step by hand.

Builds a tiny untrained model, feeds it an article containing a word the
vocabulary has never seen, and shows where the output probability mass goes:
the generator half over the base vocabulary, the copy half over article
positions, and the extended id that lets the unseen word be produced.

    python demos/copy_mechanism.py
"""

import numpy as np

from clh3g.corpus import RESERVED, Sample, Vocabulary, make_batch
from clh3g.decoder import FusionConfig
from clh3g.model import HeadlineGenerator, ModelConfig

vocab = Vocabulary(list(RESERVED) + ["storm", "hits", "coast", "city", "!"])
article = "storm hits coast near zanzibar".split()  # "zanzibar" is out of vocabulary
sample = Sample(article, [["storm", "!"], ["city", "!"]], "storm hits zanzibar !".split(), "demo", 0)
batch = make_batch([sample], vocab, 16, 8)
print("base vocabulary size:", batch.vocab_size, "| extended ids this batch:", batch.extended_vocab)

for name, fusion in [("pointer + both fusions", FusionConfig()), ("no pointer", FusionConfig(False, False, False))]:
    config = ModelConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, dropout=0.0, fusion=fusion)
    model = HeadlineGenerator(config, vocab, seed=0).eval()
    dist = model.step_distributions(model.encode_source(batch), batch.target_in, batch.target_mask)
    p_w = dist.p_w.data[0]
    oov = batch.vocab_size  # first extended id
    print(f"\n{name}")
    print("  P(zanzibar) per step:", np.round(p_w[:, oov], 4))
    print("  rows sum to one:     ", np.allclose(p_w.sum(-1), 1.0))
    if dist.p_gen is not None:
        print("  p_gen per step:      ", np.round(dist.p_gen.data[0, :, 0], 3))
        print("  copy attention, step 0:", {w: round(float(a), 3) for w, a in zip(article, dist.alpha.data[0, 0])})
