"""Train the baseline and the full model on a synthetic two-marker corpus.

Every synthetic author dresses headline keywords in a fixed template (a lead
word and a closing mark). The article never reveals the author, so only a
model that reads the author's past headlines can reproduce the template.
This script trains both configurations for a few hundred steps and compares
test BLEU and the style classifier's average score. It takes a few minutes.

    python demos/style_trend.py [steps]
"""

import sys

from clh3g.corpus import generate_synthetic_corpus, make_split
from clh3g.evaluation import StyleClassifierConfig, negative_pools, style_eval, train_style_classifier
from clh3g.model import HeadlineGenerator, ModelConfig
from clh3g.trainer import TrainConfig, baseline_cells, build_dataset, cell_configs, fit

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
records = generate_synthetic_corpus(10, 20, rng=0)
split = make_split(records, 20, 20, seed=0)
base_train = TrainConfig(total_steps=steps, validate_every=max(1, steps // 4), batch_size=10,
                         max_article_len=40, max_headline_len=8)
base_model = ModelConfig(d_model=32, d_ff=64)

hist_ds = build_dataset(records, split, base_train)
test = hist_ds.eval_samples("test", base_train.eval_seed)
groups = hist_ds.headline_groups("train")
classifier, clf_report = train_style_classifier(groups, StyleClassifierConfig())
print(f"style classifier validation accuracy: {100 * clf_report.best_accuracy:.1f}%")
histories = [[" ".join(h) for h in s.histories] for s in test]
negatives = negative_pools([s.author_id for s in test], groups)

general, _, full = baseline_cells(0.1)
for cell in (general, full):
    model_cfg, train_cfg = cell_configs(cell, base_model, base_train)
    ds = build_dataset(records, split, train_cfg, hist_ds.vocab)
    report = fit(HeadlineGenerator(model_cfg, ds.vocab, seed=0), ds, train_cfg)
    style = style_eval(classifier, [g.generated_headline for g in report.test_generations], histories, negatives)
    print(f"\n{cell.name}: test BLEU {report.test_metrics['bleu']:.1f}, "
          f"style score {style.average_score:.1f}, style accuracy {style.accuracy:.1f}")
    for g in report.test_generations[:3]:
        print(f"  ref: {g.reference:<40} gen: {g.generated_headline}")

reference = style_eval(classifier, [" ".join(s.target) for s in test], histories, negatives)
print(f"\nreference headlines: style score {reference.average_score:.1f}, accuracy {reference.accuracy:.1f}")
