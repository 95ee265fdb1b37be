"""Combined objective, training loop with validation-based selection, and ablation grids."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .contrastive import choose_cl_pairs
from .corpus import AuthorRecord, Batch, HeadlineDataset, SplitManifest, Vocabulary, build_vocab
from .decoder import FusionConfig
from .errors import ConfigError, TrainingError
from .evaluation import MetricReport, evaluate_texts
from .inference import Generation, InferenceConfig, generate_samples
from .model import HeadlineGenerator, ModelConfig, load_model, save_model
from .numcore import Adam, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    cl_lambda: float = 0.1
    batch_size: int = 16
    total_steps: int = 2000
    validate_every: int = 100
    k_max: int = 10
    tau: float = 0.1
    lr: float = 1e-3
    warmup_frac: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_seed: int = 0
    beam_size: int = 4
    length_penalty: float = 1.5
    penalty_form: str = "gnmt"
    use_histories: bool = True
    merge_histories: bool = False
    max_article_len: int = 128
    max_headline_len: int = 16
    vocab_size: int = 2000
    max_val_samples: int = 0  # 0 = whole validation split

    def validate(self) -> None:
        if self.cl_lambda < 0:
            raise ConfigError(f"train.cl_lambda must be >= 0, got {self.cl_lambda}")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("train.total_steps must be >= 0")
        if self.validate_every < 1:
            raise ConfigError("train.validate_every must be >= 1")
        if self.k_max < 1:
            raise ConfigError("train.k_max must be >= 1")
        if self.tau <= 0:
            raise ConfigError("train.tau must be > 0")
        if not self.lr > 0:
            raise ConfigError(f"train.lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_frac <= 1:
            raise ConfigError("train.warmup_frac must lie in [0, 1]")
        if self.max_article_len < 1 or self.max_headline_len < 1:
            raise ConfigError("train.max_article_len and train.max_headline_len must be >= 1")
        if self.merge_histories and self.use_histories:
            raise ConfigError("train.merge_histories replaces histories; set train.use_histories to false")
        self.inference_config().validate()

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(self.beam_size, self.length_penalty, self.max_headline_len + 1, self.penalty_form)

    def warmup_steps(self) -> int:
        return max(1, round(self.warmup_frac * self.total_steps))

    def lr_at(self, step: int) -> float:
        """Linear warmup to ``lr`` then constant; ``step`` is zero-based."""
        return self.lr * min(1.0, (step + 1) / self.warmup_steps())


def total_loss(tf_loss: Tensor, cl_loss: Tensor | None, cl_lambda: float) -> Tensor:
    """``tf_loss + lambda * cl_loss``; exactly ``tf_loss`` when lambda is 0 or there are no pairs."""
    if cl_lambda < 0:
        raise ConfigError(f"cl_lambda must be >= 0, got {cl_lambda}")
    if cl_lambda == 0 or cl_loss is None:
        return tf_loss
    return tf_loss + cl_loss * cl_lambda


def build_dataset(records: Sequence[AuthorRecord], split: SplitManifest, config: TrainConfig,
                  vocab: Vocabulary | None = None) -> HeadlineDataset:
    return HeadlineDataset(
        records, split, vocab, vocab_size=config.vocab_size, k_max=config.k_max,
        max_article_len=config.max_article_len, max_headline_len=config.max_headline_len,
        use_histories=config.use_histories, merge_histories=config.merge_histories,
    )


# ---------------------------------------------------------------------------
# One optimisation step
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    tf_loss: float
    cl_loss: float
    total: float
    n_cl_pairs: int
    projection_grad_max: float


def train_step(model: HeadlineGenerator, batch: Batch, config: TrainConfig, rng: np.random.Generator,
               optimizer: Adam, step: int = 0) -> StepResult:
    """Forward (shared encoder for article, histories and contrastive pair), backward, update."""
    model.train()
    pairs = choose_cl_pairs(batch.samples, rng)
    result = model.forward(batch, pairs, config.tau, rng)
    loss = total_loss(result.tf_loss, result.cl_loss, config.cl_lambda)
    tf = result.tf_loss.item()
    cl = result.cl_loss.item() if result.cl_loss is not None else 0.0
    if not (math.isfinite(tf) and math.isfinite(cl)):
        raise TrainingError(
            f"non-finite loss at step {step} (seed {config.seed}): tf={tf} cl={cl}; "
            f"batch sample ids {[s.sample_id for s in batch.samples]}"
        )
    model.zero_grad()
    loss.backward()
    head_grads = [p.grad for p in model.projection.parameters() if p.grad is not None]
    proj_max = max((float(np.abs(g).max()) for g in head_grads), default=0.0)
    optimizer.step(config.lr_at(step))
    return StepResult(tf, cl, tf + config.cl_lambda * cl, result.n_cl_pairs, proj_max)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainingReport:
    records: list[dict]
    best_step: int
    best_val: dict
    test_metrics: dict | None
    test_generations: list[Generation] = field(default_factory=list)

    def final_dict(self) -> dict:
        return {"best_step": self.best_step, "best_val_metrics": self.best_val, "test_metrics": self.test_metrics}

    def write(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        (out / "final_report.json").write_text(json.dumps(self.final_dict(), sort_keys=True, indent=2) + "\n")


def _checkpoint_config(config: TrainConfig) -> dict:
    return {"train": dataclasses.asdict(config)}


def validate_model(model: HeadlineGenerator, dataset: HeadlineDataset, samples, config: TrainConfig):
    gens = generate_samples(model, dataset, samples, config.inference_config())
    metrics = evaluate_texts([g.generated_headline for g in gens], [g.reference for g in gens])
    return metrics, gens


def fit(model: HeadlineGenerator, dataset: HeadlineDataset, config: TrainConfig,
        out_dir: str | os.PathLike | None = None, resume_from: str | os.PathLike | None = None,
        evaluate_test: bool = True) -> TrainingReport:
    """Train for ``total_steps``, validating at step 0 and every ``validate_every`` steps.

    The parameters with the best validation BLEU (earliest on ties) are kept and,
    if ``evaluate_test``, scored on the test split. With ``out_dir``, the best and
    latest states are checkpointed there; ``resume_from`` continues from a latest
    checkpoint and reproduces the uninterrupted run exactly.
    """
    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(list(model.named_parameters()), config.beta1, config.beta2, config.adam_eps)
    val_samples = dataset.eval_samples("val", config.eval_seed)
    if config.max_val_samples:
        val_samples = val_samples[: config.max_val_samples]

    records: list[dict] = []
    start = 0
    best_val: dict = {}
    best_state: dict | None = None
    best_step = 0
    if resume_from is not None:
        resumed, _, meta, optim_state = load_model(resume_from)
        model.load_state_dict(resumed.state_dict())
        optimizer.load_state_arrays(optim_state)
        start, records = int(meta["step"]), list(meta["records"])
        best_step, best_val = int(meta["best_step"]), dict(meta["best_val"])
        best_path = Path(resume_from).with_name("best.ckpt")
        best_state = load_model(best_path)[0].state_dict() if best_path.exists() else model.state_dict()

    def checkpoint(step: int, improved: bool) -> None:
        if out is None:
            return
        meta = {"step": step, "records": records, "best_step": best_step, "best_val": best_val}
        try:
            if improved:
                save_model(out / "best.ckpt", model, _checkpoint_config(config), meta)
            save_model(out / "last.ckpt", model, _checkpoint_config(config), meta, optimizer.state_arrays())
        except OSError as exc:
            raise TrainingError(f"checkpoint write failed at step {step}: {exc}; previous checkpoint kept") from exc

    def validation_point(step: int) -> None:
        """Score the current state, store it on the latest record, then checkpoint."""
        nonlocal best_val, best_state, best_step
        metrics, _ = validate_model(model, dataset, val_samples, config)
        records[-1]["val_metrics"] = metrics.to_dict()
        improved = best_state is None or metrics.bleu > best_val["bleu"]
        if improved:
            best_val, best_state, best_step = metrics.to_dict(), model.state_dict(), step
        checkpoint(step, improved)
        log.info("step %d val %s", step, metrics)

    if resume_from is None:
        records.append({"step": 0, "tf_loss": None, "cl_loss": None, "total": None,
                        "val_metrics": None})
        validation_point(0)

    for step in range(start, config.total_steps):
        batch = dataset.train_batch(step, config.batch_size, config.seed)
        rng = np.random.default_rng([config.seed, step, 1])
        res = train_step(model, batch, config, rng, optimizer, step)
        rec = {"step": step + 1, "tf_loss": res.tf_loss, "cl_loss": res.cl_loss, "total": res.total,
               "projection_grad_max": res.projection_grad_max, "val_metrics": None}
        records.append(rec)
        if (step + 1) % config.validate_every == 0 or step + 1 == config.total_steps:
            validation_point(step + 1)

    model.load_state_dict(best_state)
    test_metrics, test_gens = None, []
    if evaluate_test and dataset.split.test:
        metrics, test_gens = validate_model(model, dataset, dataset.eval_samples("test", config.eval_seed), config)
        test_metrics = metrics.to_dict()
    report = TrainingReport(records, best_step, best_val, test_metrics, test_gens)
    if out is not None:
        report.write(out)
    return report


# ---------------------------------------------------------------------------
# Ablation grids
# ---------------------------------------------------------------------------

@dataclass
class AblationCell:
    name: str
    fusion: FusionConfig
    use_histories: bool = True
    cl_lambda: float = 0.0
    merge_histories: bool = False


def table6_cells(cl_lambda: float = 0.1) -> list[AblationCell]:
    """The seven incremental configurations, General HG first and the full model last."""
    return [
        AblationCell("General HG", FusionConfig(False, False, True), use_histories=False),
        AblationCell("+ Concat Style Vector", FusionConfig(True, False, True)),
        AblationCell("+ Concat Style Vector + CL", FusionConfig(True, False, True), cl_lambda=cl_lambda),
        AblationCell("+ Pointer Style Vector", FusionConfig(False, True, True)),
        AblationCell("+ Pointer Style Vector + CL", FusionConfig(False, True, True), cl_lambda=cl_lambda),
        AblationCell("+ Two fusion Methods", FusionConfig(True, True, True)),
        AblationCell("+ Two fusion Methods + CL", FusionConfig(True, True, True), cl_lambda=cl_lambda),
    ]


def lambda_cells(values: Sequence[float] = (0.0, 0.01, 0.1, 1.0)) -> list[AblationCell]:
    return [AblationCell(f"CLH3G lambda={v:g}", FusionConfig(True, True, True), cl_lambda=float(v)) for v in values]


def baseline_cells(cl_lambda: float = 0.1) -> list[AblationCell]:
    return [
        AblationCell("General HG", FusionConfig(False, False, True), use_histories=False),
        AblationCell("Merge H3G", FusionConfig(False, False, True), use_histories=False, merge_histories=True),
        AblationCell("CLH3G", FusionConfig(True, True, True), cl_lambda=cl_lambda),
    ]


GRIDS = {"table6": table6_cells, "lambda": lambda_cells, "baselines": baseline_cells}


def cell_configs(cell: AblationCell, model_config: ModelConfig, train_config: TrainConfig):
    model_cfg = dataclasses.replace(model_config, fusion=dataclasses.replace(cell.fusion))
    train_cfg = dataclasses.replace(train_config, cl_lambda=cell.cl_lambda, use_histories=cell.use_histories,
                                    merge_histories=cell.merge_histories)
    return model_cfg, train_cfg


def _score(row: dict) -> dict:
    return row["test_metrics"] or row["best_val"]


@dataclass
class AblationTable:
    rows: list[dict]

    def lambda_curve(self) -> list[tuple[float, float]]:
        return [(r["cl_lambda"], _score(r)["bleu"]) for r in self.rows]

    def to_dict(self) -> dict:
        return {"rows": self.rows}

    def to_csv(self) -> str:
        lines = ["name,lambda,bleu"] + [f"{r['name']},{r['cl_lambda']:g},{_score(r)['bleu']:.6f}" for r in self.rows]
        return "\n".join(lines) + "\n"


def run_ablation_grid(records: Sequence[AuthorRecord], split: SplitManifest, model_config: ModelConfig,
                      train_config: TrainConfig, cells: Sequence[AblationCell],
                      out_dir: str | os.PathLike | None = None) -> AblationTable:
    """One ``fit`` per cell, all with the same seeds, vocabulary and evaluation histories."""
    vocab = build_vocab(HeadlineDataset(records, split, vocab_size=train_config.vocab_size)._train_records(),
                        train_config.vocab_size)
    rows = []
    for i, cell in enumerate(cells):
        model_cfg, train_cfg = cell_configs(cell, model_config, train_config)
        dataset = build_dataset(records, split, train_cfg, vocab)
        model = HeadlineGenerator(model_cfg, vocab, seed=train_cfg.seed)
        cell_dir = Path(out_dir) / f"cell{i}" if out_dir is not None else None
        report = fit(model, dataset, train_cfg, cell_dir)
        rows.append({
            "name": cell.name,
            "cl_lambda": cell.cl_lambda,
            "use_histories": cell.use_histories,
            "merge_histories": cell.merge_histories,
            "fusion": dataclasses.asdict(cell.fusion),
            "best_step": report.best_step,
            "best_val": report.best_val,
            "test_metrics": report.test_metrics,
            "projection_grad_max": max((r.get("projection_grad_max", 0.0) for r in report.records), default=0.0),
        })
    return AblationTable(rows)
