"""``clh3g`` command line: synth, train, generate, evaluate and ablate.

Configuration is a JSON file with three sections, ``model``, ``train`` and
``style``, whose keys are the fields of :class:`ModelConfig`,
:class:`TrainConfig` and :class:`StyleClassifierConfig`. Every key can also be
given as a flag named after its path (``--model.d_model 32``,
``--model.fusion.use_pointer false``, ``--train.cl_lambda 0.1``). Flags win over
the file, which wins over the defaults.

Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .corpus import AuthorRecord, HeadlineDataset, SplitManifest, generate_synthetic_corpus, load_corpus, \
    make_split, write_corpus
from .decoder import FusionConfig
from .errors import CLH3GError, ConfigError
from .evaluation import (StyleClassifierConfig, evaluate_texts, negative_pools, style_eval,
                         train_style_classifier)
from .inference import generate_samples, read_generations, write_generations
from .model import HeadlineGenerator, ModelConfig, load_model
from .trainer import GRIDS, TrainConfig, build_dataset, fit, run_ablation_grid

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4
DATA_DIR_ENV = "CLH3G_DATA_DIR"

log = logging.getLogger("clh3g")


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    style: StyleClassifierConfig = field(default_factory=StyleClassifierConfig)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.style.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        unknown = set(d) - {"model", "train", "style"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        base = cls().to_dict()
        merged = _merge(base, d, "")
        model = dict(merged["model"])
        fusion = FusionConfig(**model.pop("fusion"))
        return cls(ModelConfig(fusion=fusion, **model), TrainConfig(**merged["train"]),
                   StyleClassifierConfig(**merged["style"]))


def _merge(base: dict, override: dict, prefix: str) -> dict:
    out = dict(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = _coerce(path, base[key], value)
    return out


def _coerce(path: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}") from None
    return str(value)


def _flag_paths(d: dict, prefix: str = "") -> list[str]:
    paths = []
    for key, value in d.items():
        if isinstance(value, dict):
            paths += _flag_paths(value, f"{prefix}{key}.")
        else:
            paths.append(prefix + key)
    return paths


def _nest(flat: dict[str, Any]) -> dict:
    out: dict = {}
    for path, value in flat.items():
        node = out
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return out


def resolve_config(config_path: str | None, flag_values: dict[str, Any]) -> ExperimentConfig:
    """defaults < config file < flags; raises ConfigError naming the bad field."""
    data: dict = {}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = ExperimentConfig.from_dict(data)
    if flag_values:
        cfg = ExperimentConfig.from_dict(_merge(cfg.to_dict(), _nest(flag_values), ""))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Run manifests
# ---------------------------------------------------------------------------

def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict[str, str]
    outputs: dict[str, str]
    hashes: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def write(self, path: str | os.PathLike) -> None:
        for role, p in {**self.inputs, **self.outputs}.items():
            if Path(p).is_file():
                self.hashes[role] = sha256_file(p)
        Path(path).write_text(json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")


def _data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "."))


def _default(path: str | None, name: str) -> Path:
    return Path(path) if path else _data_dir() / name


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")


def _load_split(corpus_path: Path, split_path: str | None, records: Sequence[AuthorRecord]) -> SplitManifest:
    """The given split, else ``split.json`` beside the corpus, else leave-one-out over everything."""
    path = Path(split_path) if split_path else corpus_path.with_name("split.json")
    if path.is_file():
        return SplitManifest.load(path)
    if split_path:
        raise ConfigError(f"split manifest not found: {path}")
    ids = sorted(i for r in records for i in r.sample_ids)
    return SplitManifest(-1, ids, ids, ids)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: ExperimentConfig) -> RunManifest:
    if args.authors < 1:
        raise ConfigError("--authors must be >= 1")
    lo, _, hi = args.articles.partition(",")
    try:
        per_author = (int(lo), int(hi or lo))
    except ValueError:
        raise ConfigError(f"--articles must be N or LO,HI, got {args.articles!r}") from None
    out_dir = _default(args.out_dir, "")
    records = generate_synthetic_corpus(args.authors, per_author, args.style or None, args.seed)
    split = make_split(records, args.val_size, args.test_size, args.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus, split_path = out_dir / "corpus.jsonl", out_dir / "split.json"
    write_corpus(records, corpus)
    split.save(split_path)
    return RunManifest("synth", {"authors": args.authors, "articles": list(per_author), "style": args.style,
                                 "val_size": args.val_size, "test_size": args.test_size},
                       args.seed, {}, {"corpus": str(corpus), "split": str(split_path)})


def _dataset(args, cfg: ExperimentConfig, vocab=None) -> tuple[HeadlineDataset, Path, SplitManifest]:
    corpus = _default(args.corpus, "corpus.jsonl")
    _require_file(corpus, "corpus")
    records = load_corpus(corpus)
    split = _load_split(corpus, args.split, records)
    return build_dataset(records, split, cfg.train, vocab), corpus, split


def cmd_train(args, cfg: ExperimentConfig) -> RunManifest:
    if args.resume:
        _require_file(Path(args.resume), "resume checkpoint")
    dataset, corpus, _ = _dataset(args, cfg)
    out_dir = Path(args.out_dir or _data_dir() / "run")
    model = HeadlineGenerator(cfg.model, dataset.vocab, seed=cfg.train.seed)
    report = fit(model, dataset, cfg.train, out_dir, resume_from=args.resume)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    log.info("best step %d, test %s", report.best_step, report.test_metrics)
    return RunManifest("train", cfg.to_dict(), cfg.train.seed, {"corpus": str(corpus)},
                       {"best": str(out_dir / "best.ckpt"), "last": str(out_dir / "last.ckpt"),
                        "report": str(out_dir / "report.jsonl"), "final_report": str(out_dir / "final_report.json")})


def _checkpoint_path(spec: str, run_dir: str | None) -> Path:
    if spec in ("best", "last"):
        return Path(run_dir or _data_dir() / "run") / f"{spec}.ckpt"
    return Path(spec)


def cmd_generate(args, cfg: ExperimentConfig) -> RunManifest:
    ckpt = _checkpoint_path(args.checkpoint, args.run_dir)
    _require_file(ckpt, "checkpoint")
    model, ck_config, _, _ = load_model(ckpt)
    train_cfg = TrainConfig(**ck_config["train"]) if "train" in ck_config else cfg.train
    cfg = dataclasses.replace(cfg, train=train_cfg)
    dataset, corpus, split = _dataset(args, cfg, model.vocab)
    samples = dataset.eval_samples(args.split_name, train_cfg.eval_seed)
    out = Path(args.out or ckpt.with_name(f"generations_{args.split_name}.jsonl"))
    gens = generate_samples(model, dataset, samples, train_cfg.inference_config())
    out.parent.mkdir(parents=True, exist_ok=True)
    write_generations(gens, out)
    return RunManifest("generate", {"train": dataclasses.asdict(train_cfg), "split_name": args.split_name},
                       train_cfg.seed, {"checkpoint": str(ckpt), "corpus": str(corpus)}, {"generations": str(out)})


def cmd_evaluate(args, cfg: ExperimentConfig) -> RunManifest:
    gens_path = Path(args.generations)
    _require_file(gens_path, "generations file")
    gens = read_generations(gens_path)
    hyps = [g["generated_headline"] for g in gens]
    inputs = {"generations": str(gens_path)}
    if all("reference" in g for g in gens):
        refs = [g["reference"] for g in gens]
        dataset = None
    else:
        dataset, corpus, _ = _dataset(args, cfg)
        inputs["corpus"] = str(corpus)
        refs = [dataset.reference(int(g["sample_id"])) for g in gens]
    result: dict = {"metrics": evaluate_texts(hyps, refs).to_dict()}
    if args.style:
        if dataset is None:
            dataset, corpus, _ = _dataset(args, cfg)
            inputs["corpus"] = str(corpus)
        style_cfg = dataclasses.replace(cfg.train, use_histories=True, merge_histories=False)
        hist_ds = build_dataset(dataset.records, dataset.split, style_cfg, dataset.vocab)
        by_id = {}
        for split_name in ("val", "test"):
            for s in hist_ds.eval_samples(split_name, cfg.train.eval_seed):
                by_id.setdefault(s.sample_id, s)
        histories = [[" ".join(h) for h in by_id[int(g["sample_id"])].histories] if int(g["sample_id"]) in by_id
                     else list(g.get("histories", [])) for g in gens]
        groups = hist_ds.headline_groups("train")
        clf, clf_report = train_style_classifier(groups, cfg.style)
        authors = [g.get("author_id") or hist_ds.author_of(int(g["sample_id"])) for g in gens]
        style = style_eval(clf, hyps, histories, negative_pools(authors, groups), cfg.style.threshold,
                           cfg.style.seed)
        result["style"] = style.to_dict()
        result["style_classifier_val_accuracy"] = 100.0 * clf_report.best_accuracy
    out = Path(args.out or gens_path.with_name(gens_path.stem + "_metrics.json"))
    out.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return RunManifest("evaluate", cfg.to_dict() if args.style else {}, cfg.style.seed, inputs, {"report": str(out)})


def cmd_ablate(args, cfg: ExperimentConfig) -> RunManifest:
    if args.grid == "lambda" and args.lambdas:
        try:
            values = [float(v) for v in args.lambdas.split(",")]
        except ValueError:
            raise ConfigError(f"--lambdas must be comma-separated numbers, got {args.lambdas!r}") from None
        if any(v < 0 for v in values):
            raise ConfigError("--lambdas values must be >= 0")
        cells = GRIDS["lambda"](values)
    elif args.grid == "lambda":
        cells = GRIDS["lambda"]()
    else:
        cells = GRIDS[args.grid](cfg.train.cl_lambda)
    corpus = _default(args.corpus, "corpus.jsonl")
    _require_file(corpus, "corpus")
    records = load_corpus(corpus)
    split = _load_split(corpus, args.split, records)
    out_dir = Path(args.out_dir or _data_dir() / f"ablate_{args.grid}")
    table = run_ablation_grid(records, split, cfg.model, cfg.train, cells, out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path, csv_path = out_dir / "ablation.json", out_dir / "lambda_bleu.csv"
    table_path.write_text(json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    csv_path.write_text(table.to_csv(), encoding="utf-8")
    for row in table.rows:
        m = row["test_metrics"] or row["best_val"]
        print(f"{row['name']:<30} R1 {m['rouge1_f']:6.2f}  R2 {m['rouge2_f']:6.2f}  "
              f"RL {m['rougeL_f']:6.2f}  BLEU {m['bleu']:6.2f}")
    return RunManifest("ablate", {**cfg.to_dict(), "grid": args.grid, "cells": [c.name for c in cells]},
                       cfg.train.seed, {"corpus": str(corpus)}, {"table": str(table_path), "curve": str(csv_path)})


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "ablate": cmd_ablate}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with model/train/style sections")
    group = p.add_argument_group("configuration fields (override the config file)")
    for path in _flag_paths(ExperimentConfig().to_dict()):
        group.add_argument(f"--{path}", dest=f"cfg:{path}", default=argparse.SUPPRESS, metavar="VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clh3g", description="Style-aware headline generation with contrastive learning.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic multi-author corpus and split")
    p.add_argument("--authors", type=int, default=10)
    p.add_argument("--articles", default="20", help="articles per author: N or LO,HI")
    p.add_argument("--style", action="append", help='author style, e.g. "lead=breaking;suffix=!" (repeat per author)')
    p.add_argument("--val-size", type=int, default=20)
    p.add_argument("--test-size", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help=f"output directory (default ${DATA_DIR_ENV} or .)")

    p = sub.add_parser("train", parents=[common], help="train a model and keep the best validation checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--split")
    p.add_argument("--out-dir")
    p.add_argument("--resume", help="last.ckpt of an interrupted run")
    _add_config_flags(p)

    p = sub.add_parser("generate", parents=[common], help="beam-search headlines for a split")
    p.add_argument("--checkpoint", default="best", help="checkpoint path, or best/last inside --run-dir")
    p.add_argument("--run-dir")
    p.add_argument("--corpus")
    p.add_argument("--split")
    p.add_argument("--split-name", default="test", choices=("train", "val", "test"))
    p.add_argument("--out")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="score generations with ROUGE/BLEU and optionally the style classifier")
    p.add_argument("--generations", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split")
    p.add_argument("--style", action="store_true", help="also train the style classifier and report style_eval")
    p.add_argument("--out")
    _add_config_flags(p)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    p.add_argument("--grid", choices=sorted(GRIDS), default="table6")
    p.add_argument("--lambdas", help="comma-separated CL coefficients for --grid lambda")
    p.add_argument("--corpus")
    p.add_argument("--split")
    p.add_argument("--out-dir")
    _add_config_flags(p)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    try:
        cfg = resolve_config(getattr(args, "config", None), flags)
        started = time.perf_counter()
        manifest = COMMANDS[args.command](args, cfg)
        manifest.timings["seconds"] = round(time.perf_counter() - started, 3)
        out_paths = [Path(p) for p in manifest.outputs.values()]
        manifest_dir = out_paths[0].parent if out_paths else Path(".")
        manifest.write(manifest_dir / f"{args.command}_manifest.json")
    except ConfigError as exc:
        print(f"clh3g: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CLH3GError, OSError) as exc:
        print(f"clh3g: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
