"""Command-line interface.

Subcommands: train, kfold, predict, stats, agreement, align, ttest. Machine
output is a single JSON document on stdout, emitted only on success; progress
and diagnostics go to stderr. Exit codes: 0 success, 1 rejected input,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    dataset_stats,
    fleiss_kappa,
    majority_vote,
    masks_to_matrix,
    parse_dataset,
)
from .embeddings import (
    ContextualSource,
    StaticSource,
    load_contextual,
    load_dictionary,
    load_embeddings,
    procrustes_align,
    write_embeddings,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DictionaryError,
    FormatError,
    MtxError,
    StratificationError,
)
from .heads import TaskSet
from .metrics import paired_ttest
from .model import Model, ModelConfig
from .training import (
    TrainConfig,
    evaluate,
    fit,
    load_checkpoint,
    run_kfold,
    save_checkpoint,
)
from . import report as report_mod

_VALIDATION_ERRORS = (DataError, FormatError, ConfigError, DictionaryError,
                      StratificationError, CheckpointError)

_MODEL_KEYS = ("embed_dim", "hidden_dim", "attention_dim", "filters", "window",
               "segment_len", "max_len", "variant", "head_width", "seed",
               "loss_weights")
_TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "weight_decay",
               "dropout", "decoupled_weight_decay")
_OTHER_KEYS = ("oov_policy",)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(payload) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on bad usage instead of 2 (2 means runtime here)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        _log(f"error: {message}")
        raise SystemExit(1)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("MTXPLAIN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"MTXPLAIN_SEED must be an integer, got {env!r}") from exc
    return 0


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    known = set(_MODEL_KEYS) | set(_TRAIN_KEYS) | set(_OTHER_KEYS)
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _parse_tasks(spec: str) -> TaskSet:
    names = [part for part in spec.split(",") if part.strip()]
    tasks = TaskSet.from_names(names)
    if not tasks.is_supported_combination():
        raise ConfigError(
            f"unsupported task combination {spec!r}; supported: "
            "cd,rd | cd,rd,sa | cd,rd,ti | cd,rd,sa,ti | cd,sa")
    return tasks


def _load_source(path, oov_policy: str, seed: int):
    """Open a vector file as the right source kind by sniffing the first byte."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            head = fh.readline().lstrip()
    except OSError as exc:
        raise FormatError(f"cannot open embeddings file: {exc}") from exc
    if head.startswith("{"):
        return ContextualSource(load_contextual(path))
    return StaticSource(load_embeddings(path, oov_policy=oov_policy, oov_seed=seed))


def _build_configs(args, examples_dim_hint=None):
    """Merge config file and flags into (ModelConfig, TrainConfig, extras)."""
    cfg = _load_config_file(getattr(args, "config", None))
    seed = _resolve_seed(getattr(args, "seed", None))
    if "seed" in cfg and getattr(args, "seed", None) is None \
            and os.environ.get("MTXPLAIN_SEED") is None:
        seed = int(cfg["seed"])

    oov_policy = cfg.get("oov_policy", "random")
    source = _load_source(args.embeddings, oov_policy, seed)

    model_kwargs = {k: cfg[k] for k in _MODEL_KEYS if k in cfg and k != "loss_weights"}
    model_kwargs["seed"] = seed
    if "embed_dim" in model_kwargs and model_kwargs["embed_dim"] != source.dim:
        raise ConfigError(
            f"config embed_dim {model_kwargs['embed_dim']} does not match "
            f"vector width {source.dim}")
    model_kwargs["embed_dim"] = source.dim
    if "loss_weights" in cfg:
        from .heads import LossWeights
        model_kwargs["loss_weights"] = LossWeights.from_dict(cfg["loss_weights"])
    model_kwargs["tasks"] = _parse_tasks(args.tasks)
    model_config = ModelConfig(**model_kwargs)
    model_config.validate()

    train_kwargs = {k: cfg[k] for k in _TRAIN_KEYS if k in cfg}
    train_kwargs["seed"] = seed
    train_config = TrainConfig(**train_kwargs)
    train_config.validate()
    return model_config, train_config, source


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    examples, problems = parse_dataset(args.data)
    for problem in problems:
        _log(f"dropped: {problem}")
    if not examples:
        raise DataError("no usable examples in dataset")
    model_config, train_config, source = _build_configs(args)

    model = Model(model_config)
    _log(f"training {model_config.variant} on {len(examples)} examples, "
         f"{model.parameter_count()} parameters, tasks {model_config.tasks.enabled()}")
    trace = fit(model, examples, source, train_config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = save_checkpoint(model, out_dir / "checkpoint", epoch=train_config.epochs,
                               extra={"embeddings": {"path": str(args.embeddings),
                                                     "kind": source.kind,
                                                     "dim": source.dim},
                                      "train_config": train_config.to_dict()})
    report_mod.write_loss_csv(trace, out_dir / "loss_trace.csv")
    report_mod.save_loss_curve(trace, out_dir / "loss_curve.png")
    (out_dir / "loss_trace.json").write_text(json.dumps(trace) + "\n", encoding="utf-8")

    _emit({
        "examples": len(examples),
        "dropped": len(problems),
        "epochs": train_config.epochs,
        "final_loss": trace[-1],
        "parameters": model.parameter_count(),
        "tasks": list(model_config.tasks.enabled()),
        "checkpoint": str(ckpt_dir),
        "artifacts": [str(out_dir / "loss_trace.csv"),
                      str(out_dir / "loss_trace.json"),
                      str(out_dir / "loss_curve.png")],
    })
    return 0


def cmd_kfold(args) -> int:
    examples, problems = parse_dataset(args.data)
    for problem in problems:
        _log(f"dropped: {problem}")
    if not examples:
        raise DataError("no usable examples in dataset")
    if args.folds < 2:
        raise ConfigError(f"--folds must be >= 2, got {args.folds}")
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    model_config, train_config, source = _build_configs(args)

    _log(f"{args.folds}-fold cross-validation on {len(examples)} examples "
         f"({args.jobs} process{'es' if args.jobs > 1 else ''})")
    result = run_kfold(examples, model_config, train_config, source,
                       k=args.folds, jobs=args.jobs)

    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_mod.write_fold_csv(result, out_dir / "fold_metrics.csv")
        report_mod.save_fold_metrics(result, out_dir / "fold_metrics.png")
        (out_dir / "report.json").write_text(
            json.dumps(result, indent=2) + "\n", encoding="utf-8")
    _emit(result)
    return 0


def cmd_predict(args) -> int:
    model, manifest = load_checkpoint(args.model)
    tokens = args.text.lower().split()
    if not tokens:
        raise DataError("--text contains no tokens")

    meta = manifest.get("embeddings", {})
    vectors_path = args.embeddings or meta.get("path")
    if vectors_path is None:
        raise CheckpointError("checkpoint records no embeddings; pass --embeddings")
    if args.embeddings is None and meta.get("kind") == "contextual":
        raise ConfigError(
            "checkpoint was trained on precomputed contextual vectors; raw text "
            "cannot be embedded without a static table (--embeddings)")
    source = _load_source(vectors_path, "random", model.config.seed)
    if source.kind != "static":
        raise ConfigError("predict needs a static vector table to embed raw text")
    if source.dim != model.config.embed_dim:
        raise ConfigError(
            f"vector width {source.dim} does not match model embed_dim "
            f"{model.config.embed_dim}")

    from .embeddings import embed_sequence
    embedded, mask = embed_sequence(source.table, tokens, model.config.max_len)
    if mask.sum() == 0:
        raise DataError("no tokens survived embedding")
    prediction = model.predict(embedded, mask, n_tokens=len(tokens))
    payload = {"tokens": tokens,
               "truncated_to": int(min(len(tokens), model.config.max_len)),
               "predictions": prediction.as_dict()}
    _emit(payload)
    return 0


def cmd_stats(args) -> int:
    examples, problems = parse_dataset(args.data)
    for problem in problems:
        _log(f"dropped: {problem}")
    if not examples:
        raise DataError("no usable examples in dataset")
    stats = dataset_stats(examples)
    payload = stats.as_dict()
    payload["consistency_problems"] = len(problems)
    if args.out:
        written = report_mod.write_stats_outputs(stats, args.out)
        payload["artifacts"] = [str(p) for p in written]
    _emit(payload)
    return 0


def cmd_agreement(args) -> int:
    posts = []
    try:
        fh = open(args.annotations, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open annotations file: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc})") from exc
            masks = record.get("masks")
            if isinstance(masks, dict):
                masks = [masks[k] for k in sorted(masks)]
            if not isinstance(masks, list) or len(masks) < 2:
                raise DataError(f"line {line_no}: need >= 2 annotator masks")
            posts.append((str(record.get("id", line_no)), masks))
    if not posts:
        raise DataError("annotations file holds no posts")

    n_annotators = len(posts[0][1])
    all_rows = []
    majorities = []
    total_ties = 0
    for post_id, masks in posts:
        if len(masks) != n_annotators:
            raise DataError(f"post {post_id!r} has {len(masks)} annotators, "
                            f"expected {n_annotators}")
        all_rows.append(masks_to_matrix(masks))
        merged, ties = majority_vote(masks)
        total_ties += len(ties)
        majorities.append({"id": post_id, "mask": merged, "ties": ties})

    matrix = np.concatenate(all_rows, axis=0)
    kappa = fleiss_kappa(matrix)
    _emit({
        "posts": len(posts),
        "annotators": n_annotators,
        "positions": int(matrix.shape[0]),
        "kappa": kappa.as_dict(),
        "tie_positions": total_ties,
        "majority": majorities,
    })
    return 0


def cmd_align(args) -> int:
    src = load_embeddings(args.src)
    tgt = load_embeddings(args.tgt)
    pairs = load_dictionary(args.dict)
    result = procrustes_align(src, tgt, pairs)
    write_embeddings(result.mapped, args.out)
    rotation = result.rotation
    orth = float(np.abs(rotation.T @ rotation - np.eye(rotation.shape[0])).max())
    _emit({
        "pairs_total": result.pairs_total,
        "pairs_used": result.pairs_used,
        "objective_before": result.objective_before,
        "objective_after": result.objective_after,
        "rotation_orthogonality_error": orth,
        "output": str(args.out),
    })
    return 0


def _read_scores(path) -> list:
    try:
        lines = Path(path).read_text(encoding="utf-8").split()
    except OSError as exc:
        raise DataError(f"cannot read score file: {exc}") from exc
    try:
        return [float(v) for v in lines]
    except ValueError as exc:
        raise DataError(f"{path}: score files hold one number per line") from exc


def cmd_ttest(args) -> int:
    scores_a = _read_scores(args.a)
    scores_b = _read_scores(args.b)
    result = paired_ttest(scores_a, scores_b)
    _emit(result.as_dict())
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtxplain",
                     description="Multitask abusive-language classifier with "
                                 "token rationales")
    parser.add_argument("--version", action="version", version=f"mtxplain {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint",
                       parents=[], description="Train on a JSONL dataset.")
    p.add_argument("--data", required=True, help="JSONL dataset path")
    p.add_argument("--embeddings", required=True, help="word vector file")
    p.add_argument("--tasks", default="cd,rd", help="comma list: cd,rd,sa,ti")
    p.add_argument("--config", help="JSON file of hyperparameters")
    p.add_argument("--seed", type=int, help="overrides MTXPLAIN_SEED")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold", help="stratified cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--tasks", default="cd,rd")
    p.add_argument("--config", help="JSON file of hyperparameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="parallel fold processes")
    p.add_argument("--out", help="directory for fold CSV/PNG artifacts")
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("predict", help="classify one text with a checkpoint")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--text", required=True)
    p.add_argument("--embeddings", help="override the checkpoint's vector table")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for CSV/figure artifacts")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("agreement", help="annotator agreement on rationale masks")
    p.add_argument("--annotations", required=True,
                   help="JSONL: {'id': ..., 'masks': {annotator: 0/1 list}}")
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("align", help="map one vector table into another's space")
    p.add_argument("--src", required=True, help="source vector file")
    p.add_argument("--tgt", required=True, help="target vector file")
    p.add_argument("--dict", required=True, help="word-pair dictionary file")
    p.add_argument("--out", required=True, help="path for the mapped vectors")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("ttest", help="paired t-test between two score files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_ttest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except _VALIDATION_ERRORS as exc:
        _log(f"error: {exc}")
        return 1
    except MtxError as exc:
        _log(f"runtime failure: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001  (CLI boundary)
        _log(f"unexpected failure: {type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
