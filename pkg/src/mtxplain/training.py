"""Optimization, the training loop, evaluation, cross-validation, checkpoints.

Everything here is deterministic for a fixed seed: example order, dropout
masks, and parameter initialization all come from explicitly seeded
generators, so repeated runs produce bitwise-identical parameters.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data import stratified_kfold
from .errors import CheckpointError, ConfigError, DataError, TrainingError
from .heads import DropoutStream, GoldLabels, NUM_CLASSES, joint_loss
from .metrics import classification_report, rationale_scores
from .model import Model, ModelConfig, gold_from_example


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    dropout: float = 0.25
    seed: int = 0
    decoupled_weight_decay: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def adam_update(theta: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                t: int, lr: float, weight_decay: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                decoupled: bool = False) -> None:
    """One in-place Adam step on a single parameter array.

    The default couples weight decay into the gradient before the moment
    updates; the decoupled form subtracts lr * wd * theta separately instead.
    """
    if decoupled:
        theta -= lr * weight_decay * theta
        g = grad
    else:
        g = grad + weight_decay * theta
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a name -> Tensor parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-4, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 decoupled: bool = False):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decoupled = decoupled
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                continue
            if not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            adam_update(p.data, grad, self.m[name], self.v[name], self.t,
                        self.lr, self.weight_decay,
                        self.beta1, self.beta2, self.eps, self.decoupled)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _prepare(examples, source, max_len: int):
    """Embed every example once up front; returns parallel input/gold lists."""
    inputs, golds = [], []
    for ex in examples:
        embedded, mask = source.sequence(ex, max_len)
        if mask.sum() == 0:
            raise DataError(f"example {ex.id!r} embeds to an empty sequence")
        inputs.append((embedded, mask))
        golds.append(gold_from_example(ex, max_len, mask))
    return inputs, golds


def fit(model: Model, examples, source, train_cfg: TrainConfig):
    """Train in place; returns the per-epoch mean joint loss trace."""
    train_cfg.validate()
    if not examples:
        raise DataError("fit needs at least one example")
    inputs, golds = _prepare(examples, source, model.config.max_len)

    opt = Adam(model.params, lr=train_cfg.learning_rate,
               weight_decay=train_cfg.weight_decay,
               decoupled=train_cfg.decoupled_weight_decay)
    shuffle_rng = np.random.default_rng(train_cfg.seed)
    stream = DropoutStream(train_cfg.seed)
    tasks = model.config.tasks
    weights = model.config.loss_weights

    trace = []
    n = len(examples)
    for epoch in range(train_cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            opt.zero_grad()
            total = None
            for idx in batch:
                embedded, mask = inputs[idx]
                out = model.forward(embedded, mask,
                                    dropout_rate=train_cfg.dropout, stream=stream)
                loss = joint_loss(out, golds[idx], tasks, weights)
                total = loss if total is None else total + loss
            batch_loss = total * (1.0 / len(batch))
            value = batch_loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // train_cfg.batch_size}")
            batch_loss.backward()
            opt.step()
            epoch_sum += value * len(batch)
        trace.append(epoch_sum / n)
    return trace


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(model: Model, examples, source) -> dict:
    """Score a model on labeled examples, one report per enabled task.

    Target metrics are reported twice: over every example and restricted to
    posts whose gold target is a real category.
    """
    if not examples:
        raise DataError("evaluate needs at least one example")
    tasks = model.config.tasks
    max_len = model.config.max_len

    bully_gold, bully_pred = [], []
    sent_gold, sent_pred = [], []
    targ_gold, targ_pred = [], []
    rationale_triples = []

    for ex in examples:
        embedded, mask = source.sequence(ex, max_len)
        pred = model.predict(embedded, mask, n_tokens=len(ex.tokens))
        bully_gold.append(ex.bully_id)
        bully_pred.append(int(np.argmax(pred.bully_probs)))
        if tasks.sentiment:
            sent_gold.append(ex.sentiment_id)
            sent_pred.append(int(np.argmax(pred.sentiment_probs)))
        if tasks.target:
            targ_gold.append(ex.target_id)
            targ_pred.append(int(np.argmax(pred.target_probs)))
        if tasks.rationale:
            n = min(len(ex.tokens), max_len)
            gold_mask = list(ex.rationale[:n])
            pred_mask = list(pred.rationale_mask[:n])
            rationale_triples.append((pred_mask, gold_mask, ex.tokens[:n]))

    report = {"count": len(examples),
              "bully": classification_report(bully_gold, bully_pred,
                                             NUM_CLASSES["bully"]).as_dict()}
    if tasks.sentiment:
        report["sentiment"] = classification_report(
            sent_gold, sent_pred, NUM_CLASSES["sentiment"]).as_dict()
    if tasks.target:
        report["target"] = classification_report(
            targ_gold, targ_pred, NUM_CLASSES["target"]).as_dict()
        na_index = NUM_CLASSES["target"] - 1
        kept = [(g, p) for g, p in zip(targ_gold, targ_pred) if g != na_index]
        if kept:
            report["target_excl_na"] = classification_report(
                [g for g, _ in kept], [p for _, p in kept],
                NUM_CLASSES["target"]).as_dict()
    if tasks.rationale and rationale_triples:
        report["rationale"] = rationale_scores(rationale_triples).as_dict()
    return report


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


def _run_fold(args):
    """Train and evaluate one fold; module-level so worker processes can import it."""
    (fold_no, examples, train_idx, test_idx, model_cfg_dict, train_cfg_dict,
     source) = args
    model_cfg = ModelConfig.from_dict(model_cfg_dict)
    train_cfg = TrainConfig.from_dict(train_cfg_dict)
    model_cfg.seed = model_cfg.seed + fold_no
    train_cfg.seed = train_cfg.seed + fold_no
    model = Model(model_cfg)
    fit(model, [examples[i] for i in train_idx], source, train_cfg)
    report = evaluate(model, [examples[i] for i in test_idx], source)
    report["fold"] = fold_no
    report["train_size"] = len(train_idx)
    report["test_size"] = len(test_idx)
    return report


def _numeric_leaves(tree, prefix=""):
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            yield from _numeric_leaves(value, path)
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            yield path, float(value)


def run_kfold(examples, model_cfg: ModelConfig, train_cfg: TrainConfig, source,
              k: int = 10, jobs: int = 1) -> dict:
    """Stratified k-fold cross-validation; fold seeds are seed + fold index.

    With jobs > 1 folds train in separate processes. The summary holds the
    arithmetic mean and population standard deviation of every numeric leaf
    that appears in all fold reports.
    """
    folds = stratified_kfold(examples, k=k, seed=train_cfg.seed)
    all_idx = set(range(len(examples)))
    tasks = [
        (fold_no, examples, sorted(all_idx - set(test_idx)), list(test_idx),
         model_cfg.to_dict(), train_cfg.to_dict(), source)
        for fold_no, test_idx in enumerate(folds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            fold_reports = list(pool.map(_run_fold, tasks))
    else:
        fold_reports = [_run_fold(t) for t in tasks]

    leaf_values: dict = {}
    for report in fold_reports:
        for path, value in _numeric_leaves(report):
            leaf_values.setdefault(path, []).append(value)
    summary = {}
    for path, values in leaf_values.items():
        if len(values) != k or path in ("fold",):
            continue
        arr = np.asarray(values)
        summary[path] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return {"k": k, "folds": fold_reports, "summary": summary}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
CHECKPOINT_FORMAT = 1


def save_checkpoint(model: Model, directory, epoch: int, extra: dict | None = None) -> Path:
    """Write a manifest plus one little-endian float64 .bin file per parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, p) in enumerate(model.params.items()):
        filename = f"p{i:04d}.bin"
        (directory / filename).write_bytes(p.data.astype("<f8").tobytes())
        entries.append({"name": name, "shape": list(p.data.shape), "file": filename})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "dtype": "<f8",
        "epoch": epoch,
        "config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "params": entries,
    }
    if extra:
        manifest.update(extra)
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory):
    """Rebuild a model from a checkpoint directory; returns (model, manifest).

    The manifest's stored config hash must match a hash recomputed from the
    stored config, and every parameter file must hold exactly the declared
    number of float64 bytes.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise CheckpointError(f"no {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")

    config = ModelConfig.from_dict(manifest["config"])
    if config.config_hash() != manifest.get("config_hash"):
        raise CheckpointError("config hash mismatch; checkpoint config was altered")

    model = Model(config)
    declared = {entry["name"]: entry for entry in manifest["params"]}
    if set(declared) != set(model.params):
        missing = set(model.params) ^ set(declared)
        raise CheckpointError(f"parameter set mismatch: {sorted(missing)}")
    for name, entry in declared.items():
        shape = tuple(entry["shape"])
        if model.params[name].data.shape != shape:
            raise CheckpointError(
                f"parameter {name!r} shape {shape} does not match model "
                f"{model.params[name].data.shape}")
        raw = (directory / entry["file"]).read_bytes()
        expected = int(np.prod(shape)) * 8 if shape else 8
        if len(raw) != expected:
            raise CheckpointError(
                f"parameter file {entry['file']} holds {len(raw)} bytes, "
                f"expected {expected}")
        model.params[name].data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return model, manifest
