"""Task heads, fusion, rationale scoring, and the joint training loss.

Each classification task reads the sentence vector through its own two-layer
ReLU head. The abuse head is special: before its output layer it adds in a
projection of the rationale probabilities and the sentiment head's last
hidden activation, so the explanation and sentiment evidence reach the main
decision with gradients attached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BULLY_LABELS, SENTIMENT_LABELS, TARGET_LABELS
from .errors import ConfigError, DataError
from .tensor import Tensor, clip, log, matmul, pick, relu, sigmoid, softmax_rows, sum_all
from .encoder import glorot

TASK_ORDER = ("bully", "rationale", "sentiment", "target")
NUM_CLASSES = {"bully": len(BULLY_LABELS),
               "sentiment": len(SENTIMENT_LABELS),
               "target": len(TARGET_LABELS)}

_ALIASES = {
    "cd": "bully", "bully": "bully",
    "rd": "rationale", "rationale": "rationale",
    "sa": "sentiment", "sentiment": "sentiment",
    "ti": "target", "target": "target",
}

# Task mixes with known-good training recipes; the command line sticks to
# these while the library accepts any set that includes the main task.
SUPPORTED_COMBINATIONS = (
    ("bully", "rationale"),
    ("bully", "rationale", "sentiment"),
    ("bully", "rationale", "target"),
    ("bully", "rationale", "sentiment", "target"),
    ("bully", "sentiment"),
)


@dataclass(frozen=True)
class TaskSet:
    rationale: bool = True
    sentiment: bool = False
    target: bool = False

    @classmethod
    def from_names(cls, names) -> "TaskSet":
        seen = set()
        for raw in names:
            name = _ALIASES.get(str(raw).strip().lower())
            if name is None:
                raise ConfigError(f"unknown task name {raw!r}")
            seen.add(name)
        if "bully" not in seen:
            raise ConfigError("the task set must include the main task (cd)")
        if seen == {"bully"}:
            raise ConfigError("the main task cannot be trained alone; add at least one auxiliary task")
        return cls(rationale="rationale" in seen,
                   sentiment="sentiment" in seen,
                   target="target" in seen)

    def enabled(self) -> tuple:
        out = ["bully"]
        if self.rationale:
            out.append("rationale")
        if self.sentiment:
            out.append("sentiment")
        if self.target:
            out.append("target")
        return tuple(out)

    def is_supported_combination(self) -> bool:
        return self.enabled() in SUPPORTED_COMBINATIONS

    def to_dict(self) -> dict:
        return {"rationale": self.rationale, "sentiment": self.sentiment,
                "target": self.target}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSet":
        return cls(rationale=bool(d.get("rationale", False)),
                   sentiment=bool(d.get("sentiment", False)),
                   target=bool(d.get("target", False)))


@dataclass(frozen=True)
class LossWeights:
    bully: float = 1.0
    rationale: float = 0.75
    sentiment: float = 0.66
    target: float = 0.50

    def validate(self) -> None:
        for name in TASK_ORDER:
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"loss weight {name} must be in (0, 1], got {value}")

    def for_task(self, name: str) -> float:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in TASK_ORDER}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**{k: float(v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------


class DropoutStream:
    """Counter-based source of inverted dropout masks.

    Each mask comes from a generator seeded with (seed, tag, counter), so a
    fixed seed reproduces the exact mask sequence regardless of numpy's
    global state.
    """

    def __init__(self, seed: int, tag: int = 0xD0):
        self.seed = int(seed)
        self.tag = int(tag)
        self.counter = 0

    def mask(self, shape, rate: float) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self.tag, self.counter])
        self.counter += 1
        keep = (rng.random(shape) >= rate).astype(np.float64)
        return keep / (1.0 - rate)


def dropout(x: Tensor, rate: float, stream: DropoutStream | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no stream is given."""
    if rate < 0.0 or rate >= 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or stream is None:
        return x
    return x * Tensor(stream.mask(x.data.shape, rate))


# ---------------------------------------------------------------------------
# head construction and forward passes
# ---------------------------------------------------------------------------


def init_head_params(params: dict, rng, prefix: str, in_dim: int, width: int,
                     out_dim: int) -> None:
    params[f"{prefix}.fc1_w"] = Tensor(glorot(rng, in_dim, width, (in_dim, width)),
                                       requires_grad=True)
    params[f"{prefix}.fc1_b"] = Tensor(np.zeros((1, width)), requires_grad=True)
    params[f"{prefix}.fc2_w"] = Tensor(glorot(rng, width, width, (width, width)),
                                       requires_grad=True)
    params[f"{prefix}.fc2_b"] = Tensor(np.zeros((1, width)), requires_grad=True)
    params[f"{prefix}.out_w"] = Tensor(glorot(rng, width, out_dim, (width, out_dim)),
                                       requires_grad=True)
    params[f"{prefix}.out_b"] = Tensor(np.zeros((1, out_dim)), requires_grad=True)


def init_rationale_params(params: dict, rng, prefix: str, in_dim: int, max_len: int) -> None:
    params[f"{prefix}.w"] = Tensor(glorot(rng, in_dim, max_len, (in_dim, max_len)),
                                   requires_grad=True)
    params[f"{prefix}.b"] = Tensor(np.zeros((1, max_len)), requires_grad=True)


def init_fusion_params(params: dict, rng, prefix: str, max_len: int, width: int) -> None:
    params[f"{prefix}.w"] = Tensor(glorot(rng, max_len, width, (max_len, width)),
                                   requires_grad=True)
    params[f"{prefix}.b"] = Tensor(np.zeros((1, width)), requires_grad=True)


def head_hidden(params: dict, prefix: str, x: Tensor, rate: float = 0.0,
                stream: DropoutStream | None = None) -> Tensor:
    """The two ReLU layers shared by every head, dropout after each."""
    h1 = relu(matmul(x, params[f"{prefix}.fc1_w"]) + params[f"{prefix}.fc1_b"])
    h1 = dropout(h1, rate, stream)
    h2 = relu(matmul(h1, params[f"{prefix}.fc2_w"]) + params[f"{prefix}.fc2_b"])
    return dropout(h2, rate, stream)


def head_output(params: dict, prefix: str, hidden: Tensor) -> Tensor:
    return matmul(hidden, params[f"{prefix}.out_w"]) + params[f"{prefix}.out_b"]


def rationale_probs(params: dict, prefix: str, features: Tensor, mask) -> tuple:
    """Per-position mark probabilities; returns (raw, masked) rows of width N.

    The masked row zeroes pad positions and is what prediction and fusion
    consume; the raw row is what the loss reads (pad terms are excluded there
    by masking inside the loss instead).
    """
    logits = matmul(features, params[f"{prefix}.w"]) + params[f"{prefix}.b"]
    raw = sigmoid(logits)
    masked = raw * Tensor(np.asarray(mask, dtype=np.float64)[None, :])
    return raw, masked


def fuse_bully(params: dict, prefix: str, bully_hidden: Tensor,
               rationale_masked: Tensor | None,
               sentiment_hidden: Tensor | None) -> Tensor:
    """Sum the abuse head's hidden state with projected auxiliary evidence."""
    fused = bully_hidden
    if rationale_masked is not None:
        fused = fused + (matmul(rationale_masked, params[f"{prefix}.w"])
                         + params[f"{prefix}.b"])
    if sentiment_hidden is not None:
        fused = fused + sentiment_hidden
    return fused


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

PROB_EPS = 1e-12


def cross_entropy(prob_row: Tensor, gold_index: int) -> Tensor:
    """Negative log of the clamped gold-class probability (single row)."""
    if prob_row.data.ndim != 2 or prob_row.data.shape[0] != 1:
        raise DataError(f"expected a (1, K) probability row, got {prob_row.data.shape}")
    if not 0 <= gold_index < prob_row.data.shape[1]:
        raise DataError(f"gold index {gold_index} outside 0..{prob_row.data.shape[1] - 1}")
    return -log(clip(pick(prob_row, 0, gold_index), PROB_EPS, 1.0 - PROB_EPS))


def masked_bce(prob_row: Tensor, gold_mask, live_mask) -> Tensor:
    """Mean binary cross entropy over live positions of a (1, N) probability row."""
    n = prob_row.data.shape[1]
    gold = np.asarray(gold_mask, dtype=np.float64).reshape(n)
    live = np.asarray(live_mask, dtype=np.float64).reshape(n)
    count = live.sum()
    if count == 0:
        raise DataError("masked_bce needs at least one live position")
    p = clip(prob_row, PROB_EPS, 1.0 - PROB_EPS)
    gold_t = Tensor(gold[None, :])
    live_t = Tensor(live[None, :])
    terms = gold_t * log(p) + (1.0 - gold_t) * log(1.0 - p)
    return -sum_all(terms * live_t) * (1.0 / count)


@dataclass
class TaskOutputs:
    """Forward-pass products for one example, still attached to the graph."""
    bully_probs: Tensor
    rationale_raw: Tensor | None = None
    rationale_masked: Tensor | None = None
    sentiment_probs: Tensor | None = None
    target_probs: Tensor | None = None


@dataclass
class GoldLabels:
    bully: int
    sentiment: int | None = None
    target: int | None = None
    rationale: np.ndarray | None = None
    mask: np.ndarray | None = None


def task_losses(outputs: TaskOutputs, gold: GoldLabels, tasks: TaskSet) -> dict:
    """Per-task scalar loss tensors for every enabled task."""
    losses = {"bully": cross_entropy(outputs.bully_probs, gold.bully)}
    if tasks.rationale:
        if outputs.rationale_raw is None or gold.rationale is None:
            raise DataError("rationale task enabled but probabilities or gold missing")
        losses["rationale"] = masked_bce(outputs.rationale_raw, gold.rationale, gold.mask)
    if tasks.sentiment:
        if outputs.sentiment_probs is None or gold.sentiment is None:
            raise DataError("sentiment task enabled but probabilities or gold missing")
        losses["sentiment"] = cross_entropy(outputs.sentiment_probs, gold.sentiment)
    if tasks.target:
        if outputs.target_probs is None or gold.target is None:
            raise DataError("target task enabled but probabilities or gold missing")
        losses["target"] = cross_entropy(outputs.target_probs, gold.target)
    return losses


def combine_losses(losses: dict, weights: LossWeights) -> Tensor:
    """Weighted sum of task losses, in the fixed canonical task order."""
    total = None
    for name in TASK_ORDER:
        if name not in losses:
            continue
        term = weights.for_task(name) * losses[name]
        total = term if total is None else total + term
    if total is None:
        raise DataError("no task losses to combine")
    return total


def joint_loss(outputs: TaskOutputs, gold: GoldLabels, tasks: TaskSet,
               weights: LossWeights) -> Tensor:
    return combine_losses(task_losses(outputs, gold, tasks), weights)


# ---------------------------------------------------------------------------
# numpy-facing prediction container
# ---------------------------------------------------------------------------

RATIONALE_THRESHOLD = 0.5


@dataclass
class Prediction:
    bully_probs: np.ndarray
    bully_label: str
    sentiment_probs: np.ndarray | None = None
    sentiment_label: str | None = None
    target_probs: np.ndarray | None = None
    target_label: str | None = None
    rationale_probs: np.ndarray | None = None
    rationale_mask: list | None = None

    def as_dict(self) -> dict:
        out = {"bully": {"label": self.bully_label,
                         "probs": self.bully_probs.tolist()}}
        if self.sentiment_probs is not None:
            out["sentiment"] = {"label": self.sentiment_label,
                                "probs": self.sentiment_probs.tolist()}
        if self.target_probs is not None:
            out["target"] = {"label": self.target_label,
                             "probs": self.target_probs.tolist()}
        if self.rationale_probs is not None:
            out["rationale"] = {"probs": self.rationale_probs.tolist(),
                                "mask": list(self.rationale_mask)}
        return out


def prediction_from_outputs(outputs: TaskOutputs, mask: np.ndarray,
                            n_tokens: int) -> Prediction:
    """Detach a forward pass into labels, probabilities, and a rationale mask."""
    bully_probs = outputs.bully_probs.data[0].copy()
    pred = Prediction(bully_probs=bully_probs,
                      bully_label=BULLY_LABELS[int(bully_probs.argmax())])
    if outputs.sentiment_probs is not None:
        p = outputs.sentiment_probs.data[0].copy()
        pred.sentiment_probs = p
        pred.sentiment_label = SENTIMENT_LABELS[int(p.argmax())]
    if outputs.target_probs is not None:
        p = outputs.target_probs.data[0].copy()
        pred.target_probs = p
        pred.target_label = TARGET_LABELS[int(p.argmax())]
    if outputs.rationale_masked is not None:
        probs = outputs.rationale_masked.data[0].copy()
        live = np.asarray(mask, dtype=np.float64)
        marks = ((probs >= RATIONALE_THRESHOLD) & (live > 0)).astype(int)
        keep = min(n_tokens, probs.shape[0])
        pred.rationale_probs = probs[:keep]
        pred.rationale_mask = marks[:keep].tolist()
    return pred
