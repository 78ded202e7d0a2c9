"""Dataset schema, JSONL parsing, corpus statistics, folds, and annotation math.

One example is a social-media post with a binary abuse label, a sentiment
label, a target-category label, and a 0/1 rationale mark per token. Tokens
come from lowercased whitespace splitting and every aligned field must match
their count exactly.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, StratificationError

BULLY_LABELS = ("non-bully", "bully")
SENTIMENT_LABELS = ("positive", "neutral", "negative")
TARGET_LABELS = (
    "religion",
    "sexual-orientation",
    "attacking-relatives-and-friends",
    "organization",
    "community",
    "profession",
    "miscellaneous",
    "NA",
)
NO_TARGET = "NA"


def tokenize(text: str):
    return text.lower().split()


@dataclass
class Example:
    id: str
    text: str
    tokens: list
    bully: str
    sentiment: str
    target: str
    rationale: list

    @property
    def bully_id(self) -> int:
        return BULLY_LABELS.index(self.bully)

    @property
    def sentiment_id(self) -> int:
        return SENTIMENT_LABELS.index(self.sentiment)

    @property
    def target_id(self) -> int:
        return TARGET_LABELS.index(self.target)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "bully": self.bully,
            "sentiment": self.sentiment,
            "target": self.target,
            "rationale": list(self.rationale),
        }


def _example_from_record(record: dict, line_no: int) -> Example:
    if not isinstance(record, dict):
        raise DataError(f"line {line_no}: record must be a JSON object")
    for key in ("text", "bully", "sentiment"):
        if key not in record:
            raise DataError(f"line {line_no}: missing field {key!r}")
    text = record["text"]
    if not isinstance(text, str):
        raise DataError(f"line {line_no}: 'text' must be a string")
    tokens = tokenize(text)

    bully = record["bully"]
    if bully not in BULLY_LABELS:
        raise DataError(f"line {line_no}: unknown bully label {bully!r}")
    sentiment = record["sentiment"]
    if sentiment not in SENTIMENT_LABELS:
        raise DataError(f"line {line_no}: unknown sentiment label {sentiment!r}")
    target = record.get("target", NO_TARGET)
    if target not in TARGET_LABELS:
        raise DataError(f"line {line_no}: unknown target label {target!r}")

    rationale = record.get("rationale")
    if rationale is None:
        rationale = [0] * len(tokens)
    if not isinstance(rationale, list) or any(
            not isinstance(v, int) or isinstance(v, bool) or v not in (0, 1)
            for v in rationale):
        raise DataError(f"line {line_no}: 'rationale' must be a list of 0/1 ints")
    if len(rationale) != len(tokens):
        raise DataError(
            f"line {line_no}: rationale length {len(rationale)} != "
            f"{len(tokens)} tokens")

    ex_id = record.get("id")
    ex_id = str(ex_id) if ex_id is not None else str(line_no)
    return Example(id=ex_id, text=text, tokens=tokens, bully=bully,
                   sentiment=sentiment, target=target, rationale=list(rationale))


def _consistency_problems(ex: Example, line_no: int):
    problems = []
    if ex.bully == "non-bully":
        if any(ex.rationale):
            problems.append(f"line {line_no}: non-bully post has rationale marks")
        if ex.target != NO_TARGET:
            problems.append(f"line {line_no}: non-bully post has target {ex.target!r}")
    else:
        if ex.target == NO_TARGET:
            problems.append(f"line {line_no}: bully post has no target category")
    return problems


def parse_dataset(path, strict: bool = False):
    """Parse a JSONL dataset file into (examples, consistency_report).

    Schema violations (bad JSON, missing fields, unknown labels, misaligned
    rationale) always raise DataError naming the line. Label-consistency
    violations are reported and the offending example dropped, unless
    strict=True, in which case they raise too.
    """
    examples, report = [], []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open dataset: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc})") from exc
            ex = _example_from_record(record, line_no)
            problems = _consistency_problems(ex, line_no)
            if problems:
                if strict:
                    raise DataError("; ".join(problems))
                report.extend(problems)
                continue
            examples.append(ex)
    return examples, report


def write_dataset(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record()) + "\n")


# ---------------------------------------------------------------------------
# corpus statistics
# ---------------------------------------------------------------------------


@dataclass
class DatasetStats:
    total: int
    bully: int
    non_bully: int
    sentiment_counts: dict
    target_counts: dict
    mean_tokens: float
    mean_rationale_tokens: float
    no_bully_posts: bool
    top_rationale_words: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "bully": self.bully,
            "non_bully": self.non_bully,
            "sentiment_counts": dict(self.sentiment_counts),
            "target_counts": dict(self.target_counts),
            "mean_tokens": self.mean_tokens,
            "mean_rationale_tokens": self.mean_rationale_tokens,
            "no_bully_posts": self.no_bully_posts,
            "top_rationale_words": [list(t) for t in self.top_rationale_words],
        }


def dataset_stats(examples, top_k: int = 10) -> DatasetStats:
    """Aggregate label counts, mean lengths, and most-marked rationale words."""
    if not examples:
        raise DataError("dataset_stats needs at least one example")
    bully = sum(1 for ex in examples if ex.bully == "bully")
    sentiment_counts = {label: 0 for label in SENTIMENT_LABELS}
    target_counts = {label: 0 for label in TARGET_LABELS}
    for ex in examples:
        sentiment_counts[ex.sentiment] += 1
        target_counts[ex.target] += 1

    mean_tokens = sum(len(ex.tokens) for ex in examples) / len(examples)

    marked = Counter()
    rationale_lengths = []
    for ex in examples:
        if ex.bully != "bully":
            continue
        rationale_lengths.append(sum(ex.rationale))
        for tok, flag in zip(ex.tokens, ex.rationale):
            if flag:
                marked[tok] += 1
    no_bully = not rationale_lengths
    mean_rationale = (sum(rationale_lengths) / len(rationale_lengths)
                      if rationale_lengths else 0.0)
    denom = max(bully, 1)
    # share of bully posts in which each word was marked at least once
    top = [(word, 100.0 * count / denom)
           for word, count in marked.most_common()]
    top.sort(key=lambda wc: (-wc[1], wc[0]))
    return DatasetStats(
        total=len(examples),
        bully=bully,
        non_bully=len(examples) - bully,
        sentiment_counts=sentiment_counts,
        target_counts=target_counts,
        mean_tokens=mean_tokens,
        mean_rationale_tokens=mean_rationale,
        no_bully_posts=no_bully,
        top_rationale_words=top[:top_k],
    )


# ---------------------------------------------------------------------------
# stratified folds
# ---------------------------------------------------------------------------


def stratified_kfold(examples, k: int = 10, seed: int = 0):
    """Split example indices into k folds preserving the bully/non-bully ratio.

    Each class is shuffled with its own slice of a seeded generator and dealt
    round-robin, so per-fold class counts deviate from exact proportionality
    by at most one. Returns k lists of indices into `examples`.
    """
    if k < 2:
        raise StratificationError(f"need at least 2 folds, got {k}")
    by_class: dict = {}
    for idx, ex in enumerate(examples):
        by_class.setdefault(ex.bully, []).append(idx)
    for label, members in by_class.items():
        if len(members) < k:
            raise StratificationError(
                f"class {label!r} has {len(members)} examples, fewer than k={k}")

    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for class_no, label in enumerate(sorted(by_class)):
        members = by_class[label]
        order = rng.permutation(len(members))
        for pos, j in enumerate(order):
            # rotate the starting fold per class so remainders spread out
            folds[(pos + class_no) % k].append(members[j])
    return folds


# ---------------------------------------------------------------------------
# annotation aggregation
# ---------------------------------------------------------------------------


def majority_vote(masks):
    """Combine per-annotator 0/1 masks by majority; ties break to 0.

    Returns (mask, tie_positions). Requires at least two masks of one
    common length.
    """
    if len(masks) < 2:
        raise DataError(f"majority_vote needs >= 2 masks, got {len(masks)}")
    length = len(masks[0])
    for i, m in enumerate(masks):
        if len(m) != length:
            raise DataError(f"mask {i} has length {len(m)}, expected {length}")
        if any(v not in (0, 1) for v in m):
            raise DataError(f"mask {i} contains values other than 0/1")
    n = len(masks)
    out, ties = [], []
    for pos in range(length):
        votes = sum(m[pos] for m in masks)
        if 2 * votes == n:
            ties.append(pos)
            out.append(0)
        else:
            out.append(1 if 2 * votes > n else 0)
    return out, ties


@dataclass
class FleissKappa:
    kappa: float | None
    p_bar: float
    p_e: float
    degenerate: bool

    def as_dict(self) -> dict:
        return {"kappa": self.kappa, "p_bar": self.p_bar, "p_e": self.p_e,
                "degenerate": self.degenerate}


def fleiss_kappa(matrix) -> FleissKappa:
    """Chance-corrected agreement for an (items, categories) count matrix.

    Every row must sum to the same number of raters r >= 2. When all mass
    falls in one category, expected agreement is 1 and kappa is undefined;
    the result is flagged degenerate with kappa None.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 2:
        raise DataError(f"agreement matrix must be (items, categories>=2), got {m.shape}")
    if np.any(m < 0) or np.any(m != np.round(m)):
        raise DataError("agreement matrix must hold nonnegative integer counts")
    row_sums = m.sum(axis=1)
    r = row_sums[0]
    if r < 2 or np.any(row_sums != r):
        raise DataError("every item needs the same number of raters (>= 2)")

    n = m.shape[0]
    p_i = ((m * m).sum(axis=1) - r) / (r * (r - 1.0))
    p_bar = float(p_i.mean())
    p_j = m.sum(axis=0) / (n * r)
    p_e = float((p_j * p_j).sum())
    if p_e >= 1.0:
        return FleissKappa(kappa=None, p_bar=p_bar, p_e=p_e, degenerate=True)
    kappa = (p_bar - p_e) / (1.0 - p_e)
    return FleissKappa(kappa=float(kappa), p_bar=p_bar, p_e=p_e, degenerate=False)


def masks_to_matrix(mask_rows, categories: int = 2) -> np.ndarray:
    """Stack per-annotator masks into a Fleiss count matrix.

    mask_rows is a list of annotator masks over the same positions; output is
    (positions, categories) with per-category vote counts.
    """
    if len(mask_rows) < 2:
        raise DataError("need at least two annotators")
    length = len(mask_rows[0])
    for i, row in enumerate(mask_rows):
        if len(row) != length:
            raise DataError(f"annotator {i} mask has length {len(row)}, expected {length}")
    out = np.zeros((length, categories), dtype=np.int64)
    for row in mask_rows:
        for pos, value in enumerate(row):
            if not 0 <= value < categories:
                raise DataError(f"mask value {value} outside 0..{categories - 1}")
            out[pos, value] += 1
    return out
