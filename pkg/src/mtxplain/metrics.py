"""Evaluation metrics: classification reports, rationale overlap, paired t-test.

Accuracy and macro F1 are reported as percentages; per-class precision,
recall, and F1 stay as fractions. Rationale overlap has three views: index
Jaccard, Hamming similarity, and sequence-match ratio over the selected
token subsequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class ClassificationReport:
    accuracy: float
    macro_f1: float
    per_class: list
    confusion: np.ndarray
    undefined_classes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": [dict(c) for c in self.per_class],
            "confusion": self.confusion.tolist(),
            "undefined_classes": list(self.undefined_classes),
        }


def classification_report(gold, pred, num_classes: int) -> ClassificationReport:
    """Confusion matrix plus accuracy, macro F1, and per-class P/R/F1.

    A class with neither gold support nor predictions gets F1 = 0 and is
    listed in undefined_classes rather than silently skewing the macro mean.
    """
    gold = list(gold)
    pred = list(pred)
    if not gold or len(gold) != len(pred):
        raise DataError(f"need equal nonempty label lists, got {len(gold)} and {len(pred)}")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for g, p in zip(gold, pred):
        if not (0 <= g < num_classes and 0 <= p < num_classes):
            raise DataError(f"label pair ({g}, {p}) outside 0..{num_classes - 1}")
        confusion[g, p] += 1

    per_class = []
    undefined = []
    f1_sum = 0.0
    for c in range(num_classes):
        tp = float(confusion[c, c])
        pred_c = float(confusion[:, c].sum())
        gold_c = float(confusion[c, :].sum())
        precision = tp / pred_c if pred_c > 0 else 0.0
        recall = tp / gold_c if gold_c > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        if pred_c == 0 and gold_c == 0:
            undefined.append(c)
        per_class.append({"label": c, "precision": precision, "recall": recall,
                          "f1": f1, "support": int(gold_c)})
        f1_sum += f1

    accuracy = 100.0 * float(np.trace(confusion)) / len(gold)
    macro_f1 = 100.0 * f1_sum / num_classes
    return ClassificationReport(accuracy=accuracy, macro_f1=macro_f1,
                                per_class=per_class, confusion=confusion,
                                undefined_classes=undefined)


# ---------------------------------------------------------------------------
# rationale overlap
# ---------------------------------------------------------------------------


def _as_binary(mask, name):
    mask = list(mask)
    if any(v not in (0, 1) for v in mask):
        raise DataError(f"{name} must be a 0/1 mask")
    return mask


def jaccard(pred, gold) -> float:
    """Intersection over union of the marked index sets; two empty sets match."""
    pred = _as_binary(pred, "pred")
    gold = _as_binary(gold, "gold")
    if len(pred) != len(gold):
        raise DataError(f"mask lengths differ: {len(pred)} vs {len(gold)}")
    p = {i for i, v in enumerate(pred) if v}
    g = {i for i, v in enumerate(gold) if v}
    if not p and not g:
        return 1.0
    return len(p & g) / len(p | g)


def hamming_similarity(pred, gold) -> float:
    """1 - normalized Hamming distance between equal-length masks."""
    pred = _as_binary(pred, "pred")
    gold = _as_binary(gold, "gold")
    if not pred or len(pred) != len(gold):
        raise DataError(f"need equal nonempty masks, got {len(pred)} and {len(gold)}")
    mismatches = sum(1 for a, b in zip(pred, gold) if a != b)
    return 1.0 - mismatches / len(pred)


def ros(a, b) -> float:
    """Sequence-match ratio 2M / (|a| + |b|) over two token sequences.

    M is the total length matched by recursively taking a longest common
    contiguous block and recursing on both flanks. Where several longest
    blocks exist, the one maximizing total matched length is taken, which
    makes the score symmetric (a greedy first-block rule is not). Two empty
    sequences score 1.0.
    """
    a = tuple(a)
    b = tuple(b)
    if not a and not b:
        return 1.0
    memo: dict = {}
    matched = _best_match(a, b, 0, len(a), 0, len(b), memo)
    return 2.0 * matched / (len(a) + len(b))


def _best_match(a, b, alo, ahi, blo, bhi, memo) -> int:
    if alo >= ahi or blo >= bhi:
        return 0
    key = (alo, ahi, blo, bhi)
    if key in memo:
        return memo[key]

    # longest common contiguous block via the classic suffix table
    best_len = 0
    ends = []
    width = bhi - blo
    prev = [0] * (width + 1)
    for i in range(alo, ahi):
        cur = [0] * (width + 1)
        ai = a[i]
        for j in range(blo, bhi):
            if ai == b[j]:
                run = prev[j - blo] + 1
                cur[j - blo + 1] = run
                if run > best_len:
                    best_len = run
                    ends = [(i, j)]
                elif run == best_len:
                    ends.append((i, j))
        prev = cur

    if best_len == 0:
        memo[key] = 0
        return 0

    best = 0
    for ei, ej in ends:
        si, sj = ei - best_len + 1, ej - best_len + 1
        total = (best_len
                 + _best_match(a, b, alo, si, blo, sj, memo)
                 + _best_match(a, b, ei + 1, ahi, ej + 1, bhi, memo))
        if total > best:
            best = total
    memo[key] = best
    return best


# ---------------------------------------------------------------------------
# paired t-test (two-tailed)
# ---------------------------------------------------------------------------


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    mean_diff: float
    zero_variance: bool = False

    def as_dict(self) -> dict:
        return {"t": self.t, "p": self.p, "df": self.df,
                "mean_diff": self.mean_diff, "zero_variance": self.zero_variance}


def paired_ttest(scores_a, scores_b) -> TTestResult:
    """Two-tailed paired t-test on matched score lists.

    Identical lists give p = 1. A constant nonzero difference has no sample
    variance, so the statistic degenerates; that case is flagged and reported
    as p = 0.
    """
    a = np.asarray(list(scores_a), dtype=np.float64)
    b = np.asarray(list(scores_b), dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise DataError(f"need two equal-length lists of >= 2 scores, got {a.shape} and {b.shape}")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    df = a.size - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, df=df, mean_diff=0.0, zero_variance=True)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, df=df,
                           mean_diff=mean, zero_variance=True)
    t = mean / (sd / math.sqrt(a.size))
    # two-tailed tail mass of Student's t: I_x(df/2, 1/2) with x = df/(df+t^2)
    p = _betainc_reg(df / 2.0, 0.5, df / (df + t * t))
    return TTestResult(t=float(t), p=float(min(max(p, 0.0), 1.0)), df=df, mean_diff=mean)


def _betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) by Lentz continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 3e-14) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise DataError("incomplete beta continued fraction did not converge")


# ---------------------------------------------------------------------------
# corpus-level rationale aggregation
# ---------------------------------------------------------------------------


@dataclass
class RationaleScores:
    jaccard: float
    hamming: float
    ros: float
    count: int

    def as_dict(self) -> dict:
        return {"jaccard": self.jaccard, "hamming": self.hamming,
                "ros": self.ros, "count": self.count}


def rationale_scores(pairs) -> RationaleScores:
    """Mean overlap scores (as percentages) over (pred_mask, gold_mask, tokens) triples."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("rationale_scores needs at least one pair")
    js, hd, rs = 0.0, 0.0, 0.0
    for pred, gold, tokens in pairs:
        js += jaccard(pred, gold)
        hd += hamming_similarity(pred, gold)
        pred_tokens = [t for t, v in zip(tokens, pred) if v]
        gold_tokens = [t for t, v in zip(tokens, gold) if v]
        rs += ros(pred_tokens, gold_tokens)
    n = len(pairs)
    return RationaleScores(jaccard=100.0 * js / n, hamming=100.0 * hd / n,
                           ros=100.0 * rs / n, count=n)
