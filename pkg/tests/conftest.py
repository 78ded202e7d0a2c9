"""Shared fixtures: a small separable corpus and tiny model configurations."""

import json

import numpy as np
import pytest

from mtxplain.data import Example
from mtxplain.embeddings import EmbeddingTable, StaticSource
from mtxplain.heads import TaskSet
from mtxplain.model import ModelConfig

NEG_WORDS = ["idiot", "trash", "loser", "creep"]
POS_WORDS = ["friend", "kind", "great", "sweet"]
FILL_WORDS = ["you", "are", "a", "so", "the", "very", "such", "really"]
TOY_VOCAB = NEG_WORDS + POS_WORDS + FILL_WORDS


def build_toy_examples(n: int, seed: int = 5):
    """Alternating bully/non-bully posts whose class is carried by one word."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        bully = i % 2 == 1
        length = int(rng.integers(3, 7))
        tokens = list(rng.choice(FILL_WORDS, size=length))
        spot = int(rng.integers(0, length))
        tokens[spot] = str(rng.choice(NEG_WORDS if bully else POS_WORDS))
        out.append(Example(
            id=f"p{i}",
            text=" ".join(tokens),
            tokens=tokens,
            bully="bully" if bully else "non-bully",
            sentiment="negative" if bully else "positive",
            target="miscellaneous" if bully else "NA",
            rationale=[1 if t in NEG_WORDS else 0 for t in tokens],
        ))
    return out


def toy_table(dim: int = 12, seed: int = 99) -> EmbeddingTable:
    vecs = np.random.default_rng(seed).standard_normal((len(TOY_VOCAB), dim))
    return EmbeddingTable(TOY_VOCAB, vecs, oov_policy="zeros")


def tiny_model_config(variant: str = "mexcb", *, rationale=True, sentiment=False,
                      target=False, seed: int = 11, embed_dim: int = 12) -> ModelConfig:
    return ModelConfig(
        embed_dim=embed_dim, hidden_dim=8, attention_dim=10, filters=10,
        window=3, segment_len=4, max_len=8, head_width=16, variant=variant,
        tasks=TaskSet(rationale=rationale, sentiment=sentiment, target=target),
        seed=seed)


@pytest.fixture
def toy_examples():
    return build_toy_examples(16)


@pytest.fixture
def toy_source():
    return StaticSource(toy_table())


def write_toy_files(tmp_path, n: int = 16, dim: int = 12, data_seed: int = 5,
                    vec_seed: int = 99):
    """Write the toy corpus and matching vectors; returns (data_path, vec_path)."""
    examples = build_toy_examples(n, seed=data_seed)
    data_path = tmp_path / "toy.jsonl"
    with open(data_path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record()) + "\n")
    table = toy_table(dim=dim, seed=vec_seed)
    vec_path = tmp_path / "toy.vec"
    with open(vec_path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(TOY_VOCAB)} {dim}\n")
        for word in TOY_VOCAB:
            row = table.matrix[table.index[word]]
            fh.write(word + " " + " ".join(f"{v:.6f}" for v in row) + "\n")
    return data_path, vec_path


def write_tiny_config(tmp_path, **overrides):
    cfg = {"hidden_dim": 8, "attention_dim": 10, "filters": 10, "window": 3,
           "segment_len": 4, "max_len": 8, "head_width": 16,
           "epochs": 30, "batch_size": 8, "learning_rate": 0.01,
           "weight_decay": 0.0, "dropout": 0.0}
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


_ACCEPTANCE_TITLES = {
    "01": "gradient suite (per-op and full model)",
    "02": "shape audit at full dimensions",
    "03": "loss weight arithmetic",
    "04": "overlap metrics vs brute force",
    "05": "Fleiss kappa agreement",
    "06": "orthogonal map recovery",
    "07": "overfit sanity",
    "08": "bitwise determinism",
    "09": "stratified fold balance",
    "10": "padding invariance",
    "11": "released dataset audit",
    "12": "runtime budget",
}


def pytest_terminal_summary(terminalreporter):
    """One visible line per acceptance check at the end of the run."""
    lines = {}
    for outcome, label in (("passed", "PASS"), ("failed", "FAIL"),
                           ("skipped", "SKIP"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(outcome, ()):
            nodeid = getattr(report, "nodeid", "")
            marker = "test_acceptance.py::test_criterion_"
            if marker not in nodeid:
                continue
            number = nodeid.split(marker)[1][:2]
            title = _ACCEPTANCE_TITLES.get(number, "")
            lines[number] = f"ACCEPTANCE {number} {label}: {title}"
    if lines:
        terminalreporter.write_line("")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
