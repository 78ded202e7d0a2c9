"""Word vector tables, sequence embedding, and cross-lingual alignment.

Two vector sources are supported: a static text table in the usual
"count dim" header format, and a JSONL store of precomputed per-token
contextual vectors keyed by example id. Both expose sequence(), which turns
an example into a fixed-size (max_len, dim) matrix plus a binary mask.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DictionaryError, FormatError, ShapeError
from .tensor import svd_small

OOV_POLICIES = ("zeros", "random")


class EmbeddingTable:
    """Token -> row lookup over a dense (vocab, dim) float64 matrix."""

    def __init__(self, tokens, matrix, oov_policy: str = "random", oov_seed: int = 0):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError("embedding matrix must be 2-d")
        if len(tokens) != matrix.shape[0]:
            raise ShapeError(
                f"{len(tokens)} tokens for {matrix.shape[0]} rows")
        if oov_policy not in OOV_POLICIES:
            raise ConfigError(f"unknown oov policy: {oov_policy!r}")
        self.index = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise DataError(f"duplicate token in table: {tok!r}")
            self.index[tok] = i
        self.matrix = matrix
        self.dim = matrix.shape[1]
        self.oov_policy = oov_policy
        self.oov_seed = oov_seed
        self.skipped_lines = 0

    def __len__(self):
        return self.matrix.shape[0]

    def __contains__(self, token):
        return token in self.index

    def lookup(self, token: str) -> np.ndarray:
        row = self.index.get(token)
        if row is not None:
            return self.matrix[row]
        if self.oov_policy == "zeros":
            return np.zeros(self.dim)
        # Deterministic per-token draw: the same unknown word always maps to
        # the same vector, independent of lookup order.
        rng = np.random.default_rng([self.oov_seed, zlib.crc32(token.encode("utf-8"))])
        return rng.standard_normal(self.dim) * 0.1


def load_embeddings(path, limit: int | None = None, oov_policy: str = "random",
                    oov_seed: int = 0) -> EmbeddingTable:
    """Read a whitespace text vector file ("count dim" header, one word per line).

    Lines whose value count disagrees with the header dimension are skipped
    and counted on table.skipped_lines; more than half skipped is treated as
    a wrong-format file. Duplicate words keep their first occurrence.
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot open embeddings file: {exc}") from exc
    with fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be 'count dim'")
        try:
            declared, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError(f"{path}: header must be two integers") from exc
        if dim <= 0 or declared < 0:
            raise FormatError(f"{path}: nonsensical header {header}")

        tokens, rows = [], []
        seen = set()
        skipped = 0
        total = 0
        for line in fh:
            if not line.strip():
                continue
            total += 1
            parts = line.rstrip("\n").split(" ")
            word = parts[0]
            values = [p for p in parts[1:] if p]
            if len(values) != dim or word in seen:
                skipped += 1
                continue
            try:
                vec = [float(v) for v in values]
            except ValueError:
                skipped += 1
                continue
            seen.add(word)
            tokens.append(word)
            rows.append(vec)
            if limit is not None and len(tokens) >= limit:
                break

    if total == 0 or (limit is None and skipped * 2 > total):
        raise FormatError(
            f"{path}: {skipped} of {total} lines unusable, not a {dim}-wide vector file")
    table = EmbeddingTable(tokens, np.array(rows, dtype=np.float64).reshape(len(tokens), dim),
                           oov_policy=oov_policy, oov_seed=oov_seed)
    table.skipped_lines = skipped
    return table


def write_embeddings(table: EmbeddingTable, path) -> None:
    """Write a table back out in the same text format load_embeddings reads."""
    order = sorted(table.index.items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(order)} {table.dim}\n")
        for token, row in order:
            values = " ".join(format(v, ".8g") for v in table.matrix[row])
            fh.write(f"{token} {values}\n")


def embed_sequence(table: EmbeddingTable, tokens, max_len: int):
    """Embed tokens into an (max_len, dim) matrix plus a 0/1 mask.

    Sequences longer than max_len are truncated; shorter ones are padded
    with zero rows. An empty token list is legal and yields an all-zero mask.
    """
    if max_len <= 0:
        raise ConfigError(f"max_len must be positive, got {max_len}")
    out = np.zeros((max_len, table.dim))
    mask = np.zeros(max_len)
    for i, tok in enumerate(tokens[:max_len]):
        out[i] = table.lookup(tok)
        mask[i] = 1.0
    return out, mask


# ---------------------------------------------------------------------------
# embedding sources: one interface over static and contextual vectors
# ---------------------------------------------------------------------------


class StaticSource:
    """Embeds examples by word lookup in an EmbeddingTable."""

    kind = "static"

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.dim = table.dim

    def sequence(self, example, max_len: int):
        return embed_sequence(self.table, example.tokens, max_len)


class ContextualStore:
    """Per-example token vectors loaded from a JSONL file, keyed by id."""

    def __init__(self, vectors_by_id: dict, dim: int):
        self.vectors = vectors_by_id
        self.dim = dim

    def __contains__(self, example_id):
        return example_id in self.vectors

    def get(self, example_id: str) -> np.ndarray:
        if example_id not in self.vectors:
            raise DataError(f"no contextual vectors stored for id {example_id!r}")
        return self.vectors[example_id]


def load_contextual(path) -> ContextualStore:
    """Read {"id": ..., "vectors": [[...], ...]} records, one JSON per line."""
    store: dict = {}
    dim = None
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot open contextual vector file: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path} line {line_no}: bad JSON ({exc})") from exc
            if not isinstance(record, dict) or "id" not in record or "vectors" not in record:
                raise FormatError(f"{path} line {line_no}: need 'id' and 'vectors'")
            vecs = record["vectors"]
            if not isinstance(vecs, list) or not vecs:
                raise FormatError(f"{path} line {line_no}: 'vectors' must be a nonempty list")
            arr = np.asarray(vecs, dtype=np.float64)
            if arr.ndim != 2:
                raise FormatError(f"{path} line {line_no}: ragged vector rows")
            if dim is None:
                dim = arr.shape[1]
            elif arr.shape[1] != dim:
                raise FormatError(
                    f"{path} line {line_no}: width {arr.shape[1]} != {dim} seen earlier")
            key = str(record["id"])
            if key in store:
                raise FormatError(f"{path} line {line_no}: duplicate id {key!r}")
            store[key] = arr
    if dim is None:
        raise FormatError(f"{path}: no records")
    return ContextualStore(store, dim)


class ContextualSource:
    """Embeds examples from a ContextualStore by example id."""

    kind = "contextual"

    def __init__(self, store: ContextualStore):
        self.store = store
        self.dim = store.dim

    def sequence(self, example, max_len: int):
        vecs = self.store.get(example.id)
        if vecs.shape[0] != len(example.tokens):
            raise DataError(
                f"id {example.id!r}: {vecs.shape[0]} vectors for "
                f"{len(example.tokens)} tokens")
        n = min(vecs.shape[0], max_len)
        out = np.zeros((max_len, self.dim))
        out[:n] = vecs[:n]
        mask = np.zeros(max_len)
        mask[:n] = 1.0
        return out, mask


# ---------------------------------------------------------------------------
# orthogonal alignment between two tables
# ---------------------------------------------------------------------------


def load_dictionary(path):
    """Read word pairs, one 'src tgt' per line; blank lines are skipped."""
    pairs = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot open dictionary file: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError(f"{path} line {line_no}: expected 'src tgt'")
            pairs.append((parts[0], parts[1]))
    return pairs


@dataclass
class AlignmentResult:
    rotation: np.ndarray
    mapped: EmbeddingTable
    pairs_used: int
    pairs_total: int
    objective_before: float
    objective_after: float
    dropped: list = field(default_factory=list)


def _normalized_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def procrustes_align(src: EmbeddingTable, tgt: EmbeddingTable, pairs) -> AlignmentResult:
    """Fit an orthogonal map from src space to tgt space on dictionary pairs.

    Pair rows are unit-normalized and mean-centered before fitting, the usual
    preprocessing for this estimator. The rotation is U Vt from the SVD of
    X^T Y, which maximizes trace alignment among orthogonal maps. The mapped
    table applies the rotation to the raw source matrix.
    """
    if src.dim != tgt.dim:
        raise ShapeError(f"dimension mismatch: {src.dim} vs {tgt.dim}")
    kept, dropped = [], []
    for s_word, t_word in pairs:
        if s_word in src and t_word in tgt:
            kept.append((s_word, t_word))
        else:
            dropped.append((s_word, t_word))
    if len(kept) < 2:
        raise DictionaryError(
            f"only {len(kept)} of {len(pairs)} dictionary pairs resolve in both tables")

    x = np.stack([src.matrix[src.index[s]] for s, _ in kept])
    y = np.stack([tgt.matrix[tgt.index[t]] for _, t in kept])
    x = _normalized_rows(x)
    y = _normalized_rows(y)
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)

    u, _, vt = svd_small(x.T @ y)
    rotation = u @ vt

    before = float(((x - y) ** 2).sum())
    after = float(((x @ rotation - y) ** 2).sum())

    order = sorted(src.index.items(), key=lambda kv: kv[1])
    mapped = EmbeddingTable([w for w, _ in order], src.matrix @ rotation,
                            oov_policy=src.oov_policy, oov_seed=src.oov_seed)
    return AlignmentResult(rotation=rotation, mapped=mapped,
                           pairs_used=len(kept), pairs_total=len(pairs),
                           objective_before=before, objective_after=after,
                           dropped=dropped)
