"""Vector tables, sequence embedding, contextual stores, and alignment."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtxplain.embeddings import (
    AlignmentResult,
    ContextualSource,
    EmbeddingTable,
    StaticSource,
    embed_sequence,
    load_contextual,
    load_dictionary,
    load_embeddings,
    procrustes_align,
    write_embeddings,
)
from mtxplain.data import Example
from mtxplain.errors import ConfigError, DataError, DictionaryError, FormatError, ShapeError


def write_vec_file(path, rows, header=None):
    lines = []
    if header is None:
        dim = len(rows[0]) - 1 if rows else 0
        header = f"{len(rows)} {dim}"
    lines.append(header)
    for row in rows:
        lines.append(" ".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoader:
    def test_basic_load(self, tmp_path):
        p = tmp_path / "v.vec"
        write_vec_file(p, [["cat", 1.0, 2.0], ["dog", 3.0, 4.0]])
        table = load_embeddings(p)
        assert len(table) == 2 and table.dim == 2
        np.testing.assert_array_equal(table.lookup("dog"), [3.0, 4.0])
        assert table.skipped_lines == 0

    def test_limit_keeps_file_order(self, tmp_path):
        p = tmp_path / "v.vec"
        write_vec_file(p, [["first", 1.0], ["second", 2.0]])
        table = load_embeddings(p, limit=1)
        assert len(table) == 1 and "first" in table and "second" not in table

    def test_dimension_inconsistent_lines_skipped_and_counted(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("3 2\ncat 1.0 2.0\nshort 1.0\ndog 3.0 4.0\n", encoding="utf-8")
        table = load_embeddings(p)
        assert len(table) == 2
        assert table.skipped_lines == 1

    def test_mostly_bad_file_rejected(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("3 2\ncat 1.0 2.0\nbad 1.0\nworse 2.0\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_embeddings(p)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("hello\ncat 1.0\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_embeddings(p)

    def test_nonnumeric_values_skipped(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("2 2\ncat 1.0 2.0\ndog x y\n", encoding="utf-8")
        table = load_embeddings(p)
        assert table.skipped_lines == 1 and len(table) == 1

    def test_duplicate_token_keeps_first(self, tmp_path):
        p = tmp_path / "v.vec"
        write_vec_file(p, [["cat", 1.0], ["cat", 9.0]])
        table = load_embeddings(p)
        assert table.lookup("cat")[0] == 1.0
        assert table.skipped_lines == 1

    def test_missing_file(self):
        with pytest.raises(FormatError):
            load_embeddings("/nonexistent/path.vec")

    def test_round_trip_write(self, tmp_path):
        table = EmbeddingTable(["a", "b"], [[0.125, -2.5], [3.0, 4.0]])
        out = tmp_path / "out.vec"
        write_embeddings(table, out)
        again = load_embeddings(out)
        np.testing.assert_allclose(again.matrix, table.matrix, atol=1e-7)
        assert again.index == table.index


class TestOov:
    def test_zeros_policy(self):
        table = EmbeddingTable(["a"], [[1.0, 2.0]], oov_policy="zeros")
        np.testing.assert_array_equal(table.lookup("zzz"), [0.0, 0.0])

    def test_random_policy_is_deterministic_per_token(self):
        table = EmbeddingTable(["a"], [[1.0, 2.0]], oov_policy="random", oov_seed=7)
        v1 = table.lookup("zzz")
        v2 = table.lookup("zzz")
        other = table.lookup("yyy")
        np.testing.assert_array_equal(v1, v2)
        assert not np.array_equal(v1, other)
        assert v1.any()

    def test_random_policy_depends_on_seed(self):
        t1 = EmbeddingTable(["a"], [[1.0, 2.0]], oov_policy="random", oov_seed=1)
        t2 = EmbeddingTable(["a"], [[1.0, 2.0]], oov_policy="random", oov_seed=2)
        assert not np.array_equal(t1.lookup("zzz"), t2.lookup("zzz"))

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            EmbeddingTable(["a"], [[1.0]], oov_policy="ones")


class TestEmbedSequence:
    def test_pad_and_truncate(self):
        table = EmbeddingTable(["a", "b"], [[1.0], [2.0]], oov_policy="zeros")
        out, mask = embed_sequence(table, ["a", "b", "a"], 5)
        assert out.shape == (5, 1)
        assert mask.tolist() == [1, 1, 1, 0, 0]
        assert out[3:].sum() == 0
        out2, mask2 = embed_sequence(table, ["a", "b", "a"], 2)
        assert mask2.tolist() == [1, 1]
        assert out2.ravel().tolist() == [1.0, 2.0]

    def test_empty_tokens_all_pad(self):
        table = EmbeddingTable(["a"], [[1.0]], oov_policy="zeros")
        out, mask = embed_sequence(table, [], 4)
        assert mask.sum() == 0 and out.sum() == 0

    def test_bad_max_len(self):
        table = EmbeddingTable(["a"], [[1.0]])
        with pytest.raises(ConfigError):
            embed_sequence(table, ["a"], 0)

    @given(st.lists(st.sampled_from(["a", "b", "zzz"]), max_size=12),
           st.integers(1, 8))
    @settings(max_examples=50, deadline=None)
    def test_mask_counts_real_tokens(self, tokens, max_len):
        table = EmbeddingTable(["a", "b"], [[1.0], [2.0]], oov_policy="zeros")
        _, mask = embed_sequence(table, tokens, max_len)
        assert mask.sum() == min(len(tokens), max_len)
        # mask is a prefix of ones
        assert all(mask[i] >= mask[i + 1] for i in range(max_len - 1))


class TestContextual:
    def test_load_and_source(self, tmp_path):
        p = tmp_path / "ctx.jsonl"
        p.write_text(
            '{"id": "e1", "vectors": [[1.0, 0.0], [0.0, 1.0]]}\n'
            '{"id": "e2", "vectors": [[2.0, 2.0]]}\n', encoding="utf-8")
        store = load_contextual(p)
        assert store.dim == 2
        source = ContextualSource(store)
        ex = Example(id="e1", text="a b", tokens=["a", "b"], bully="non-bully",
                     sentiment="positive", target="NA", rationale=[0, 0])
        out, mask = source.sequence(ex, 4)
        assert mask.tolist() == [1, 1, 0, 0]
        np.testing.assert_array_equal(out[:2], [[1.0, 0.0], [0.0, 1.0]])

    def test_missing_id(self, tmp_path):
        p = tmp_path / "ctx.jsonl"
        p.write_text('{"id": "e1", "vectors": [[1.0]]}\n', encoding="utf-8")
        source = ContextualSource(load_contextual(p))
        ex = Example(id="other", text="a", tokens=["a"], bully="non-bully",
                     sentiment="positive", target="NA", rationale=[0])
        with pytest.raises(DataError):
            source.sequence(ex, 4)

    def test_token_count_mismatch(self, tmp_path):
        p = tmp_path / "ctx.jsonl"
        p.write_text('{"id": "e1", "vectors": [[1.0], [2.0]]}\n', encoding="utf-8")
        source = ContextualSource(load_contextual(p))
        ex = Example(id="e1", text="a", tokens=["a"], bully="non-bully",
                     sentiment="positive", target="NA", rationale=[0])
        with pytest.raises(DataError):
            source.sequence(ex, 4)

    def test_inconsistent_width_rejected(self, tmp_path):
        p = tmp_path / "ctx.jsonl"
        p.write_text('{"id": "a", "vectors": [[1.0, 2.0]]}\n'
                     '{"id": "b", "vectors": [[1.0]]}\n', encoding="utf-8")
        with pytest.raises(FormatError):
            load_contextual(p)

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "ctx.jsonl"
        p.write_text('{"id": "a", "vectors": [[1.0]]}\n'
                     '{"id": "a", "vectors": [[2.0]]}\n', encoding="utf-8")
        with pytest.raises(FormatError):
            load_contextual(p)


def random_rotation(dim, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


class TestAlignment:
    def test_identity_recovery(self):
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(30)]
        mat = rng.standard_normal((30, 6))
        src = EmbeddingTable(words, mat)
        tgt = EmbeddingTable(words, mat.copy())
        result = procrustes_align(src, tgt, [(w, w) for w in words])
        np.testing.assert_allclose(result.rotation, np.eye(6), atol=1e-8)

    def test_recovers_planted_rotation(self):
        rng = np.random.default_rng(1)
        dim, n = 8, 40
        words = [f"w{i}" for i in range(n)]
        x = rng.standard_normal((n, dim))
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        x -= x.mean(axis=0)
        rot = random_rotation(dim, 2)
        src = EmbeddingTable(words, x)
        tgt = EmbeddingTable(words, x @ rot)
        result = procrustes_align(src, tgt, [(w, w) for w in words])
        assert np.linalg.norm(result.rotation - rot) < 1e-6
        # mapped table is the raw matrix under the learned rotation
        np.testing.assert_allclose(result.mapped.matrix, x @ result.rotation, atol=1e-10)

    def test_rotation_is_orthogonal(self):
        rng = np.random.default_rng(3)
        words = [f"w{i}" for i in range(12)]
        src = EmbeddingTable(words, rng.standard_normal((12, 5)))
        tgt = EmbeddingTable(words, rng.standard_normal((12, 5)))
        result = procrustes_align(src, tgt, [(w, w) for w in words])
        r = result.rotation
        np.testing.assert_allclose(r.T @ r, np.eye(5), atol=1e-8)

    def test_objective_never_worse(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            words = [f"w{i}" for i in range(15)]
            src = EmbeddingTable(words, rng.standard_normal((15, 4)))
            tgt = EmbeddingTable(words, rng.standard_normal((15, 4)))
            result = procrustes_align(src, tgt, [(w, w) for w in words])
            assert result.objective_after <= result.objective_before + 1e-12

    def test_unresolvable_pairs_dropped(self):
        src = EmbeddingTable(["a", "b", "c"], np.eye(3))
        tgt = EmbeddingTable(["x", "y"], np.eye(3)[:2])
        result = procrustes_align(src, tgt, [("a", "x"), ("b", "y"), ("c", "zzz")])
        assert result.pairs_used == 2 and result.pairs_total == 3
        assert result.dropped == [("c", "zzz")]

    def test_too_few_pairs(self):
        src = EmbeddingTable(["a", "b"], np.eye(2))
        tgt = EmbeddingTable(["x"], [[1.0, 0.0]])
        with pytest.raises(DictionaryError):
            procrustes_align(src, tgt, [("a", "x"), ("b", "missing")])

    def test_dim_mismatch(self):
        src = EmbeddingTable(["a", "b"], np.eye(2))
        tgt = EmbeddingTable(["a", "b"], np.ones((2, 3)))
        with pytest.raises(ShapeError):
            procrustes_align(src, tgt, [("a", "a"), ("b", "b")])

    def test_few_pairs_rank_deficient_still_orthogonal(self):
        # two pairs in a 6-dim space: the cross-covariance has rank <= 2
        rng = np.random.default_rng(4)
        words = ["a", "b"]
        src = EmbeddingTable(words, rng.standard_normal((2, 6)))
        tgt = EmbeddingTable(words, rng.standard_normal((2, 6)))
        result = procrustes_align(src, tgt, [("a", "a"), ("b", "b")])
        np.testing.assert_allclose(result.rotation.T @ result.rotation,
                                   np.eye(6), atol=1e-8)

    def test_dictionary_loader(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("hund dog\n\nkatze cat\n", encoding="utf-8")
        assert load_dictionary(p) == [("hund", "dog"), ("katze", "cat")]
        p2 = tmp_path / "bad.txt"
        p2.write_text("one two three\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_dictionary(p2)

    def test_result_type(self):
        rng = np.random.default_rng(5)
        words = [f"w{i}" for i in range(8)]
        src = EmbeddingTable(words, rng.standard_normal((8, 3)))
        tgt = EmbeddingTable(words, rng.standard_normal((8, 3)))
        result = procrustes_align(src, tgt, [(w, w) for w in words])
        assert isinstance(result, AlignmentResult)
        assert isinstance(result.mapped, EmbeddingTable)


class TestStaticSource:
    def test_sequence_matches_embed_sequence(self):
        table = EmbeddingTable(["a", "b"], [[1.0], [2.0]], oov_policy="zeros")
        source = StaticSource(table)
        ex = Example(id="1", text="b a", tokens=["b", "a"], bully="non-bully",
                     sentiment="neutral", target="NA", rationale=[0, 0])
        out, mask = source.sequence(ex, 3)
        np.testing.assert_array_equal(out.ravel(), [2.0, 1.0, 0.0])
        assert mask.tolist() == [1, 1, 0]
        assert source.kind == "static" and source.dim == 1
