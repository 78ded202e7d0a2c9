"""Hierarchical sequence encoders over pre-embedded token matrices.

The full encoder runs two stages. Stage one works on tokens: a bidirectional
GRU feeds self-attention, whose rows are averaged inside fixed-length
segments; in parallel a same-padded convolution is max-pooled per segment.
The two segment views are summed and stage two repeats the same machinery on
segments, producing a single sentence vector.

Padding is handled so that padded positions can never influence any output:
the recurrence skips masked steps, attention masks its score columns,
convolution sees zeroed pad rows, and the pooling ops average or maximize
over live rows only.

Lighter variants reuse the same pieces: single-stage recurrent or
convolutional encoders and a convolution-into-GRU pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import (
    Tensor,
    concat_cols,
    concat_rows,
    conv1d,
    matmul,
    relu,
    segment_max_rows,
    sigmoid,
    slice_cols,
    slice_rows,
    softmax_rows,
    tanh,
)

VARIANTS = ("mexcb", "mexcb_cnn", "mexcb_gru", "birnn", "birnn_attn", "cnn_gru")
MASK_OFF = -1e9


@dataclass
class EncoderConfig:
    embed_dim: int
    hidden_dim: int = 128
    attention_dim: int = 200
    filters: int = 200
    window: int = 3
    segment_len: int = 8
    max_len: int = 64
    variant: str = "mexcb"
    conv_stack_windows: tuple = (2, 3, 4)
    conv_stack_filters: int = 100

    def validate(self) -> None:
        for name in ("embed_dim", "hidden_dim", "attention_dim", "filters",
                     "window", "segment_len", "max_len", "conv_stack_filters"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {self.variant!r}")
        if self.max_len % self.segment_len != 0:
            raise ConfigError(
                f"segment_len {self.segment_len} must divide max_len {self.max_len}")
        if self.filters != self.attention_dim:
            raise ConfigError(
                "filters must equal attention_dim so the recurrent and "
                f"convolutional segment views can be summed, got {self.filters} "
                f"vs {self.attention_dim}")

    @property
    def num_segments(self) -> int:
        return self.max_len // self.segment_len

    @property
    def sentence_width(self) -> int:
        """Width of the final sentence vector, which depends on the variant."""
        return {
            "mexcb": self.attention_dim + self.filters,
            "mexcb_gru": self.attention_dim,
            "mexcb_cnn": self.filters,
            "birnn": 2 * self.hidden_dim,
            "birnn_attn": self.attention_dim,
            "cnn_gru": self.hidden_dim,
        }[self.variant]

    @property
    def rationale_width(self) -> int:
        """Width of the representation the rationale scorer reads."""
        return {
            "mexcb": self.attention_dim,
            "mexcb_gru": self.attention_dim,
            "mexcb_cnn": self.filters,
            "birnn": 2 * self.hidden_dim,
            "birnn_attn": self.attention_dim,
            "cnn_gru": self.hidden_dim,
        }[self.variant]


@dataclass
class EncodedViews:
    """Every intermediate the encoder exposes; entries are None when a variant skips them."""
    word_hidden: Tensor | None = None        # (N, 2*hidden) recurrent states
    word_attended: Tensor | None = None      # (N, attention_dim)
    segment_recurrent: Tensor | None = None  # (P, attention_dim) averaged attention
    segment_conv: Tensor | None = None       # (P, filters) pooled convolution
    segment_embedding: Tensor | None = None  # (P, attention_dim) stage-two input
    sentence_recurrent: Tensor | None = None  # (1, attention_dim)
    sentence_conv: Tensor | None = None      # (1, filters)
    sentence_vector: Tensor | None = None    # (1, sentence_width)
    rationale_features: Tensor | None = None
    mask: np.ndarray | None = None
    segment_mask: np.ndarray | None = None


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------


def glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _add_gru_direction(params, rng, prefix: str, in_dim: int, hidden: int) -> None:
    for gate in ("update", "reset", "cand"):
        params[f"{prefix}.{gate}_in"] = Tensor(
            glorot(rng, in_dim, hidden, (in_dim, hidden)), requires_grad=True)
        params[f"{prefix}.{gate}_rec"] = Tensor(
            glorot(rng, hidden, hidden, (hidden, hidden)), requires_grad=True)
        params[f"{prefix}.{gate}_bias"] = Tensor(np.zeros((1, hidden)), requires_grad=True)


def _add_bigru(params, rng, prefix: str, in_dim: int, hidden: int) -> None:
    _add_gru_direction(params, rng, f"{prefix}.fwd", in_dim, hidden)
    _add_gru_direction(params, rng, f"{prefix}.bwd", in_dim, hidden)


def _add_attention(params, rng, prefix: str, in_dim: int, out_dim: int) -> None:
    for name in ("query", "key", "value"):
        params[f"{prefix}.{name}_w"] = Tensor(
            glorot(rng, in_dim, out_dim, (in_dim, out_dim)), requires_grad=True)
        params[f"{prefix}.{name}_b"] = Tensor(np.zeros((1, out_dim)), requires_grad=True)


def _add_conv(params, rng, prefix: str, in_dim: int, n_filters: int, window: int) -> None:
    fan_in = window * in_dim
    params[f"{prefix}.filters"] = Tensor(
        glorot(rng, fan_in, n_filters, (n_filters, window, in_dim)), requires_grad=True)
    params[f"{prefix}.bias"] = Tensor(np.zeros((1, n_filters)), requires_grad=True)


def init_encoder_params(config: EncoderConfig, rng) -> dict:
    """Create only the parameters the configured variant actually uses."""
    config.validate()
    params: dict = {}
    d, h, a, f = config.embed_dim, config.hidden_dim, config.attention_dim, config.filters
    variant = config.variant

    if variant in ("mexcb", "mexcb_gru", "birnn", "birnn_attn"):
        _add_bigru(params, rng, "word_gru", d, h)
    if variant in ("mexcb", "mexcb_gru", "birnn_attn"):
        _add_attention(params, rng, "word_attn", 2 * h, a)
    if variant in ("mexcb", "mexcb_cnn"):
        _add_conv(params, rng, "word_conv", d, f, config.window)
    if variant in ("mexcb", "mexcb_gru"):
        _add_bigru(params, rng, "segment_gru", a, h)
        _add_attention(params, rng, "segment_attn", 2 * h, a)
    if variant == "mexcb":
        _add_conv(params, rng, "segment_conv", a, f, config.window)
    if variant == "mexcb_cnn":
        _add_conv(params, rng, "segment_conv", f, f, config.window)
    if variant == "cnn_gru":
        for w in config.conv_stack_windows:
            _add_conv(params, rng, f"stack_conv{w}", d, config.conv_stack_filters, w)
        _add_gru_direction(params, rng, "stack_gru.fwd",
                           config.conv_stack_filters * len(config.conv_stack_windows), h)
    return params


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _gru_direction(embedded: Tensor, mask, params, prefix: str, reverse: bool) -> Tensor:
    """Run one GRU direction over the rows of `embedded`, honoring the mask.

    Masked steps are skipped outright: the state carries through unchanged,
    so pad rows can never leak into downstream states.
    """
    t_len = embedded.data.shape[0]
    hidden = params[f"{prefix}.update_rec"].data.shape[0]

    # project the whole sequence once per gate, then slice per step
    proj = {}
    for gate in ("update", "reset", "cand"):
        proj[gate] = matmul(embedded, params[f"{prefix}.{gate}_in"]) + params[f"{prefix}.{gate}_bias"]
    u_update = params[f"{prefix}.update_rec"]
    u_reset = params[f"{prefix}.reset_rec"]
    u_cand = params[f"{prefix}.cand_rec"]

    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    state = Tensor(np.zeros((1, hidden)))
    rows = [None] * t_len
    for t in order:
        if mask[t] > 0:
            z = sigmoid(slice_rows(proj["update"], t, t + 1) + matmul(state, u_update))
            r = sigmoid(slice_rows(proj["reset"], t, t + 1) + matmul(state, u_reset))
            cand = tanh(slice_rows(proj["cand"], t, t + 1) + matmul(r * state, u_cand))
            state = state + z * (cand - state)
        rows[t] = state
    return concat_rows(rows)


def bigru_encode(embedded: Tensor, mask, params, prefix: str = "word_gru") -> Tensor:
    """Bidirectional GRU: forward and backward states concatenated per row."""
    if embedded.data.ndim != 2 or embedded.data.shape[0] == 0:
        raise DataError("bigru_encode needs a nonempty (T, d) input")
    mask = np.asarray(mask, dtype=np.float64).reshape(embedded.data.shape[0])
    fwd = _gru_direction(embedded, mask, params, f"{prefix}.fwd", reverse=False)
    bwd = _gru_direction(embedded, mask, params, f"{prefix}.bwd", reverse=True)
    return concat_cols([fwd, bwd])


def self_attention(hidden: Tensor, mask, params, prefix: str = "word_attn") -> Tensor:
    """Scaled-free dot-product self-attention with masked score columns.

    Scores are plain Q K^T (no sqrt(d) scaling). Masked key columns get a
    -1e9 additive penalty, which underflows to exactly zero weight after the
    softmax in float64.
    """
    t_len = hidden.data.shape[0]
    mask = np.asarray(mask, dtype=np.float64).reshape(t_len)
    if mask.sum() == 0:
        raise DataError("self_attention needs at least one unmasked position")
    q = matmul(hidden, params[f"{prefix}.query_w"]) + params[f"{prefix}.query_b"]
    k = matmul(hidden, params[f"{prefix}.key_w"]) + params[f"{prefix}.key_b"]
    v = matmul(hidden, params[f"{prefix}.value_w"]) + params[f"{prefix}.value_b"]
    scores = matmul(q, _transpose_static(k))
    penalty = Tensor((1.0 - mask)[None, :] * MASK_OFF)
    weights = softmax_rows(scores + penalty)
    return matmul(weights, v)


def _transpose_static(x: Tensor) -> Tensor:
    """Transpose as a first-class graph op."""
    def backward(g):
        x._accumulate(g.T)

    return Tensor._result(x.data.T.copy(), "transpose", (x,), backward)


def subsentence_average(rows: Tensor, seg_len: int, mask=None) -> Tensor:
    """Mean over consecutive row blocks, counting only live rows.

    Implemented as one constant matmul: a (P, T) averaging matrix with
    1/live_count entries. Fully masked blocks produce zero rows.
    """
    t_len = rows.data.shape[0]
    if seg_len < 1 or t_len % seg_len != 0:
        raise ConfigError(f"segment length {seg_len} does not divide {t_len} rows")
    if mask is None:
        mask = np.ones(t_len)
    mask = np.asarray(mask, dtype=np.float64).reshape(t_len)
    n_seg = t_len // seg_len
    weights = np.zeros((n_seg, t_len))
    for s in range(n_seg):
        block = mask[s * seg_len:(s + 1) * seg_len]
        live = block.sum()
        if live > 0:
            weights[s, s * seg_len:(s + 1) * seg_len] = block / live
    return matmul(Tensor(weights), rows)


def segment_cnn(embedded: Tensor, mask, params, prefix: str, seg_len: int) -> Tensor:
    """Same-padded convolution, ReLU, then per-segment max over live rows."""
    t_len = embedded.data.shape[0]
    if mask is None:
        mask = np.ones(t_len)
    mask = np.asarray(mask, dtype=np.float64).reshape(t_len)
    guarded = embedded * Tensor(mask[:, None])
    conv = conv1d(guarded, params[f"{prefix}.filters"], params[f"{prefix}.bias"])
    return segment_max_rows(relu(conv), seg_len, mask)


def segment_level_mask(mask: np.ndarray, seg_len: int) -> np.ndarray:
    """1 for segments containing at least one live token, else 0."""
    mask = np.asarray(mask, dtype=np.float64)
    return (mask.reshape(-1, seg_len).sum(axis=1) > 0).astype(np.float64)


# ---------------------------------------------------------------------------
# full encoders
# ---------------------------------------------------------------------------


def encode(embedded: Tensor, mask, config: EncoderConfig, params) -> EncodedViews:
    """Run the configured encoder over one embedded example."""
    if not isinstance(embedded, Tensor):
        embedded = Tensor(embedded)
    if embedded.data.shape != (config.max_len, config.embed_dim):
        raise ShapeError(
            f"expected ({config.max_len}, {config.embed_dim}) input, "
            f"got {embedded.data.shape}")
    mask = np.asarray(mask, dtype=np.float64).reshape(config.max_len)
    if mask.sum() == 0:
        raise DataError("cannot encode a fully masked sequence")

    views = EncodedViews(mask=mask)
    variant = config.variant
    seg_len = config.segment_len
    n_seg = config.num_segments

    if variant in ("mexcb", "mexcb_gru", "birnn", "birnn_attn"):
        views.word_hidden = bigru_encode(embedded, mask, params, "word_gru")
    if variant in ("mexcb", "mexcb_gru", "birnn_attn"):
        views.word_attended = self_attention(views.word_hidden, mask, params, "word_attn")

    if variant in ("mexcb", "mexcb_gru", "mexcb_cnn"):
        seg_mask = segment_level_mask(mask, seg_len)
        views.segment_mask = seg_mask
        if variant in ("mexcb", "mexcb_gru"):
            views.segment_recurrent = subsentence_average(views.word_attended, seg_len, mask)
        if variant in ("mexcb", "mexcb_cnn"):
            views.segment_conv = segment_cnn(embedded, mask, params, "word_conv", seg_len)

        if variant == "mexcb":
            views.segment_embedding = views.segment_recurrent + views.segment_conv
        elif variant == "mexcb_gru":
            views.segment_embedding = views.segment_recurrent
        else:
            views.segment_embedding = views.segment_conv

        if variant in ("mexcb", "mexcb_gru"):
            seg_hidden = bigru_encode(views.segment_embedding, seg_mask, params, "segment_gru")
            seg_attended = self_attention(seg_hidden, seg_mask, params, "segment_attn")
            views.sentence_recurrent = subsentence_average(seg_attended, n_seg, seg_mask)
        if variant in ("mexcb", "mexcb_cnn"):
            views.sentence_conv = segment_cnn(
                views.segment_embedding, seg_mask, params, "segment_conv", n_seg)

        if variant == "mexcb":
            views.sentence_vector = concat_cols([views.sentence_recurrent, views.sentence_conv])
            views.rationale_features = views.sentence_recurrent
        elif variant == "mexcb_gru":
            views.sentence_vector = views.sentence_recurrent
            views.rationale_features = views.sentence_recurrent
        else:
            views.sentence_vector = views.sentence_conv
            views.rationale_features = views.sentence_conv
        return views

    if variant == "birnn":
        h = config.hidden_dim
        last_fwd = slice_cols(slice_rows(views.word_hidden, config.max_len - 1, config.max_len), 0, h)
        first_bwd = slice_cols(slice_rows(views.word_hidden, 0, 1), h, 2 * h)
        views.sentence_vector = concat_cols([last_fwd, first_bwd])
        views.rationale_features = views.sentence_vector
        return views

    if variant == "birnn_attn":
        views.sentence_vector = subsentence_average(views.word_attended, config.max_len, mask)
        views.rationale_features = views.sentence_vector
        return views

    # conv stack with several window widths feeding a forward GRU, max-pooled
    guarded = embedded * Tensor(mask[:, None])
    branches = []
    for w in config.conv_stack_windows:
        conv = conv1d(guarded, params[f"stack_conv{w}.filters"], params[f"stack_conv{w}.bias"])
        branches.append(relu(conv))
    stacked = concat_cols(branches)
    hidden = _gru_direction(stacked, mask, params, "stack_gru.fwd", reverse=False)
    views.word_hidden = hidden
    views.sentence_vector = segment_max_rows(hidden, config.max_len, mask)
    views.rationale_features = views.sentence_vector
    return views
