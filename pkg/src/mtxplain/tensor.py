"""Reverse-mode autodiff on float64 numpy arrays.

A Tensor wraps an ndarray plus the bookkeeping needed to backpropagate:
the parents it was computed from, an op tag, and a closure that pushes an
incoming gradient to those parents. Calling backward() on a scalar output
walks the graph once in reverse topological order. The walk is iterative,
not recursive, because recurrent models create chains far deeper than the
interpreter's recursion limit.

Also hosts gradcheck (central finite differences) and svd_small, a
one-sided Jacobi SVD used by the embedding alignment code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, ConfigError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array node in a dynamically built computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self.parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _result(data, op, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.op = op
            out.parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(out_data, "add", (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = _wrap(other)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._result(out_data, "mul", (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._result(-self.data, "neg", (self,), backward)

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reductions / indexing ----------------------------------------------

    def sum(self):
        return sum_all(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    # -- backward pass -------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() starts from a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return

        # Iterative post-order so deep recurrent chains cannot blow the stack.
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor._result(out_data, "matmul", (a, b), backward)


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    keep = x.data > 0.0

    def backward(g):
        x._accumulate(g * keep)

    return Tensor._result(np.where(keep, x.data, 0.0), "relu", (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return Tensor._result(y, "tanh", (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    # Piecewise form avoids overflow warnings for large-magnitude logits.
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return Tensor._result(y, "sigmoid", (x,), backward)


def activation(x: Tensor, kind: str) -> Tensor:
    table = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}
    if kind not in table:
        raise ConfigError(f"unknown activation kind: {kind!r}")
    return table[kind](x)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, max-shifted for stability."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-d tensor")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        # d softmax: y * (g - sum(g * y)) per row
        inner = (g * y).sum(axis=1, keepdims=True)
        x._accumulate(y * (g - inner))

    return Tensor._result(y, "softmax", (x,), backward)


def log(x: Tensor) -> Tensor:
    x = _wrap(x)
    if np.any(x.data <= 0.0):
        raise NumericError("log expects strictly positive input")
    y = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return Tensor._result(y, "log", (x,), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was kept."""
    x = _wrap(x)
    if not lo < hi:
        raise ConfigError(f"clip bounds must satisfy lo < hi, got {lo} >= {hi}")
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        x._accumulate(g * inside)

    return Tensor._result(np.clip(x.data, lo, hi), "clip", (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    x = _wrap(x)

    def backward(g):
        x._accumulate(np.full(x.data.shape, float(g)))

    return Tensor._result(x.data.sum(), "sum", (x,), backward)


def pick(x: Tensor, row: int, col: int) -> Tensor:
    """Select a single element of a 2-d tensor as a scalar."""
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError("pick expects a 2-d tensor")
    n, m = x.data.shape
    if not (0 <= row < n and 0 <= col < m):
        raise ShapeError(f"pick index ({row}, {col}) outside shape {x.data.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[row, col] = float(g)
        x._accumulate(full)

    return Tensor._result(x.data[row, col], "pick", (x,), backward)


def concat_rows(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    for p in parts:
        if p.data.ndim != 2:
            raise ShapeError("concat_rows expects 2-d tensors")
    out_data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        start = 0
        for p, size in zip(parts, sizes):
            p._accumulate(g[start:start + size])
            start += size

    return Tensor._result(out_data, "concat_rows", tuple(parts), backward)


def concat_cols(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    for p in parts:
        if p.data.ndim != 2:
            raise ShapeError("concat_cols expects 2-d tensors")
    out_data = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def backward(g):
        start = 0
        for p, size in zip(parts, sizes):
            p._accumulate(g[:, start:start + size])
            start += size

    return Tensor._result(out_data, "concat_cols", tuple(parts), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError("slice_rows expects a 2-d tensor")
    if not (0 <= start < stop <= x.data.shape[0]):
        raise ShapeError(f"row slice [{start}:{stop}] outside shape {x.data.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        x._accumulate(full)

    return Tensor._result(x.data[start:stop].copy(), "slice_rows", (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError("slice_cols expects a 2-d tensor")
    if not (0 <= start < stop <= x.data.shape[1]):
        raise ShapeError(f"column slice [{start}:{stop}] outside shape {x.data.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    return Tensor._result(x.data[:, start:stop].copy(), "slice_cols", (x,), backward)


def flip_rows(x: Tensor) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError("flip_rows expects a 2-d tensor")

    def backward(g):
        x._accumulate(g[::-1])

    return Tensor._result(x.data[::-1].copy(), "flip_rows", (x,), backward)


def conv1d(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Same-padded 1-d convolution over the rows of x.

    x is (T, d), filters is (F, k, d), bias is (1, F); output is (T, F).
    Even kernel widths pad one column less on the left, so k = 2 reaches the
    current and the next row.
    """
    x, filters, bias = _wrap(x), _wrap(filters), _wrap(bias)
    if x.data.ndim != 2 or filters.data.ndim != 3:
        raise ShapeError("conv1d expects x (T, d) and filters (F, k, d)")
    t_len, d = x.data.shape
    n_filters, k, fd = filters.data.shape
    if fd != d:
        raise ShapeError(f"filter depth {fd} does not match input width {d}")
    if k < 1:
        raise ShapeError("kernel width must be at least 1")
    if bias.data.shape != (1, n_filters):
        raise ShapeError(f"bias must be (1, {n_filters}), got {bias.data.shape}")

    left = (k - 1) // 2
    right = k - 1 - left
    padded = np.zeros((t_len + left + right, d))
    padded[left:left + t_len] = x.data
    # rows[t, j] = padded row feeding tap j of output position t
    rows = np.arange(t_len)[:, None] + np.arange(k)[None, :]
    windows = padded[rows]                       # (T, k, d)
    w2 = filters.data.reshape(n_filters, k * d)  # tap-major layout
    out_data = windows.reshape(t_len, k * d) @ w2.T + bias.data

    def backward(g):
        bias._accumulate(g.sum(axis=0, keepdims=True))
        filters._accumulate((g.T @ windows.reshape(t_len, k * d)).reshape(filters.data.shape))
        g_windows = (g @ w2).reshape(t_len, k, d)
        g_padded = np.zeros_like(padded)
        np.add.at(g_padded, rows, g_windows)
        x._accumulate(g_padded[left:left + t_len])

    return Tensor._result(out_data, "conv1d", (x, filters, bias), backward)


def segment_max_rows(x: Tensor, seg_len: int, mask=None) -> Tensor:
    """Column-wise max over consecutive row blocks of length seg_len.

    Masked-out rows never win. A block with no live rows yields zeros and
    passes no gradient. Ties go to the earliest row, deterministically.
    """
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError("segment_max_rows expects a 2-d tensor")
    t_len, d = x.data.shape
    if seg_len < 1 or t_len % seg_len != 0:
        raise ConfigError(
            f"segment length {seg_len} does not divide row count {t_len}")
    n_seg = t_len // seg_len
    if mask is None:
        mask = np.ones(t_len)
    mask = np.asarray(mask, dtype=np.float64).reshape(t_len)

    guarded = np.where(mask[:, None] > 0, x.data, -np.inf)
    blocks = guarded.reshape(n_seg, seg_len, d)
    arg = blocks.argmax(axis=1)                                   # (n_seg, d)
    live = mask.reshape(n_seg, seg_len).sum(axis=1) > 0           # (n_seg,)
    out_data = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]
    out_data = np.where(live[:, None], out_data, 0.0)

    def backward(g):
        g_x = np.zeros_like(x.data)
        row_idx = arg + (np.arange(n_seg) * seg_len)[:, None]
        col_idx = np.broadcast_to(np.arange(d), (n_seg, d))
        np.add.at(g_x, (row_idx, col_idx), g * live[:, None])
        x._accumulate(g_x)

    return Tensor._result(out_data, "segment_max", (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: dict = field(default_factory=dict)


def gradcheck(f, params: dict, h: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of f() against central differences.

    f is a zero-argument callable returning a scalar Tensor computed from
    the Tensors in params (name -> Tensor). Relative error per coordinate is
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    if not params:
        return GradCheckReport(0.0, {})
    for p in params.values():
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    per = {}
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        g_flat = analytic[name].reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = f().item()
            flat[i] = saved - h
            f_minus = f().item()
            flat[i] = saved
            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(g_flat[i] - g_fd) / max(1e-8, abs(g_flat[i]) + abs(g_fd))
            worst_here = max(worst_here, err)
        per[name] = worst_here
        worst = max(worst, worst_here)
    return GradCheckReport(worst, per)


# ---------------------------------------------------------------------------
# small dense SVD (one-sided Jacobi)
# ---------------------------------------------------------------------------


def svd_small(m, max_sweeps: int = 60, tol: float = 1e-14):
    """Full SVD of a small dense matrix: m = U @ diag(s) @ Vt.

    One-sided Jacobi: rotate column pairs until all columns are mutually
    orthogonal, then read singular values off the column norms. Columns
    belonging to (numerically) zero singular values are completed to an
    orthonormal basis so U is always orthonormal, even for rank-deficient
    input. Intended for matrices up to a couple thousand on a side.
    """
    a = np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError("svd_small expects a 2-d matrix")
    if max(a.shape) > 2048:
        raise ShapeError(f"svd_small is for small matrices, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("svd_small input contains non-finite values")

    if a.shape[0] < a.shape[1]:
        u, s, vt = svd_small(a.T, max_sweeps=max_sweeps, tol=tol)
        return vt.T, s, u.T

    work = a.copy()
    n = work.shape[1]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                col_i = work[:, i]
                col_j = work[:, j]
                gamma = float(col_i @ col_j)
                if gamma == 0.0:
                    continue
                alpha = float(col_i @ col_i)
                beta = float(col_j @ col_j)
                denom = math.sqrt(alpha * beta)
                if denom == 0.0:
                    continue
                off = max(off, abs(gamma) / denom)
                if abs(gamma) <= tol * denom:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s_ = c * t
                work[:, i], work[:, j] = c * col_i - s_ * col_j, s_ * col_i + c * col_j
                v[:, i], v[:, j] = c * v[:, i] - s_ * v[:, j], s_ * v[:, i] + c * v[:, j]
        if off <= tol * 10.0:
            break

    s = np.sqrt((work * work).sum(axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    work = work[:, order]
    v = v[:, order]

    u = np.zeros((a.shape[0], n))
    cutoff = max(a.shape) * np.finfo(np.float64).eps * (s[0] if n else 0.0)
    deficient = []
    for k in range(n):
        if s[k] > cutoff:
            u[:, k] = work[:, k] / s[k]
        else:
            s[k] = 0.0
            deficient.append(k)

    if deficient:
        _complete_orthonormal(u, deficient)
    return u, s, v.T


def _complete_orthonormal(u: np.ndarray, empty_cols) -> None:
    """Fill the listed zero columns of u with unit vectors orthogonal to the rest."""
    m = u.shape[0]
    filled = [k for k in range(u.shape[1]) if k not in set(empty_cols)]
    basis = [u[:, k] for k in filled]
    for k in empty_cols:
        vec = None
        for cand in range(m):
            trial = np.zeros(m)
            trial[cand] = 1.0
            for b in basis:
                trial -= (trial @ b) * b
            norm = np.linalg.norm(trial)
            if norm > 1e-8:
                vec = trial / norm
                break
        if vec is None:
            raise NumericError("could not complete orthonormal basis")
        u[:, k] = vec
        basis.append(vec)
