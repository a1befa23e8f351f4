"""Deterministic float64 linear algebra on a dual backend.

A compiled Cython backend (_ckernels) and a pure-Python twin (_pykernels)
implement the same kernels with identical loop order; whichever is selected
at import time, results are bitwise identical.  Selection: the compiled
backend when importable, unless AIM_FORCE_PYTHON_KERNELS=1.

Design rules (load-bearing for reproducibility, do not "optimize"):
  * fixed accumulation order, no reassociation, no FMA;
  * softmax subtracts the row max; masked entries are excluded from the
    reduction (not set to a large negative sentinel) and come out exactly 0;
  * ties in top-k resolve to the lower index;
  * every exported operation returns matrices validated to be all-finite.
"""

from __future__ import annotations

import os
from array import array
from math import isfinite, sqrt
from typing import Iterable, Sequence

from aim.errors import (
    FullyMaskedRowError,
    InputError,
    NonFiniteError,
    ShapeMismatchError,
)

__all__ = [
    "Matrix",
    "matmul",
    "masked_softmax_rows",
    "cosine_similarity",
    "top_k_indices",
    "pairwise_cosine_matrix",
    "get_backend",
    "available_backends",
]


def _load_backend():
    if os.environ.get("AIM_FORCE_PYTHON_KERNELS", "") not in ("", "0"):
        from aim.numerics import _pykernels
        return _pykernels, "python"
    try:
        from aim.numerics import _ckernels
        return _ckernels, "compiled"
    except ImportError:
        from aim.numerics import _pykernels
        return _pykernels, "python"


_K, BACKEND = _load_backend()


def get_backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return BACKEND


def available_backends() -> dict:
    """Importable kernel modules keyed by name (for tests and benchmarks)."""
    out = {}
    from aim.numerics import _pykernels
    out["python"] = _pykernels
    try:
        from aim.numerics import _ckernels
        out["compiled"] = _ckernels
    except ImportError:
        pass
    return out


def _zero_buf(size: int) -> array:
    return array("d", bytes(8 * size))


class Matrix:
    """Row-major float64 matrix with explicit dimensions.

    Invariant: every value is finite, checked on construction (and therefore
    after every exported operation, since those all construct their result).
    The flat buffer is exposed as .buf for kernel calls; treat it as
    read-only outside this package.
    """

    __slots__ = ("rows", "cols", "buf")

    def __init__(self, rows: int, cols: int, data=None, _validate: bool = True):
        if rows < 0 or cols < 1:
            raise InputError(f"invalid matrix shape ({rows}, {cols})")
        if data is None:
            buf = _zero_buf(rows * cols)
        elif isinstance(data, array) and data.typecode == "d":
            buf = data
        else:
            buf = array("d", data)
        if len(buf) != rows * cols:
            raise ShapeMismatchError("matrix", (rows, cols), (len(buf),))
        if _validate and not _K.all_finite(buf):
            raise NonFiniteError("matrix construction")
        self.rows = rows
        self.cols = cols
        self.buf = buf

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(rows, cols, None, _validate=False)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Matrix":
        n = len(rows)
        if n == 0:
            raise InputError("from_rows: need at least one row")
        m = len(rows[0])
        buf = array("d")
        for r in rows:
            if len(r) != m:
                raise ShapeMismatchError("from_rows", (n, m), (len(r),))
            buf.extend(r)
        return cls(n, m, buf)

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    def get(self, i: int, j: int) -> float:
        return self.buf[i * self.cols + j]

    def row(self, i: int) -> list:
        c = self.cols
        return self.buf[i * c:(i + 1) * c].tolist()

    def to_rows(self) -> list:
        return [self.row(i) for i in range(self.rows)]

    def copy(self) -> "Matrix":
        return Matrix(self.rows, self.cols, array("d", self.buf),
                      _validate=False)

    def __eq__(self, other) -> bool:
        # bitwise comparison: determinism tests rely on it
        return (isinstance(other, Matrix) and self.rows == other.rows
                and self.cols == other.cols
                and self.buf.tobytes() == other.buf.tobytes())

    def __hash__(self):
        return hash((self.rows, self.cols, self.buf.tobytes()))

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def vstack(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.cols:
        raise ShapeMismatchError("vstack", a.shape, b.shape)
    buf = array("d", a.buf)
    buf.extend(b.buf)
    return Matrix(a.rows + b.rows, a.cols, buf, _validate=False)


def take_rows(m: Matrix, indices: Sequence[int]) -> Matrix:
    c = m.cols
    buf = array("d")
    for i in indices:
        if not 0 <= i < m.rows:
            raise InputError(f"take_rows: index {i} out of range 0..{m.rows - 1}")
        buf.extend(m.buf[i * c:(i + 1) * c])
    return Matrix(len(indices), c, buf, _validate=False)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    out = _zero_buf(a.rows * b.cols)
    _K.matmul(a.buf, b.buf, a.rows, a.cols, b.cols, out)
    return Matrix(a.rows, b.cols, out)


def masked_softmax_rows(scores: Matrix, mask: Sequence[Sequence[bool]]) -> Matrix:
    """Softmax each row over its unmasked entries; masked entries become 0."""
    n, m = scores.rows, scores.cols
    if len(mask) != n:
        raise ShapeMismatchError("masked_softmax_rows", (n, m), (len(mask),))
    flat = bytearray(n * m)
    for i, row in enumerate(mask):
        if len(row) != m:
            raise ShapeMismatchError("masked_softmax_rows", (n, m),
                                     (i, len(row)))
        base = i * m
        for j, keep in enumerate(row):
            if keep:
                flat[base + j] = 1
    out = _zero_buf(n * m)
    bad = _K.masked_softmax_rows(scores.buf, bytes(flat), n, m, out)
    if bad >= 0:
        raise FullyMaskedRowError(bad)
    return Matrix(n, m, out)


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine of the angle between u and v, clamped to [-1, 1]."""
    if len(u) != len(v):
        raise ShapeMismatchError("cosine_similarity", (len(u),), (len(v),))
    su = 0.0
    sv = 0.0
    dot = 0.0
    for a, b in zip(u, v):
        if not (isfinite(a) and isfinite(b)):
            raise NonFiniteError("cosine_similarity")
        su += a * a
        sv += b * b
        dot += a * b
    if su == 0.0 or sv == 0.0:
        raise InputError("cosine_similarity: zero-norm vector")
    s = dot / (sqrt(su) * sqrt(sv))
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    return s


def pairwise_cosine_matrix(a: Matrix, b: Matrix):
    """All-pairs cosine similarities, or (None, offender) on a zero-norm row.

    Returns (Matrix, -1) on success; on failure (None, i) where i indexes
    a's rows for i < a.rows, else b's row i - a.rows.  Callers translate the
    offender into their own token ids.
    """
    if a.cols != b.cols:
        raise ShapeMismatchError("pairwise_cosine_matrix", a.shape, b.shape)
    out = _zero_buf(a.rows * b.rows)
    bad = _K.pairwise_cosine(a.buf, a.rows, b.buf, b.rows, a.cols, out)
    if bad >= 0:
        return None, bad
    return Matrix(a.rows, b.rows, out), -1


def top_k_indices(values: Sequence[float], k: int) -> list:
    """Indices of the k largest values, descending; ties keep lower index."""
    n = len(values)
    if not 0 <= k <= n:
        raise InputError(f"top_k_indices: k={k} out of range 0..{n}")
    order = sorted(range(n), key=lambda i: (-values[i], i))
    return order[:k]


def matvec(a: Matrix, x: Sequence[float]) -> array:
    if a.rows != a.cols or a.rows != len(x):
        raise ShapeMismatchError("matvec", a.shape, (len(x),))
    xs = x if isinstance(x, array) else array("d", x)
    out = _zero_buf(a.rows)
    _K.matvec(a.buf, a.rows, xs, out)
    return out


def matvec_transposed(a: Matrix, x: Sequence[float]) -> array:
    if a.rows != a.cols or a.rows != len(x):
        raise ShapeMismatchError("matvec_transposed", a.shape, (len(x),))
    xs = x if isinstance(x, array) else array("d", x)
    out = _zero_buf(a.rows)
    _K.matvec_t(a.buf, a.rows, xs, out)
    return out


def rmsnorm_rows(x: Matrix, eps: float) -> Matrix:
    if eps <= 0.0:
        raise InputError("rmsnorm_rows: eps must be positive")
    out = _zero_buf(x.rows * x.cols)
    _K.rmsnorm_rows(x.buf, x.rows, x.cols, eps, out)
    return Matrix(x.rows, x.cols, out)


def silu_mul(g: Matrix, u: Matrix) -> Matrix:
    if g.shape != u.shape:
        raise ShapeMismatchError("silu_mul", g.shape, u.shape)
    out = _zero_buf(g.rows * g.cols)
    _K.silu_mul(g.buf, u.buf, g.rows * g.cols, out)
    return Matrix(g.rows, g.cols, out)


def add(x: Matrix, y: Matrix) -> Matrix:
    if x.shape != y.shape:
        raise ShapeMismatchError("add", x.shape, y.shape)
    out = _zero_buf(x.rows * x.cols)
    _K.add_vec(x.buf, y.buf, x.rows * x.cols, out)
    return Matrix(x.rows, x.cols, out)


def multihead_causal_attention(q: Matrix, k: Matrix, v: Matrix,
                               heads: int) -> tuple:
    """Causal attention over heads; returns (context, head-mean attention)."""
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeMismatchError("multihead_causal_attention", q.shape, v.shape)
    n, d = q.shape
    if heads < 1 or d % heads != 0:
        raise InputError(f"multihead_causal_attention: {heads} heads do not "
                         f"divide width {d}")
    ctx = _zero_buf(n * d)
    attn = _zero_buf(n * n)
    _K.multihead_causal_attention(q.buf, k.buf, v.buf, n, d, heads, ctx, attn)
    return Matrix(n, d, ctx), Matrix(n, n, attn)


def check_causal_stochastic(m: Matrix, tol: float) -> int:
    """-1 if causal row-stochastic within tol, else first offending row."""
    if m.rows != m.cols:
        raise ShapeMismatchError("check_causal_stochastic", m.shape, m.shape)
    return _K.check_causal_stochastic(m.buf, m.rows, tol)
