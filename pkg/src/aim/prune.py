"""Attention-graph importance scoring and token selection.

Treats the (head-averaged, causal, row-stochastic) attention matrix as a
weighted adjacency graph and scores tokens by one or more PageRank-style
power-iteration steps from a uniform start, renormalizing to sum 1 after
each step.

Two propagation directions exist because the literal update

    s_i <- (1/n) * sum_j A[i, j] * s_j        ("given")

is degenerate for row-stochastic A: one step from uniform init returns the
uniform vector.  The default "received" direction transposes the matrix
(s_i accumulates the attention token i receives), which is the variant that
actually discriminates tokens.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass
from typing import Sequence

from aim.errors import InputError, ShapeMismatchError
from aim.numerics import (
    Matrix,
    check_causal_stochastic,
    matvec,
    matvec_transposed,
    top_k_indices,
)

DIRECTIONS = ("received", "given")
ROW_SUM_TOL = 1e-9
CONVERGENCE_TOL = 1e-9
MAX_ITERATIONS = 100


@dataclass(frozen=True)
class AttentionSnapshot:
    """Head-averaged attention of one decoder layer.

    Square, strictly causal (exact zeros above the diagonal) and
    row-stochastic on the causal support within 1e-9.
    """

    weights: Matrix
    layer_index: int = 0

    def __post_init__(self):
        if self.weights.rows != self.weights.cols:
            raise ShapeMismatchError("AttentionSnapshot", self.weights.shape,
                                     self.weights.shape)
        bad = check_causal_stochastic(self.weights, ROW_SUM_TOL)
        if bad >= 0:
            raise InputError(
                f"attention row {bad} is not causal row-stochastic "
                f"(tol {ROW_SUM_TOL})")

    @property
    def size(self) -> int:
        return self.weights.rows


def head_average(heads: Sequence[Matrix], layer_index: int = 0) -> AttentionSnapshot:
    """Arithmetic mean over per-head attention matrices."""
    if not heads:
        raise InputError("head_average: need at least one head")
    shape = heads[0].shape
    for h in heads:
        if h.shape != shape:
            raise ShapeMismatchError("head_average", shape, h.shape)
    size = shape[0] * shape[1]
    acc = array("d", bytes(8 * size))
    for h in heads:  # heads in order, then one divide: fixed accumulation
        buf = h.buf
        for i in range(size):
            acc[i] += buf[i]
    inv = 1.0 / len(heads)
    for i in range(size):
        acc[i] = acc[i] * inv
    return AttentionSnapshot(Matrix(shape[0], shape[1], acc), layer_index)


@dataclass(frozen=True)
class ImportanceScores:
    """Non-negative per-token scores summing to 1."""

    values: tuple
    iterations_used: int = 1

    def __post_init__(self):
        total = 0.0
        for v in self.values:
            if v < 0.0:
                raise InputError("importance scores must be non-negative")
            total += v
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"importance scores sum to {total!r}, not 1")


def importance_scores(snapshot: AttentionSnapshot, direction: str = "received",
                      iterations: int = 1,
                      until_convergence: bool = False,
                      causal_debias: bool = False) -> ImportanceScores:
    """Power-iteration importance over the attention graph.

    causal_debias divides each token's received mass by the number of
    queries able to attend to it (n - i under causal masking), removing the
    head start early positions get from being visible to more queries.
    """
    if direction not in DIRECTIONS:
        raise InputError(f"direction {direction!r} not in {DIRECTIONS}")
    if iterations < 1:
        raise InputError("iterations must be >= 1")
    if causal_debias and direction != "received":
        raise InputError("causal_debias only applies to the received direction")
    n = snapshot.size
    apply_matrix = matvec_transposed if direction == "received" else matvec
    inv_n = 1.0 / n
    s = array("d", [inv_n] * n)
    limit = MAX_ITERATIONS if until_convergence else iterations
    used = 0
    for _ in range(limit):
        nxt = apply_matrix(snapshot.weights, s)
        if causal_debias:
            for i in range(n):
                nxt[i] = nxt[i] / (n - i)
        for i in range(n):
            nxt[i] = nxt[i] * inv_n
        total = 0.0
        for i in range(n):
            total += nxt[i]
        if total <= 0.0:
            raise InputError("importance mass vanished; attention is degenerate")
        for i in range(n):
            nxt[i] = nxt[i] / total
        used += 1
        if until_convergence:
            delta = 0.0
            for i in range(n):
                d = nxt[i] - s[i]
                delta += d if d >= 0.0 else -d
            s = nxt
            if delta < CONVERGENCE_TOL:
                break
        else:
            s = nxt
    return ImportanceScores(values=tuple(s), iterations_used=used)


def select_retained(scores: ImportanceScores, n_visual: int, n_text: int,
                    keep_visual: int, prune_text: bool = False) -> list:
    """Indices (ascending) of tokens that survive this pruning step.

    Default: every text token survives, plus the keep_visual best-scored
    visual tokens (ties -> lower index).  prune_text instead keeps the
    top (keep_visual + n_text) tokens of any modality.
    """
    n = n_visual + n_text
    if len(scores.values) != n:
        raise ShapeMismatchError("select_retained", (len(scores.values),), (n,))
    if not 0 <= keep_visual <= n_visual:
        raise InputError(
            f"keep_visual {keep_visual} outside 0..{n_visual}")
    if prune_text:
        kept = top_k_indices(scores.values, keep_visual + n_text)
    else:
        kept = top_k_indices(scores.values[:n_visual], keep_visual)
        kept.extend(range(n_visual, n))
    return sorted(kept)
