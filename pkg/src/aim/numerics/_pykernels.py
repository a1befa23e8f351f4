"""Pure-Python kernel backend.

Reference semantics for every hot loop.  The compiled backend
(_ckernels.pyx) mirrors these loops statement for statement; the two must
produce bitwise-identical output, so:

  * accumulation order is fixed (ascending index, one accumulator),
  * no reassociation, no pairwise/fsum tricks,
  * exp() is libm's (math.exp here, libc exp in the C twin),
  * softmax subtracts the row max before exponentiating.

All matrix buffers are row-major array('d'); masks are bytes (1 = keep).
Kernels never allocate their outputs; callers pass zero-initialized buffers.
Error signalling is by return code (no exceptions), so the C twin can stay
exception-free: -1 means OK, >= 0 is the offending row/token index.
"""

from __future__ import annotations

from math import exp, isfinite, sqrt


def all_finite(data) -> bool:
    for x in data:
        if not isfinite(x):
            return False
    return True


def matmul(a, b, n: int, k: int, m: int, out) -> None:
    # i-k-j order: out[i, j] accumulates over k ascending, one term at a time.
    for i in range(n):
        ai = i * k
        oi = i * m
        for kk in range(k):
            a_ik = a[ai + kk]
            bk = kk * m
            for j in range(m):
                out[oi + j] += a_ik * b[bk + j]


def masked_softmax_rows(scores, mask, n: int, m: int, out) -> int:
    """Row-wise softmax over unmasked entries; masked entries are exactly 0.

    Returns -1, or the index of the first fully-masked row.
    """
    for i in range(n):
        base = i * m
        mx = 0.0
        seen = False
        for j in range(m):
            if mask[base + j]:
                v = scores[base + j]
                if not seen or v > mx:
                    mx = v
                    seen = True
        if not seen:
            return i
        total = 0.0
        for j in range(m):
            if mask[base + j]:
                e = exp(scores[base + j] - mx)
                out[base + j] = e
                total += e
        for j in range(m):
            if mask[base + j]:
                out[base + j] = out[base + j] / total
    return -1


def pairwise_cosine(a, na: int, b, nb: int, d: int, out) -> int:
    """out[i, j] = cos(a_i, b_j), clamped to [-1, 1].

    Returns -1, or i for a zero-norm a-row, or na + j for a zero-norm b-row.
    """
    norms_a = [0.0] * na
    for i in range(na):
        base = i * d
        ss = 0.0
        for c in range(d):
            v = a[base + c]
            ss += v * v
        if ss == 0.0:
            return i
        norms_a[i] = sqrt(ss)
    norms_b = [0.0] * nb
    for j in range(nb):
        base = j * d
        ss = 0.0
        for c in range(d):
            v = b[base + c]
            ss += v * v
        if ss == 0.0:
            return na + j
        norms_b[j] = sqrt(ss)
    for i in range(na):
        ai = i * d
        oi = i * nb
        for j in range(nb):
            bj = j * d
            dot = 0.0
            for c in range(d):
                dot += a[ai + c] * b[bj + c]
            s = dot / (norms_a[i] * norms_b[j])
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
            out[oi + j] = s
    return -1


def matvec(a, n: int, x, out) -> None:
    # out[i] = sum_j a[i, j] * x[j]
    for i in range(n):
        base = i * n
        acc = 0.0
        for j in range(n):
            acc += a[base + j] * x[j]
        out[i] = acc


def matvec_t(a, n: int, x, out) -> None:
    # out[i] = sum_j a[j, i] * x[j]  (transposed application)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += a[j * n + i] * x[j]
        out[i] = acc


def rmsnorm_rows(x, n: int, d: int, eps: float, out) -> None:
    for i in range(n):
        base = i * d
        ss = 0.0
        for c in range(d):
            v = x[base + c]
            ss += v * v
        scale = 1.0 / sqrt(ss / d + eps)
        for c in range(d):
            out[base + c] = x[base + c] * scale


def silu_mul(g, u, size: int, out) -> None:
    # out = silu(g) * u, with the sign split so exp never overflows.
    for i in range(size):
        x = g[i]
        if x >= 0.0:
            s = x / (1.0 + exp(-x))
        else:
            e = exp(x)
            s = x * e / (1.0 + e)
        out[i] = s * u[i]


def add_vec(x, y, size: int, out) -> None:
    for i in range(size):
        out[i] = x[i] + y[i]


def multihead_causal_attention(q, k, v, n: int, d: int, h: int,
                               ctx, attn) -> None:
    """Causal softmax attention, head-averaged attention matrix as by-product.

    ctx  (n*d, zero-init): per-head context, heads write disjoint columns.
    attn (n*n, zero-init): mean over heads of the per-head attention rows;
                           the strict upper triangle is never touched.
    """
    dh = d // h
    scale = 1.0 / sqrt(float(dh))
    scores = [0.0] * n
    for head in range(h):
        off = head * dh
        for i in range(n):
            qi = i * d + off
            mx = 0.0
            for j in range(i + 1):
                kj = j * d + off
                dot = 0.0
                for c in range(dh):
                    dot += q[qi + c] * k[kj + c]
                s = dot * scale
                scores[j] = s
                if j == 0 or s > mx:
                    mx = s
            total = 0.0
            for j in range(i + 1):
                e = exp(scores[j] - mx)
                scores[j] = e
                total += e
            ci = i * d + off
            ai = i * n
            for j in range(i + 1):
                p = scores[j] / total
                attn[ai + j] += p
                vj = j * d + off
                for c in range(dh):
                    ctx[ci + c] += p * v[vj + c]
    inv_h = 1.0 / h
    for i in range(n):
        ai = i * n
        for j in range(i + 1):
            attn[ai + j] = attn[ai + j] * inv_h


def check_causal_stochastic(a, n: int, tol: float) -> int:
    """Validate a causal row-stochastic matrix.

    Returns -1 if every entry is non-negative, every strict-upper entry is
    exactly 0, and every row sums to 1 within tol over j <= i; otherwise
    the first offending row.
    """
    for i in range(n):
        base = i * n
        acc = 0.0
        for j in range(i + 1):
            if a[base + j] < 0.0:
                return i
            acc += a[base + j]
        dev = acc - 1.0
        if dev < 0.0:
            dev = -dev
        if dev > tol:
            return i
        for j in range(i + 1, n):
            if a[base + j] != 0.0:
                return i
    return -1
