# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernel backend.

Statement-for-statement mirror of _pykernels.py; see that module for the
contract.  Both backends must emit bitwise-identical floats: same loop
order, same single-accumulator reductions, libm exp/sqrt on both sides,
and the build forbids FMA contraction (-ffp-contract=off in setup.py).
"""

from libc.math cimport exp, isfinite, sqrt
from libc.stdlib cimport free, malloc


def all_finite(const double[::1] data) -> bint:
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        if not isfinite(data[i]):
            return False
    return True


def matmul(const double[::1] a, const double[::1] b,
           Py_ssize_t n, Py_ssize_t k, Py_ssize_t m, double[::1] out):
    cdef Py_ssize_t i, kk, j, ai, oi, bk
    cdef double a_ik
    for i in range(n):
        ai = i * k
        oi = i * m
        for kk in range(k):
            a_ik = a[ai + kk]
            bk = kk * m
            for j in range(m):
                out[oi + j] += a_ik * b[bk + j]


def masked_softmax_rows(const double[::1] scores, const unsigned char[::1] mask,
                        Py_ssize_t n, Py_ssize_t m, double[::1] out) -> Py_ssize_t:
    cdef Py_ssize_t i, j, base
    cdef double mx, v, total, e
    cdef bint seen
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


def pairwise_cosine(const double[::1] a, Py_ssize_t na,
                    const double[::1] b, Py_ssize_t nb,
                    Py_ssize_t d, double[::1] out) -> Py_ssize_t:
    cdef Py_ssize_t i, j, c, base, ai, bj, oi
    cdef double ss, v, dot, s
    cdef double *norms_a = <double *> malloc(na * sizeof(double))
    cdef double *norms_b = NULL
    if norms_a == NULL:
        raise MemoryError()
    try:
        for i in range(na):
            base = i * d
            ss = 0.0
            for c in range(d):
                v = a[base + c]
                ss += v * v
            if ss == 0.0:
                return i
            norms_a[i] = sqrt(ss)
        norms_b = <double *> malloc(nb * sizeof(double))
        if norms_b == NULL:
            raise MemoryError()
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
    finally:
        free(norms_a)
        if norms_b != NULL:
            free(norms_b)


def matvec(const double[::1] a, Py_ssize_t n, const double[::1] x,
           double[::1] out):
    cdef Py_ssize_t i, j, base
    cdef double acc
    for i in range(n):
        base = i * n
        acc = 0.0
        for j in range(n):
            acc += a[base + j] * x[j]
        out[i] = acc


def matvec_t(const double[::1] a, Py_ssize_t n, const double[::1] x,
             double[::1] out):
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += a[j * n + i] * x[j]
        out[i] = acc


def rmsnorm_rows(const double[::1] x, Py_ssize_t n, Py_ssize_t d,
                 double eps, double[::1] out):
    cdef Py_ssize_t i, c, base
    cdef double ss, v, scale
    for i in range(n):
        base = i * d
        ss = 0.0
        for c in range(d):
            v = x[base + c]
            ss += v * v
        scale = 1.0 / sqrt(ss / d + eps)
        for c in range(d):
            out[base + c] = x[base + c] * scale


def silu_mul(const double[::1] g, const double[::1] u, Py_ssize_t size,
             double[::1] out):
    cdef Py_ssize_t i
    cdef double x, s, e
    for i in range(size):
        x = g[i]
        if x >= 0.0:
            s = x / (1.0 + exp(-x))
        else:
            e = exp(x)
            s = x * e / (1.0 + e)
        out[i] = s * u[i]


def add_vec(const double[::1] x, const double[::1] y, Py_ssize_t size,
            double[::1] out):
    cdef Py_ssize_t i
    for i in range(size):
        out[i] = x[i] + y[i]


def multihead_causal_attention(const double[::1] q, const double[::1] k,
                               const double[::1] v,
                               Py_ssize_t n, Py_ssize_t d, Py_ssize_t h,
                               double[::1] ctx, double[::1] attn):
    cdef Py_ssize_t dh = d // h
    cdef double scale = 1.0 / sqrt(<double> dh)
    cdef Py_ssize_t head, off, i, j, c, qi, kj, ci, ai, vj
    cdef double dot, s, mx, total, e, p, inv_h
    cdef double *scores = <double *> malloc(n * sizeof(double))
    if scores == NULL:
        raise MemoryError()
    try:
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
    finally:
        free(scores)
    inv_h = 1.0 / h
    cdef Py_ssize_t i2, j2, ai2
    for i2 in range(n):
        ai2 = i2 * n
        for j2 in range(i2 + 1):
            attn[ai2 + j2] = attn[ai2 + j2] * inv_h


def check_causal_stochastic(const double[::1] a, Py_ssize_t n,
                            double tol) -> Py_ssize_t:
    cdef Py_ssize_t i, j, base
    cdef double acc, dev
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
