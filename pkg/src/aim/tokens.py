"""Token containers, synthetic token generation, and the token file format.

A TokenMatrix is an ordered set of embedding rows plus frame structure
(spans partitioning [0, N)) and per-token source_ids.  Source ids give every
token a stable identity across merging and pruning; they stay strictly
increasing, so temporal order is never permuted by any pipeline stage.

Token file format (little-endian):
    magic   4 bytes  "AIMT"
    version u32      (= 1)
    N       u32      token count
    D       u32      embedding dim
    F       u32      frame count
    spans   F x (start u32, end u32)
    data    N x D float32, row-major
"""

from __future__ import annotations

import math
import random
import struct
import sys
from array import array
from dataclasses import dataclass, field

from aim.errors import InputError, NonFiniteError, ShapeMismatchError, TokenFileError
from aim.numerics import Matrix, vstack

MAGIC = b"AIMT"
FORMAT_VERSION = 1


def _validate_spans(spans, n: int) -> None:
    if not spans:
        raise InputError("frame_spans must not be empty")
    cursor = 0
    for start, end in spans:
        if start != cursor or end <= start:
            raise InputError(
                f"frame_spans must be contiguous, non-empty and sorted; "
                f"got {list(spans)} for N={n}")
        cursor = end
    if cursor != n:
        raise InputError(f"frame_spans {list(spans)} do not cover [0, {n})")


@dataclass(frozen=True)
class TokenMatrix:
    """N x D embeddings with frame spans and strictly increasing source ids."""

    embeddings: Matrix
    frame_spans: tuple
    source_ids: tuple

    def __post_init__(self):
        n = self.embeddings.rows
        if n < 1:
            raise InputError("TokenMatrix needs at least one token")
        object.__setattr__(self, "frame_spans",
                           tuple((int(s), int(e)) for s, e in self.frame_spans))
        object.__setattr__(self, "source_ids",
                           tuple(int(i) for i in self.source_ids))
        _validate_spans(self.frame_spans, n)
        if len(self.source_ids) != n:
            raise ShapeMismatchError("source_ids", (n,), (len(self.source_ids),))
        prev = None
        for sid in self.source_ids:
            if prev is not None and sid <= prev:
                raise InputError("source_ids must be strictly increasing")
            prev = sid

    @property
    def count(self) -> int:
        return self.embeddings.rows

    @property
    def dim(self) -> int:
        return self.embeddings.cols

    @classmethod
    def fresh(cls, embeddings: Matrix, frame_spans=None) -> "TokenMatrix":
        """Wrap raw embeddings with ids 0..N-1; default is a single span."""
        spans = frame_spans if frame_spans is not None else ((0, embeddings.rows),)
        return cls(embeddings, tuple(spans), tuple(range(embeddings.rows)))


@dataclass
class SequenceState:
    """Visual tokens followed by text tokens, as seen by the decoder."""

    visual: TokenMatrix
    text: TokenMatrix
    layer_index: int = 0

    def __post_init__(self):
        if self.visual.dim != self.text.dim:
            raise ShapeMismatchError("SequenceState",
                                     (self.visual.count, self.visual.dim),
                                     (self.text.count, self.text.dim))

    @property
    def boundary(self) -> int:
        """Index of the first text token in the flattened sequence."""
        return self.visual.count

    @property
    def total(self) -> int:
        return self.visual.count + self.text.count

    def flattened(self) -> Matrix:
        return vstack(self.visual.embeddings, self.text.embeddings)


def concat_sequence(visual: TokenMatrix, text: TokenMatrix) -> SequenceState:
    return SequenceState(visual=visual, text=text, layer_index=0)


def split_sequence(state: SequenceState) -> tuple:
    return state.visual, state.text


def synthesize_tokens(seed: int, frames: int, tokens_per_frame: int, dim: int,
                      redundancy: float) -> TokenMatrix:
    """Deterministic synthetic tokens with controllable redundancy.

    redundancy in [0, 1] sets the fraction of tokens that are near-duplicates:
    each frame gets max(1, ceil(tokens_per_frame * (1 - redundancy))) cluster
    centroids and tokens are small perturbations of their centroid, so
    redundancy=1.0 collapses a frame to one cluster (all pairwise cosines
    near 1) and redundancy=0.0 makes every token its own centroid.
    """
    if frames < 1 or tokens_per_frame < 1 or dim < 1:
        raise InputError("frames, tokens_per_frame and dim must be >= 1")
    if not 0.0 <= redundancy <= 1.0:
        raise InputError(f"redundancy {redundancy} outside [0, 1]")
    rng = random.Random(seed)
    n_clusters = max(1, math.ceil(tokens_per_frame * (1.0 - redundancy)))
    buf = array("d")
    spans = []
    cursor = 0
    for _ in range(frames):
        centroids = []
        for _ in range(n_clusters):
            # reject near-zero centroids: downstream cosine math needs
            # comfortably nonzero norms
            while True:
                c = [rng.gauss(0.0, 1.0) for _ in range(dim)]
                if math.sqrt(sum(x * x for x in c)) >= 0.5:
                    break
            centroids.append(c)
        for t in range(tokens_per_frame):
            c = centroids[t % n_clusters]
            buf.extend(c[j] + 0.01 * rng.gauss(0.0, 1.0) for j in range(dim))
        spans.append((cursor, cursor + tokens_per_frame))
        cursor += tokens_per_frame
    emb = Matrix(frames * tokens_per_frame, dim, buf)
    return TokenMatrix.fresh(emb, tuple(spans))


def write_token_file(path: str, tokens: TokenMatrix) -> None:
    """Serialize to the AIMT format (embeddings stored as float32)."""
    header = struct.pack("<4sIIII", MAGIC, FORMAT_VERSION, tokens.count,
                         tokens.dim, len(tokens.frame_spans))
    spans = b"".join(struct.pack("<II", s, e) for s, e in tokens.frame_spans)
    data = array("f", tokens.embeddings.buf)
    if sys.byteorder == "big":
        data.byteswap()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(spans)
        fh.write(data.tobytes())


def read_token_file(path: str) -> TokenMatrix:
    """Read an AIMT file; source ids are assigned fresh (0..N-1)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise TokenFileError(path, f"cannot read: {exc}") from exc
    if len(raw) < 20:
        raise TokenFileError(path, "truncated header")
    magic, version, n, d, f = struct.unpack_from("<4sIIII", raw, 0)
    if magic != MAGIC:
        raise TokenFileError(path, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TokenFileError(path, f"unsupported version {version}")
    if n < 1 or d < 1:
        raise TokenFileError(path, f"invalid dimensions N={n} D={d}")
    offset = 20
    if len(raw) < offset + 8 * f:
        raise TokenFileError(path, "truncated frame spans")
    spans = []
    for i in range(f):
        s, e = struct.unpack_from("<II", raw, offset + 8 * i)
        spans.append((s, e))
    offset += 8 * f
    expected = n * d * 4
    if len(raw) - offset != expected:
        raise TokenFileError(
            path, f"embedding payload is {len(raw) - offset} bytes, "
                  f"expected {expected}")
    data = array("f")
    data.frombytes(raw[offset:])
    if sys.byteorder == "big":
        data.byteswap()
    try:
        _validate_spans(spans, n)
        emb = Matrix(n, d, array("d", data))
    except NonFiniteError as exc:
        raise TokenFileError(path, "non-finite embedding values") from exc
    except InputError as exc:
        raise TokenFileError(path, str(exc)) from exc
    return TokenMatrix.fresh(emb, tuple(spans))
