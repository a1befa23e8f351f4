"""Token container invariants, synthetic generation, and file round-trips."""

import struct
from array import array

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aim.errors import InputError, ShapeMismatchError, TokenFileError
from aim.numerics import Matrix, cosine_similarity
from aim.tokens import (
    FORMAT_VERSION,
    MAGIC,
    SequenceState,
    TokenMatrix,
    concat_sequence,
    read_token_file,
    split_sequence,
    synthesize_tokens,
    write_token_file,
)

from conftest import rand_rows


def _tm(rows, spans=None, ids=None):
    emb = Matrix.from_rows(rows)
    spans = spans if spans is not None else ((0, len(rows)),)
    ids = ids if ids is not None else tuple(range(len(rows)))
    return TokenMatrix(emb, tuple(spans), tuple(ids))


# --- container invariants -----------------------------------------------------

def test_token_matrix_basic():
    tm = _tm([[1.0, 2.0], [3.0, 4.0]])
    assert tm.count == 2 and tm.dim == 2
    assert tm.frame_spans == ((0, 2),)
    assert tm.source_ids == (0, 1)


def test_token_matrix_rejects_bad_spans():
    rows = [[1.0], [2.0], [3.0]]
    for spans in [((0, 2),), ((0, 2), (2, 2)), ((1, 3),), ((0, 2), (1, 3)),
                  ((0, 4),), ()]:
        with pytest.raises(InputError):
            _tm(rows, spans=spans)


def test_token_matrix_rejects_non_increasing_ids():
    rows = [[1.0], [2.0]]
    with pytest.raises(InputError):
        _tm(rows, ids=(1, 1))
    with pytest.raises(InputError):
        _tm(rows, ids=(2, 1))
    with pytest.raises(ShapeMismatchError):
        _tm(rows, ids=(0,))


def test_token_matrix_fresh_defaults():
    tm = TokenMatrix.fresh(Matrix.from_rows([[1.0], [2.0], [3.0]]))
    assert tm.frame_spans == ((0, 3),)
    assert tm.source_ids == (0, 1, 2)


def test_sequence_state_boundary_and_flatten():
    vis = _tm([[1.0, 0.0], [0.0, 1.0]])
    txt = _tm([[2.0, 2.0]])
    state = concat_sequence(vis, txt)
    assert state.boundary == 2 and state.total == 3
    assert state.flattened().to_rows() == [[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]
    back_v, back_t = split_sequence(state)
    assert back_v is vis and back_t is txt


def test_sequence_state_dim_mismatch():
    with pytest.raises(ShapeMismatchError):
        SequenceState(visual=_tm([[1.0, 2.0]]), text=_tm([[1.0]]))


# --- synthetic tokens ----------------------------------------------------------

def test_synthesize_deterministic():
    a = synthesize_tokens(42, frames=3, tokens_per_frame=5, dim=8,
                          redundancy=0.5)
    b = synthesize_tokens(42, frames=3, tokens_per_frame=5, dim=8,
                          redundancy=0.5)
    assert a.embeddings.buf.tobytes() == b.embeddings.buf.tobytes()
    assert a.frame_spans == b.frame_spans == ((0, 5), (5, 10), (10, 15))
    c = synthesize_tokens(43, frames=3, tokens_per_frame=5, dim=8,
                          redundancy=0.5)
    assert a.embeddings.buf.tobytes() != c.embeddings.buf.tobytes()


def _mean_within_frame_cosine(tm):
    total, pairs = 0.0, 0
    for start, end in tm.frame_spans:
        for i in range(start, end):
            for j in range(i + 1, end):
                total += cosine_similarity(tm.embeddings.row(i),
                                           tm.embeddings.row(j))
                pairs += 1
    return total / pairs


def test_redundancy_controls_similarity():
    high = synthesize_tokens(7, frames=2, tokens_per_frame=12, dim=16,
                             redundancy=1.0)
    low = synthesize_tokens(7, frames=2, tokens_per_frame=12, dim=16,
                            redundancy=0.0)
    assert _mean_within_frame_cosine(high) > 0.98
    assert _mean_within_frame_cosine(low) < 0.5


def test_synthesize_validates_inputs():
    with pytest.raises(InputError):
        synthesize_tokens(0, frames=0, tokens_per_frame=1, dim=1,
                          redundancy=0.5)
    with pytest.raises(InputError):
        synthesize_tokens(0, frames=1, tokens_per_frame=1, dim=1,
                          redundancy=1.5)


# --- file format ---------------------------------------------------------------

def test_round_trip_is_float32_quantization(tmp_path, rng):
    rows = rand_rows(rng, 6, 5)
    tm = _tm(rows, spans=((0, 2), (2, 6)))
    path = str(tmp_path / "t.aimt")
    write_token_file(path, tm)
    back = read_token_file(path)
    assert back.frame_spans == tm.frame_spans
    assert back.count == 6 and back.dim == 5
    # embeddings come back as the float32 quantization of what went in
    want = array("d", array("f", tm.embeddings.buf))
    assert back.embeddings.buf.tobytes() == want.tobytes()
    # a second trip through the file is bitwise stable
    path2 = str(tmp_path / "t2.aimt")
    write_token_file(path2, back)
    again = read_token_file(path2)
    assert again.embeddings.buf.tobytes() == back.embeddings.buf.tobytes()
    assert again.frame_spans == back.frame_spans


def test_read_assigns_fresh_source_ids(tmp_path):
    tm = _tm([[1.0], [2.0], [3.0]], ids=(5, 9, 11))
    path = str(tmp_path / "ids.aimt")
    write_token_file(path, tm)
    assert read_token_file(path).source_ids == (0, 1, 2)


def test_file_layout_exact(tmp_path):
    tm = _tm([[1.5, -2.0]], spans=((0, 1),))
    path = str(tmp_path / "layout.aimt")
    write_token_file(path, tm)
    raw = open(path, "rb").read()
    assert raw[:4] == MAGIC
    version, n, d, f = struct.unpack_from("<IIII", raw, 4)
    assert (version, n, d, f) == (FORMAT_VERSION, 1, 2, 1)
    assert struct.unpack_from("<II", raw, 20) == (0, 1)
    assert struct.unpack_from("<ff", raw, 28) == (1.5, -2.0)
    assert len(raw) == 28 + 8


def test_read_rejects_corruption(tmp_path):
    tm = _tm([[1.0, 2.0], [3.0, 4.0]], spans=((0, 2),))
    path = str(tmp_path / "good.aimt")
    write_token_file(path, tm)
    raw = open(path, "rb").read()

    def expect_reject(data, name):
        bad = str(tmp_path / name)
        open(bad, "wb").write(data)
        with pytest.raises(TokenFileError):
            read_token_file(bad)

    expect_reject(b"XXXX" + raw[4:], "magic.aimt")
    expect_reject(raw[:4] + struct.pack("<I", 99) + raw[8:], "version.aimt")
    expect_reject(raw[:10], "trunc_header.aimt")
    expect_reject(raw[:22], "trunc_spans.aimt")
    expect_reject(raw[:-4], "trunc_data.aimt")
    expect_reject(raw + b"\x00" * 4, "extra_data.aimt")
    # spans not covering N
    bad_spans = raw[:20] + struct.pack("<II", 0, 1) + raw[28:]
    expect_reject(bad_spans, "bad_spans.aimt")
    # non-finite payload
    nan_payload = raw[:28] + struct.pack("<ffff", float("nan"), 1, 2, 3)
    expect_reject(nan_payload, "nan.aimt")
    with pytest.raises(TokenFileError):
        read_token_file(str(tmp_path / "missing.aimt"))


@given(n=st.integers(1, 12), d=st.integers(1, 6), seed=st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_round_trip_property(tmp_path_factory, n, d, seed):
    import random as _random
    rng = _random.Random(seed)
    rows = [[rng.uniform(-100, 100) for _ in range(d)] for _ in range(n)]
    tm = _tm(rows)
    path = str(tmp_path_factory.mktemp("rt") / "p.aimt")
    write_token_file(path, tm)
    back = read_token_file(path)
    for i in range(n):
        for j in range(d):
            # exact float32 quantization, no extra error
            assert back.embeddings.get(i, j) == \
                array("d", array("f", [rows[i][j]]))[0]
