"""Similarity-based token merging: worked examples, invariants, and
equivalence with an independently coded reference implementation."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aim.errors import InputError
from aim.merge import (
    MergeConfig,
    MergeEvent,
    merge_step,
    merge_to_ratio,
    scope_target,
)
from aim.numerics import Matrix
from aim.tokens import TokenMatrix
from oracles import merge_once_oracle, merge_to_ratio_oracle, scope_target_oracle

from conftest import rand_rows, random_spans


def _tm(rows, spans=None, ids=None):
    spans = spans if spans is not None else ((0, len(rows)),)
    ids = ids if ids is not None else tuple(range(len(rows)))
    return TokenMatrix(Matrix.from_rows(rows), tuple(spans), tuple(ids))


# --- worked example ------------------------------------------------------------

def test_single_pair_worked_example():
    tm = _tm([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [-1.0, 0.0]])
    out, events = merge_step(tm, pairs_to_merge=1)
    rows = out.embeddings.to_rows()
    want = [[0.9, 0.3], [0.0, 1.0], [-1.0, 0.0]]
    assert len(rows) == 3
    for got_row, want_row in zip(rows, want):
        assert got_row == pytest.approx(want_row)
    # destination keeps its own identity; the absorbed token disappears
    assert out.source_ids == (1, 2, 3)
    assert events == [MergeEvent(scope=0, step=0, dest_source_id=1,
                                 absorbed_source_ids=(0,))]


def test_two_sources_one_destination():
    # both even-position tokens prefer the same odd token; a 3-way group forms
    tm = _tm([[1.0, 0.0], [1.0, 0.001], [1.0, -0.001], [0.0, 1.0]])
    out, events = merge_step(tm, pairs_to_merge=2)
    assert out.count == 2
    assert out.source_ids == (1, 3)
    assert len(events) == 1
    assert events[0].dest_source_id == 1
    assert events[0].absorbed_source_ids == (0, 2)
    want0 = [(1.0 + 1.0 + 1.0) / 3, (0.001 + 0.0 + (-0.001)) / 3]
    assert out.embeddings.row(0) == pytest.approx(want0, abs=1e-12)


def test_identical_duplicates_merge_first():
    dup = [5.0, 5.0]
    tm = _tm([dup, list(dup), [1.0, 0.0], [0.0, 1.0]])
    out, events = merge_step(tm, pairs_to_merge=1)
    assert events[0].dest_source_id == 1
    assert events[0].absorbed_source_ids == (0,)
    assert out.embeddings.row(0) == pytest.approx(dup)


def test_spatial_mode_respects_frame_boundaries():
    # two frames of two tokens each; cross-frame vectors are identical but
    # must never pair up in spatial mode
    rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]
    tm = _tm(rows, spans=((0, 2), (2, 4)))
    out, events = merge_step(tm, pairs_to_merge=2, mode="spatial")
    assert out.count == 2
    assert out.frame_spans == ((0, 1), (1, 2))
    scopes = sorted(e.scope for e in events)
    assert scopes == [0, 1]
    for e in events:
        lo, hi = (0, 2) if e.scope == 0 else (2, 4)
        assert lo <= e.dest_source_id < hi
        assert all(lo <= a < hi for a in e.absorbed_source_ids)


def test_temporal_mode_merges_across_frames():
    rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]
    tm = _tm(rows, spans=((0, 2), (2, 4)))
    out, events = merge_step(tm, pairs_to_merge=1, mode="temporal")
    # token 2 pairs with token 1?  positions: evens {0,2}, odds {1,3};
    # sim(0,1)=0, sim(0,3)=0, sim(2,1)=0, sim(2,3)=0 -- all ties; tie on
    # similarity keeps the lower global A position, and each A keeps the
    # lower B.  So A=0 merges into B=1.
    assert events[0].dest_source_id == 1
    assert events[0].absorbed_source_ids == (0,)
    assert out.frame_spans == ((0, 3),)


def test_merge_step_validation():
    tm = _tm([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InputError):
        merge_step(tm, pairs_to_merge=-1)
    with pytest.raises(InputError):
        merge_step(tm, pairs_to_merge=2)  # > floor(N/2)
    with pytest.raises(InputError):
        merge_step(tm, 1, mode="diagonal")
    out, events = merge_step(tm, pairs_to_merge=0)
    assert out is tm and events == []


def test_merge_config_validation():
    with pytest.raises(InputError):
        MergeConfig(retention_ratio=0.0)
    with pytest.raises(InputError):
        MergeConfig(retention_ratio=1.5)
    with pytest.raises(InputError):
        MergeConfig(retention_ratio=0.5, mode="nope")


# --- target arithmetic ----------------------------------------------------------

def test_scope_target_rounding():
    assert scope_target(196, 0.25) == 49
    assert scope_target(196, 0.063) == 12   # 12.348 -> floor(+0.5) = 12
    assert scope_target(196, 0.016) == 3    # 3.136 -> 3
    assert scope_target(9, 0.5) == 5        # 4.5 rounds half up
    assert scope_target(1, 0.001) == 1      # never below one token
    assert scope_target(7, 1.0) == 7


@given(n=st.integers(1, 500), ratio=st.floats(0.001, 1.0))
@settings(max_examples=200, deadline=None)
def test_scope_target_matches_oracle_and_bounds(n, ratio):
    got = scope_target(n, ratio)
    assert got == scope_target_oracle(n, ratio)
    assert 1 <= got <= n


# --- ratio-driven merging -------------------------------------------------------

def test_merge_to_ratio_counts_exact(rng):
    for _ in range(20):
        frames = rng.randint(1, 4)
        per = rng.randint(1, 9)
        rows = rand_rows(rng, frames * per, 4)
        spans = tuple((i * per, (i + 1) * per) for i in range(frames))
        tm = _tm(rows, spans=spans)
        ratio = rng.choice([1.0, 0.5, 0.25, 0.125, 0.063])
        out, trace = merge_to_ratio(tm, MergeConfig(ratio, "spatial"))
        target = scope_target(per, ratio)
        assert out.count == frames * target
        for start, end in out.frame_spans:
            assert end - start == target


def test_merge_to_ratio_full_retention_is_identity(rng):
    rows = rand_rows(rng, 8, 4)
    tm = _tm(rows, spans=((0, 4), (4, 8)))
    out, trace = merge_to_ratio(tm, MergeConfig(1.0))
    assert out.embeddings.buf.tobytes() == tm.embeddings.buf.tobytes()
    assert out.source_ids == tm.source_ids
    assert trace.events == []


def test_merge_to_ratio_ids_strictly_increasing(rng):
    for _ in range(10):
        rows = rand_rows(rng, 12, 5)
        spans = random_spans(rng, 12)
        tm = _tm(rows, spans=spans)
        out, _ = merge_to_ratio(tm, MergeConfig(0.25))
        assert list(out.source_ids) == sorted(set(out.source_ids))


def test_trace_groups_reconstruct_embeddings(rng):
    rows = rand_rows(rng, 16, 6)
    tm = _tm(rows, spans=((0, 8), (8, 16)))
    out, trace = merge_to_ratio(tm, MergeConfig(0.25))
    assert len(trace.groups) == out.count
    seen = []
    for i, (sid, members) in enumerate(trace.groups):
        assert sid == out.source_ids[i]
        assert math.isclose(sum(members.values()), 1.0, abs_tol=1e-9)
        assert all(w > 0 for w in members.values())
        seen.extend(members)
        recon = [0.0] * tm.dim
        for orig, w in members.items():
            for c in range(tm.dim):
                recon[c] += w * rows[orig][c]
        assert recon == pytest.approx(out.embeddings.row(i), abs=1e-9)
    assert sorted(seen) == list(range(16))  # groups partition original ids


def test_merge_to_ratio_temporal_single_span(rng):
    rows = rand_rows(rng, 10, 4)
    tm = _tm(rows, spans=((0, 5), (5, 10)))
    out, _ = merge_to_ratio(tm, MergeConfig(0.5, "temporal"))
    assert out.count == scope_target(10, 0.5)
    assert out.frame_spans == ((0, out.count),)


# --- reference-implementation equivalence ----------------------------------------

def _events_as_pairs(tm, events):
    """Normalize MergeEvents to (scope, dest_sid, absorbed_sids) tuples."""
    return sorted((e.scope, e.dest_source_id, tuple(e.absorbed_source_ids))
                  for e in events)


def test_merge_step_matches_oracle_fuzz(rng):
    for trial in range(150):
        n = rng.randint(2, 12)
        d = rng.randint(1, 8)
        rows = rand_rows(rng, n, d)
        spans = random_spans(rng, n)
        mode = rng.choice(["spatial", "temporal"])
        tm = _tm(rows, spans=spans)
        # count matchable pairs the same way the implementation does
        scope_list = list(spans) if mode == "spatial" else [(0, n)]
        matchable = sum(
            min(((e - s) + 1) // 2, (e - s) // 2) for s, e in scope_list)
        if matchable == 0:
            continue
        pairs = rng.randint(1, matchable)
        got_tm, got_events = merge_step(tm, pairs, mode)
        o_rows, o_spans, o_ids, o_sel = merge_once_oracle(
            rows, spans, list(range(n)), pairs, mode)
        assert got_tm.source_ids == tuple(o_ids)
        assert got_tm.frame_spans == tuple(o_spans)
        for i in range(len(o_rows)):
            assert got_tm.embeddings.row(i) == pytest.approx(
                o_rows[i], abs=1e-9)
        # selected pairs must agree exactly (scope, dest id, absorbed ids)
        want = {}
        for si, a, b in o_sel:
            start = scope_list[si][0]
            want.setdefault((si, start + b), []).append(start + a)
        want_norm = sorted((si, dest, tuple(sorted(ab)))
                           for (si, dest), ab in want.items())
        assert _events_as_pairs(tm, got_events) == want_norm


def test_merge_to_ratio_matches_oracle_fuzz(rng):
    for trial in range(60):
        n = rng.randint(2, 12)
        d = rng.randint(1, 6)
        rows = rand_rows(rng, n, d)
        spans = random_spans(rng, n)
        mode = rng.choice(["spatial", "temporal"])
        ratio = rng.choice([0.75, 0.5, 0.25, 0.125])
        tm = _tm(rows, spans=spans)
        got_tm, _ = merge_to_ratio(tm, MergeConfig(ratio, mode))
        o_rows, o_spans, o_ids = merge_to_ratio_oracle(
            rows, spans, list(range(n)), ratio, mode)
        assert got_tm.source_ids == tuple(o_ids)
        assert got_tm.frame_spans == tuple(o_spans)
        for i in range(len(o_rows)):
            assert got_tm.embeddings.row(i) == pytest.approx(
                o_rows[i], abs=1e-9)
