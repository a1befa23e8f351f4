"""Similarity-based token merging (pre-decoder reduction stage).

Within each matching scope (one frame span in spatial mode, the whole
sequence in temporal mode) tokens at even positions form set A and tokens at
odd positions form set B.  Every A-token is matched to its most-similar
B-token by cosine similarity (ties -> lower B index); the pairs_to_merge
A-tokens with the highest best-match similarity are merged into their B
destinations (ties -> lower A position).  A destination becomes the
unweighted mean of the B token and every A token merged into it that step;
merged A-tokens disappear, B keeps its slot, so relative order never changes.

merge_to_ratio drives merge_step per scope until the scope hits its target
count T = max(1, round_half_up(n_scope * ratio)), merging
min(floor(cur / 2), cur - T) pairs per step.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field

from aim.errors import InputError, ZeroNormEmbeddingError
from aim.numerics import Matrix, pairwise_cosine_matrix
from aim.tokens import TokenMatrix

MODES = ("spatial", "temporal")


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def scope_target(n_scope: int, ratio: float) -> int:
    """Post-merge token count for one scope: never below one token."""
    return max(1, round_half_up(n_scope * ratio))


@dataclass(frozen=True)
class MergeConfig:
    retention_ratio: float
    mode: str = "spatial"

    def __post_init__(self):
        if not 0.0 < self.retention_ratio <= 1.0:
            raise InputError(
                f"retention_ratio {self.retention_ratio} outside (0, 1]")
        if self.mode not in MODES:
            raise InputError(f"mode {self.mode!r} not in {MODES}")


@dataclass(frozen=True)
class MergeEvent:
    """One destination absorbing one or more sources in a single step."""

    scope: int
    step: int
    dest_source_id: int
    absorbed_source_ids: tuple


@dataclass
class MergeTrace:
    """Record of a full merge run:

    groups[i] corresponds to output token i: (dest source_id, {original
    source_id: weight}); weights are positive and sum to 1 per group, and the
    groups partition the original ids.
    """

    events: list = field(default_factory=list)
    groups: list = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return {
            "events": [
                {"scope": e.scope, "step": e.step, "dest": e.dest_source_id,
                 "absorbed": list(e.absorbed_source_ids)}
                for e in self.events
            ],
            "groups": [
                {"output_index": i, "source_id": sid,
                 "members": {str(k): w for k, w in sorted(members.items())}}
                for i, (sid, members) in enumerate(self.groups)
            ],
        }


class _Tok:
    """Mutable per-token record used while merging one scope."""

    __slots__ = ("emb", "sid", "weights")

    def __init__(self, emb: list, sid: int, weights: dict):
        self.emb = emb
        self.sid = sid
        self.weights = weights


def _scope_views(tokens: TokenMatrix, mode: str) -> list:
    spans = tokens.frame_spans if mode == "spatial" else ((0, tokens.count),)
    scopes = []
    for start, end in spans:
        scopes.append([
            _Tok(tokens.embeddings.row(i), tokens.source_ids[i],
                 {tokens.source_ids[i]: 1.0})
            for i in range(start, end)
        ])
    return scopes


def _candidates(scope: list, scope_idx: int, pos_offset: int) -> list:
    """Best B-match per A-token: (similarity, global_pos, a_local, b_local)."""
    n = len(scope)
    a_local = list(range(0, n, 2))
    b_local = list(range(1, n, 2))
    if not b_local:
        return []
    dim = len(scope[0].emb)
    a_buf = array("d")
    for i in a_local:
        a_buf.extend(scope[i].emb)
    b_buf = array("d")
    for j in b_local:
        b_buf.extend(scope[j].emb)
    sims, bad = pairwise_cosine_matrix(Matrix(len(a_local), dim, a_buf),
                                       Matrix(len(b_local), dim, b_buf))
    if sims is None:
        side = a_local if bad < len(a_local) else b_local
        local = bad if bad < len(a_local) else bad - len(a_local)
        raise ZeroNormEmbeddingError(scope[side[local]].sid)
    out = []
    for ai, pos in enumerate(a_local):
        best_sim = sims.get(ai, 0)
        best_b = 0
        for bj in range(1, len(b_local)):
            s = sims.get(ai, bj)
            if s > best_sim:  # strict: ties keep the lower B index
                best_sim = s
                best_b = bj
        out.append((best_sim, pos_offset + pos, scope_idx, pos,
                    b_local[best_b]))
    return out


def _apply(scope: list, selected: list, scope_idx: int, step: int,
           events: list) -> None:
    """Merge selected (a_local, b_local) pairs of one scope, in place."""
    by_dest = {}
    for a_pos, b_pos in selected:
        by_dest.setdefault(b_pos, []).append(a_pos)
    merged_positions = set()
    for b_pos in sorted(by_dest):
        a_list = sorted(by_dest[b_pos])
        dest = scope[b_pos]
        group = [dest] + [scope[a] for a in a_list]
        k1 = float(len(group))
        dim = len(dest.emb)
        mean = [0.0] * dim
        for tok in group:  # B first, then A's ascending: fixed order
            e = tok.emb
            for c in range(dim):
                mean[c] += e[c]
        for c in range(dim):
            mean[c] = mean[c] / k1
        weights = {}
        for tok in group:
            for orig, w in tok.weights.items():
                weights[orig] = weights.get(orig, 0.0) + w
        for orig in weights:
            weights[orig] = weights[orig] / k1
        dest.emb = mean
        dest.weights = weights
        events.append(MergeEvent(
            scope=scope_idx, step=step, dest_source_id=dest.sid,
            absorbed_source_ids=tuple(scope[a].sid for a in a_list)))
        merged_positions.update(a_list)
    scope[:] = [tok for i, tok in enumerate(scope)
                if i not in merged_positions]


def _assemble(scopes: list, dim: int, mode: str) -> TokenMatrix:
    buf = array("d")
    sids = []
    spans = []
    cursor = 0
    for scope in scopes:
        for tok in scope:
            buf.extend(tok.emb)
            sids.append(tok.sid)
        spans.append((cursor, cursor + len(scope)))
        cursor += len(scope)
    if mode == "temporal":
        spans = [(0, cursor)]
    emb = Matrix(cursor, dim, buf)
    return TokenMatrix(emb, tuple(spans), tuple(sids))


def merge_step(tokens: TokenMatrix, pairs_to_merge: int,
               mode: str = "spatial") -> tuple:
    """One merge step over the whole TokenMatrix.

    Candidates from every scope compete in one ranking; the top
    pairs_to_merge merge, each within its own scope.  Returns
    (TokenMatrix, list[MergeEvent]).
    """
    if mode not in MODES:
        raise InputError(f"mode {mode!r} not in {MODES}")
    if pairs_to_merge < 0:
        raise InputError("pairs_to_merge must be >= 0")
    if pairs_to_merge > tokens.count // 2:
        raise InputError(
            f"pairs_to_merge {pairs_to_merge} exceeds floor(N/2) = "
            f"{tokens.count // 2}")
    if pairs_to_merge == 0:
        return tokens, []
    scopes = _scope_views(tokens, mode)
    offsets = []
    cursor = 0
    for scope in scopes:
        offsets.append(cursor)
        cursor += len(scope)
    candidates = []
    for si, scope in enumerate(scopes):
        candidates.extend(_candidates(scope, si, offsets[si]))
    if pairs_to_merge > len(candidates):
        raise InputError(
            f"pairs_to_merge {pairs_to_merge} exceeds the {len(candidates)} "
            f"matchable A-tokens for this frame layout")
    # highest similarity first; ties -> lower (global) A position
    candidates.sort(key=lambda c: (-c[0], c[1]))
    chosen = candidates[:pairs_to_merge]
    events = []
    for si in range(len(scopes)):
        selected = [(c[3], c[4]) for c in chosen if c[2] == si]
        if selected:
            _apply(scopes[si], selected, si, 0, events)
    return _assemble(scopes, tokens.dim, mode), events


def merge_to_ratio(tokens: TokenMatrix, config: MergeConfig) -> tuple:
    """Merge each scope down to its target count; returns (tokens, trace)."""
    scopes = _scope_views(tokens, config.mode)
    events = []
    for si, scope in enumerate(scopes):
        target = scope_target(len(scope), config.retention_ratio)
        step = 0
        while len(scope) > target:
            pairs = min(len(scope) // 2, len(scope) - target)
            ranked = _candidates(scope, si, 0)
            ranked.sort(key=lambda c: (-c[0], c[1]))
            _apply(scope, [(c[3], c[4]) for c in ranked[:pairs]],
                   si, step, events)
            step += 1
    if not events:
        return tokens, MergeTrace(
            events=[],
            groups=[(sid, {sid: 1.0}) for sid in tokens.source_ids])
    out = _assemble(scopes, tokens.dim, config.mode)
    groups = []
    for scope in scopes:
        for tok in scope:
            groups.append((tok.sid, dict(tok.weights)))
    return out, MergeTrace(events=events, groups=groups)
