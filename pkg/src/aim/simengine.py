"""Toy decoder and the end-to-end prefill simulation.

The decoder is a standard pre-norm stack (RMS-norm, causal multi-head
attention, gated-SiLU MLP, residual adds) with seeded symmetric-uniform
weights scaled by 1/sqrt(dim).  No positional encoding: token order enters
only through the causal mask, which keeps merged/pruned runs comparable.
Everything is float64 and bitwise deterministic; there is no training, no
batching, no KV-cache — single-sequence prefill only.

run_prefill wires the whole pipeline: merge visual tokens, concatenate with
text, then per decoder layer compute attention, score tokens on the
attention graph, and cut the layer OUTPUT down to the schedule's retained
count, so layer l attends over the layer-(l-1) retained set.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from aim.errors import EngineError, InputError, ShapeMismatchError
from aim.merge import MergeConfig, MergeTrace, merge_to_ratio
from aim.numerics import (
    Matrix,
    add,
    matmul,
    multihead_causal_attention,
    rmsnorm_rows,
    silu_mul,
    take_rows,
)
from aim.prune import AttentionSnapshot, importance_scores, select_retained
from aim.schedule import PruneSchedule
from aim.tokens import TokenMatrix, concat_sequence

RMS_EPS = 1e-6

# weight matrices per layer, in generation order (regeneration from the same
# seed must be bitwise identical, so this order is part of the contract)
_LAYER_MATS = ("wq", "wk", "wv", "wo", "wg", "wu", "wd")


@dataclass(frozen=True)
class ToyModel:
    layers: int
    dim: int
    heads: int
    mlp_dim: int
    seed: int
    weights: tuple = field(repr=False, default=())

    def __post_init__(self):
        if self.layers < 1 or self.dim < 1 or self.mlp_dim < 1:
            raise InputError("layers, dim and mlp_dim must be >= 1")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise InputError(
                f"heads={self.heads} must divide dim={self.dim}")

    @classmethod
    def build(cls, seed: int, layers: int, dim: int, heads: int,
              mlp_dim: int) -> "ToyModel":
        rng = random.Random(seed)
        scale = 1.0 / dim ** 0.5
        shapes = {"wq": (dim, dim), "wk": (dim, dim), "wv": (dim, dim),
                  "wo": (dim, dim), "wg": (dim, mlp_dim), "wu": (dim, mlp_dim),
                  "wd": (mlp_dim, dim)}
        weights = []
        for _ in range(layers):
            layer = {}
            for name in _LAYER_MATS:
                r, c = shapes[name]
                layer[name] = Matrix(
                    r, c, [rng.uniform(-scale, scale) for _ in range(r * c)])
            weights.append(layer)
        return cls(layers=layers, dim=dim, heads=heads, mlp_dim=mlp_dim,
                   seed=seed, weights=tuple(weights))


def decoder_layer(hidden: Matrix, model: ToyModel, layer_index: int) -> tuple:
    """One pre-norm decoder layer (causal attention is built in).

    Returns (new_hidden, AttentionSnapshot of head-averaged weights).
    """
    if not 0 <= layer_index < model.layers:
        raise InputError(f"layer_index {layer_index} outside 0..{model.layers - 1}")
    if hidden.cols != model.dim:
        raise ShapeMismatchError("decoder_layer", hidden.shape,
                                 (hidden.rows, model.dim))
    w = model.weights[layer_index]
    x = rmsnorm_rows(hidden, RMS_EPS)
    q = matmul(x, w["wq"])
    k = matmul(x, w["wk"])
    v = matmul(x, w["wv"])
    ctx, attn = multihead_causal_attention(q, k, v, model.heads)
    h1 = add(hidden, matmul(ctx, w["wo"]))
    y = rmsnorm_rows(h1, RMS_EPS)
    act = silu_mul(matmul(y, w["wg"]), matmul(y, w["wu"]))
    h2 = add(h1, matmul(act, w["wd"]))
    return h2, AttentionSnapshot(attn, layer_index)


def plain_forward(hidden: Matrix, model: ToyModel) -> Matrix:
    """Pipeline-free forward pass: just the decoder stack."""
    for layer in range(model.layers):
        hidden, _ = decoder_layer(hidden, model, layer)
    return hidden


def input_projection(dim_in: int, model: ToyModel) -> Matrix:
    """Fixed seeded projection applied when token dim != model dim."""
    rng = random.Random((model.seed * 2654435761 + 97531) % 2 ** 64)
    scale = 1.0 / dim_in ** 0.5
    return Matrix(dim_in, model.dim,
                  [rng.uniform(-scale, scale) for _ in range(dim_in * model.dim)])


@dataclass(frozen=True)
class PruneOptions:
    direction: str = "received"
    iterations: int = 1
    until_convergence: bool = False
    prune_text: bool = False
    causal_debias: bool = False
    keep_snapshots: bool = False


@dataclass(frozen=True)
class LayerRecord:
    layer: int  # 1-based
    visual_count: int
    text_count: int
    visual_source_ids: tuple
    text_source_ids: tuple


@dataclass
class PrefillResult:
    final_hidden: Matrix
    per_layer: list
    merge_trace: MergeTrace
    merged_visual_count: int
    config: dict
    snapshots: list | None = None

    def to_jsonable(self, include_hidden: bool = True) -> dict:
        out = {
            "config": self.config,
            "merged_visual_count": self.merged_visual_count,
            "layers": [
                {"layer": r.layer, "visual": r.visual_count,
                 "text": r.text_count,
                 "visual_source_ids": list(r.visual_source_ids),
                 "text_source_ids": list(r.text_source_ids)}
                for r in self.per_layer
            ],
            "final_hidden_shape": list(self.final_hidden.shape),
        }
        if include_hidden:
            out["final_hidden"] = self.final_hidden.to_rows()
        return out


def run_prefill(visual: TokenMatrix, text: TokenMatrix, model: ToyModel,
                merge_config: MergeConfig | None = None,
                schedule: PruneSchedule | None = None,
                options: PruneOptions | None = None) -> PrefillResult:
    """Merge, concatenate, then run the decoder with progressive pruning."""
    opts = options or PruneOptions()
    if merge_config is not None:
        merged, trace = merge_to_ratio(visual, merge_config)
    else:
        merged, trace = visual, MergeTrace(
            events=[], groups=[(sid, {sid: 1.0}) for sid in visual.source_ids])
    state = concat_sequence(merged, text)
    if schedule is None:
        schedule = PruneSchedule.disabled(model.layers, merged.count)
    if schedule.total_layers != model.layers:
        raise InputError(
            f"schedule covers {schedule.total_layers} layers, model has "
            f"{model.layers}")
    if schedule.base_visual_count != merged.count:
        raise InputError(
            f"schedule base_visual_count {schedule.base_visual_count} != "
            f"post-merge visual count {merged.count}")

    hidden = state.flattened()
    if hidden.cols != model.dim:
        hidden = matmul(hidden, input_projection(hidden.cols, model))
    visual_sids = list(merged.source_ids)
    text_sids = list(text.source_ids)

    per_layer = []
    snaps = [] if opts.keep_snapshots else None
    for layer in range(1, model.layers + 1):
        hidden, snap = decoder_layer(hidden, model, layer - 1)
        if snaps is not None:
            snaps.append(snap)
        n_vis, n_txt = len(visual_sids), len(text_sids)
        if not schedule.is_disabled:
            keep_visual = min(schedule.retained_count(layer), n_vis)
            if keep_visual < n_vis or opts.prune_text:
                scores = importance_scores(
                    snap, direction=opts.direction, iterations=opts.iterations,
                    until_convergence=opts.until_convergence,
                    causal_debias=opts.causal_debias)
                kept = select_retained(scores, n_vis, n_txt, keep_visual,
                                       prune_text=opts.prune_text)
                if not kept:
                    raise EngineError(
                        f"pruning at layer {layer} would drop every token "
                        f"(visual allowance {keep_visual}, live text "
                        f"{n_txt}); relax the schedule or disable "
                        "prune_text")
                if len(kept) < n_vis + n_txt:
                    hidden = take_rows(hidden, kept)
                visual_sids = [visual_sids[i] for i in kept if i < n_vis]
                text_sids = [text_sids[i - n_vis] for i in kept if i >= n_vis]
        per_layer.append(LayerRecord(
            layer=layer, visual_count=len(visual_sids),
            text_count=len(text_sids),
            visual_source_ids=tuple(visual_sids),
            text_source_ids=tuple(text_sids)))

    config = {
        "model": {"layers": model.layers, "dim": model.dim,
                  "heads": model.heads, "mlp_dim": model.mlp_dim,
                  "seed": model.seed},
        "merge": None if merge_config is None else {
            "retention_ratio": merge_config.retention_ratio,
            "mode": merge_config.mode},
        "schedule": {"l1": schedule.l1, "l2": schedule.l2,
                     "layers": schedule.total_layers,
                     "base_visual_count": schedule.base_visual_count},
        "prune": {"direction": opts.direction, "iterations": opts.iterations,
                  "until_convergence": opts.until_convergence,
                  "prune_text": opts.prune_text},
    }
    return PrefillResult(final_hidden=hidden, per_layer=per_layer,
                         merge_trace=trace, merged_visual_count=merged.count,
                         config=config, snapshots=snaps)
