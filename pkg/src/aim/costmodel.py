"""Analytic FLOPs and prefill-latency model for full-scale decoder stacks.

Accounting conventions (all integer FLOPs, 2 FLOPs per multiply-accumulate):

  * per layer at sequence length n:
      qkv          2 n d (d + 2 h_kv d_h)     (GQA shrinks the KV projection)
      attn scores  2 n^2 h d_h                (GQA does NOT shrink score math)
      attn apply   2 n^2 h d_h
      out proj     2 n d^2
      mlp          2 n d m * mlp_matrices     (3 for gated, 2 for plain)
    Vocabulary projection, norms and softmax are excluded.
  * layer l of a pruned pipeline is costed at the schedule's retained count
    ceil(N1 * r(l)) plus text tokens.
  * merge overhead is costed on the aggregate visual sequence: per halving
    iteration on n tokens, pairwise cosine ~ (n/2)(n/2)(2d+3), plus n*2d
    normalization and 2d per merged pair; d is the width at which merging
    runs (merge_dim), not necessarily the decoder width.
  * prune overhead per scoring layer is PRUNE_FLOPS_PER_ATTN_ELEMENT * h * n^2
    plus n log2 n for selection.  The per-element constant covers the
    per-head graph matvec and the surrounding averaging/renormalization
    bookkeeping of the reference accounting.

Latency is a per-layer roofline: max(FLOPs / peak, bytes moved / bandwidth),
where bytes = weight bytes + n*d activation reads/writes at checkpoint
precision; overhead FLOPs are charged at peak compute.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

from aim.errors import InputError
from aim.merge import scope_target
from aim.schedule import PruneSchedule

PRUNE_FLOPS_PER_ATTN_ELEMENT = 16


@dataclass(frozen=True)
class ModelProfile:
    """Architecture constants of a full-scale model (editable JSON data)."""

    name: str
    layers: int
    hidden_dim: int
    heads: int
    kv_heads: int
    head_dim: int
    mlp_dim: int
    mlp_matrices: int
    bytes_per_weight: int
    excludes_vocab_projection: bool = True
    source: str = ""

    def __post_init__(self):
        if min(self.layers, self.hidden_dim, self.heads, self.kv_heads,
               self.head_dim, self.mlp_dim, self.bytes_per_weight) < 1:
            raise InputError(f"profile {self.name}: all dimensions must be >= 1")
        if self.mlp_matrices not in (2, 3):
            raise InputError(f"profile {self.name}: mlp_matrices must be 2 or 3")
        if self.heads * self.head_dim != self.hidden_dim:
            raise InputError(
                f"profile {self.name}: heads*head_dim != hidden_dim")
        if self.kv_heads > self.heads:
            raise InputError(f"profile {self.name}: kv_heads > heads")
        if not self.excludes_vocab_projection:
            raise InputError(
                f"profile {self.name}: vocab-projection accounting is not "
                f"supported; excludes_vocab_projection must be true")

    @property
    def weight_params_per_layer(self) -> int:
        d, dh = self.hidden_dim, self.head_dim
        return (d * (d + 2 * self.kv_heads * dh) + d * d
                + self.mlp_matrices * d * self.mlp_dim)


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    peak_flops: float        # FLOP/s
    memory_bandwidth: float  # bytes/s
    source: str = ""

    def __post_init__(self):
        if self.peak_flops <= 0 or self.memory_bandwidth <= 0:
            raise InputError(f"hardware {self.name}: rates must be positive")


@dataclass(frozen=True)
class Geometry:
    """Token geometry of one scenario."""

    frames: int
    tokens_per_frame: int
    text_tokens: int
    merge_dim: int | None = None  # width where merging runs; None -> decoder width

    def __post_init__(self):
        if self.frames < 1 or self.tokens_per_frame < 1:
            raise InputError("frames and tokens_per_frame must be >= 1")
        if self.text_tokens < 0:
            raise InputError("text_tokens must be >= 0")
        if self.merge_dim is not None and self.merge_dim < 1:
            raise InputError("merge_dim must be >= 1")

    @property
    def visual_total(self) -> int:
        return self.frames * self.tokens_per_frame


@dataclass(frozen=True)
class LayerFlops:
    tokens: int
    qkv: int
    attn_scores: int
    attn_apply: int
    out_proj: int
    mlp: int

    @property
    def total(self) -> int:
        return self.qkv + self.attn_scores + self.attn_apply + self.out_proj + self.mlp


def layer_flops(profile: ModelProfile, n: int) -> LayerFlops:
    """FLOPs of one decoder layer over a length-n prefill."""
    if n < 0:
        raise InputError("token count must be >= 0")
    d, dh, h = profile.hidden_dim, profile.head_dim, profile.heads
    quad = 2 * n * n * h * dh
    return LayerFlops(
        tokens=n,
        qkv=2 * n * d * (d + 2 * profile.kv_heads * dh),
        attn_scores=quad,
        attn_apply=quad,
        out_proj=2 * n * d * d,
        mlp=2 * n * d * profile.mlp_dim * profile.mlp_matrices,
    )


def pipeline_flops(profile: ModelProfile, per_layer_tokens) -> list:
    """Per-layer FLOPs for a schedule of sequence lengths (one per layer)."""
    if len(per_layer_tokens) != profile.layers:
        raise InputError(
            f"schedule has {len(per_layer_tokens)} entries, profile "
            f"{profile.name} has {profile.layers} layers")
    return [layer_flops(profile, n) for n in per_layer_tokens]


def merge_overhead_flops(n_visual: int, target: int, dim: int) -> int:
    """Cost of iterative pairwise-similarity merging on the aggregate set."""
    if target > n_visual:
        raise InputError("merge target exceeds token count")
    total = 0
    n = n_visual
    while n > target:
        pairs = min(n // 2, n - target)
        total += (n // 2) * ((n + 1) // 2) * (2 * dim + 3)  # A x B cosines
        total += n * 2 * dim                                # normalization
        total += pairs * 2 * dim                            # group averaging
        n -= pairs
    return total


def prune_overhead_flops(profile: ModelProfile, schedule: PruneSchedule,
                         text_tokens: int) -> int:
    """Scoring + selection cost over the schedule's active layers."""
    if schedule.is_disabled:
        return 0
    total = 0
    for layer in range(schedule.l1, min(schedule.l2, schedule.total_layers) + 1):
        n = schedule.retained_count(layer) + text_tokens
        if n == 0:
            continue
        total += PRUNE_FLOPS_PER_ATTN_ELEMENT * profile.heads * n * n
        total += math.ceil(n * math.log2(n)) if n > 1 else 0
    return total


def _layer_seconds(profile: ModelProfile, hardware: HardwareProfile,
                   lf: LayerFlops) -> float:
    if lf.tokens == 0:
        return 0.0
    weight_bytes = profile.weight_params_per_layer * profile.bytes_per_weight
    act_bytes = lf.tokens * profile.hidden_dim * 2 * profile.bytes_per_weight
    compute = lf.total / hardware.peak_flops
    memory = (weight_bytes + act_bytes) / hardware.memory_bandwidth
    return max(compute, memory)


@dataclass(frozen=True)
class CostReport:
    config_id: str
    ratio: float
    l1: int  # 0 when pruning is disabled
    l2: int
    frames: int
    tokens_per_frame: int
    text_tokens: int
    per_layer: tuple
    llm_flops: int
    merge_overhead: int
    prune_overhead: int
    llm_ms: float
    overhead_ms: float

    @property
    def total_flops(self) -> int:
        return self.llm_flops + self.merge_overhead + self.prune_overhead

    @property
    def prefill_ms(self) -> float:
        return self.llm_ms + self.overhead_ms

    CSV_HEADER = ("config", "ratio", "l1", "l2", "frames", "flops_tb",
                  "merge_overhead_gf", "prune_overhead_gf", "prefill_ms")

    def csv_row(self) -> list:
        # floats at 6 significant digits (full precision lives in JSON)
        return [
            self.config_id,
            f"{self.ratio:.6g}",
            str(self.l1),
            str(self.l2),
            str(self.frames),
            f"{self.total_flops / 1e12:.6g}",
            f"{self.merge_overhead / 1e9:.6g}",
            f"{self.prune_overhead / 1e9:.6g}",
            f"{self.prefill_ms:.6g}",
        ]

    def to_jsonable(self) -> dict:
        return {
            "config": self.config_id,
            "ratio": self.ratio,
            "l1": self.l1,
            "l2": self.l2,
            "frames": self.frames,
            "tokens_per_frame": self.tokens_per_frame,
            "text_tokens": self.text_tokens,
            "llm_flops": self.llm_flops,
            "merge_overhead_flops": self.merge_overhead,
            "prune_overhead_flops": self.prune_overhead,
            "total_flops": self.total_flops,
            "llm_ms": self.llm_ms,
            "overhead_ms": self.overhead_ms,
            "prefill_ms": self.prefill_ms,
            "per_layer": [
                {"tokens": lf.tokens, "qkv": lf.qkv,
                 "attn_scores": lf.attn_scores, "attn_apply": lf.attn_apply,
                 "out_proj": lf.out_proj, "mlp": lf.mlp, "total": lf.total}
                for lf in self.per_layer
            ],
        }


def pipeline_cost(profile: ModelProfile, hardware: HardwareProfile,
                  geometry: Geometry, merge_ratio: float = 1.0,
                  prune_l1: int = 0, prune_l2: int = 0,
                  merge_mode: str = "spatial",
                  config_id: str | None = None) -> CostReport:
    """Cost one full configuration.  prune_l1 = 0 disables pruning."""
    if not 0.0 < merge_ratio <= 1.0:
        raise InputError(f"merge ratio {merge_ratio} outside (0, 1]")
    n0 = geometry.visual_total
    if merge_mode == "spatial":
        n1 = geometry.frames * scope_target(geometry.tokens_per_frame,
                                            merge_ratio)
    elif merge_mode == "temporal":
        n1 = scope_target(n0, merge_ratio)
    else:
        raise InputError(f"merge mode {merge_mode!r} not in (spatial, temporal)")

    pruning = prune_l1 >= 1 and prune_l1 <= profile.layers
    if pruning:
        schedule = PruneSchedule(prune_l1, prune_l2, profile.layers, n1)
    else:
        schedule = PruneSchedule.disabled(profile.layers, n1)
    counts = schedule.retained_counts()
    per_layer = pipeline_flops(
        profile, [c + geometry.text_tokens for c in counts])
    llm = sum(lf.total for lf in per_layer)

    merge_dim = geometry.merge_dim or profile.hidden_dim
    merge_oh = merge_overhead_flops(n0, n1, merge_dim)
    prune_oh = prune_overhead_flops(profile, schedule, geometry.text_tokens)

    llm_s = sum(_layer_seconds(profile, hardware, lf) for lf in per_layer)
    overhead_s = (merge_oh + prune_oh) / hardware.peak_flops
    if config_id is None:
        config_id = f"r{merge_ratio:g}" + (
            f"-l{schedule.l1}-{schedule.l2}" if pruning else "")
    return CostReport(
        config_id=config_id,
        ratio=merge_ratio,
        l1=schedule.l1 if pruning else 0,
        l2=schedule.l2 if pruning else 0,
        frames=geometry.frames,
        tokens_per_frame=geometry.tokens_per_frame,
        text_tokens=geometry.text_tokens,
        per_layer=tuple(per_layer),
        llm_flops=llm,
        merge_overhead=merge_oh,
        prune_overhead=prune_oh,
        llm_ms=llm_s * 1e3,
        overhead_ms=overhead_s * 1e3,
    )


# --- profile loading ---------------------------------------------------------

PROFILE_DIR_ENV = "AIM_PROFILE_DIR"

_MODEL_FIELDS = {"name", "layers", "hidden_dim", "heads", "kv_heads",
                 "head_dim", "mlp_dim", "mlp_matrices", "bytes_per_weight",
                 "excludes_vocab_projection", "source"}
_HW_FIELDS = {"name", "peak_flops", "memory_bandwidth", "source"}


def _read_profile_json(name_or_path: str) -> dict:
    """Resolve a profile: explicit path, then $AIM_PROFILE_DIR, then built-ins."""
    candidates = []
    if name_or_path.endswith(".json") or os.sep in name_or_path:
        candidates.append(name_or_path)
    env_dir = os.environ.get(PROFILE_DIR_ENV)
    if env_dir:
        candidates.append(os.path.join(env_dir, f"{name_or_path}.json"))
    for path in candidates:
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
    builtin = resources.files("aim").joinpath(f"profiles/{name_or_path}.json")
    if builtin.is_file():
        return json.loads(builtin.read_text(encoding="utf-8"))
    raise InputError(
        f"profile {name_or_path!r} not found (looked at explicit path, "
        f"${PROFILE_DIR_ENV}, and built-ins)")


def load_model_profile(name_or_path: str) -> ModelProfile:
    data = _read_profile_json(name_or_path)
    unknown = set(data) - _MODEL_FIELDS
    if unknown:
        raise InputError(f"model profile has unknown fields {sorted(unknown)}")
    try:
        return ModelProfile(**data)
    except TypeError as exc:
        raise InputError(f"model profile invalid: {exc}") from exc


def load_hardware_profile(name_or_path: str) -> HardwareProfile:
    data = _read_profile_json(name_or_path)
    unknown = set(data) - _HW_FIELDS
    if unknown:
        raise InputError(f"hardware profile has unknown fields {sorted(unknown)}")
    try:
        return HardwareProfile(**data)
    except TypeError as exc:
        raise InputError(f"hardware profile invalid: {exc}") from exc
