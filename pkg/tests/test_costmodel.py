"""Analytic cost model: per-layer FLOPs arithmetic, overhead formulas,
roofline latency, report integrity, and profile loading."""

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aim.costmodel import (
    PRUNE_FLOPS_PER_ATTN_ELEMENT,
    CostReport,
    Geometry,
    HardwareProfile,
    ModelProfile,
    layer_flops,
    load_hardware_profile,
    load_model_profile,
    merge_overhead_flops,
    pipeline_cost,
    pipeline_flops,
    prune_overhead_flops,
)
from aim.errors import InputError
from aim.merge import scope_target
from aim.schedule import PruneSchedule

TINY = ModelProfile(name="tiny", layers=2, hidden_dim=4, heads=1, kv_heads=1,
                    head_dim=4, mlp_dim=8, mlp_matrices=3, bytes_per_weight=2)
HW = HardwareProfile(name="hw", peak_flops=1e12, memory_bandwidth=1e12)


# --- per-layer arithmetic --------------------------------------------------------

def test_layer_flops_hand_computed():
    lf = layer_flops(TINY, 1)
    assert lf.qkv == 96          # 2*1*4*(4 + 2*1*4)
    assert lf.attn_scores == 8   # 2*1*1*1*4
    assert lf.attn_apply == 8
    assert lf.out_proj == 32     # 2*1*4*4
    assert lf.mlp == 192         # 2*1*4*8*3
    assert lf.total == 336


def test_layer_flops_scaling():
    one, two = layer_flops(TINY, 3), layer_flops(TINY, 6)
    assert two.qkv == 2 * one.qkv
    assert two.out_proj == 2 * one.out_proj
    assert two.mlp == 2 * one.mlp
    assert two.attn_scores == 4 * one.attn_scores  # quadratic in n
    assert two.attn_apply == 4 * one.attn_apply


def test_layer_flops_zero_and_negative():
    assert layer_flops(TINY, 0).total == 0
    with pytest.raises(InputError):
        layer_flops(TINY, -1)


def test_grouped_kv_shrinks_projection_not_scores():
    full = ModelProfile(name="f", layers=1, hidden_dim=64, heads=8,
                        kv_heads=8, head_dim=8, mlp_dim=128, mlp_matrices=3,
                        bytes_per_weight=2)
    gqa = ModelProfile(name="g", layers=1, hidden_dim=64, heads=8,
                       kv_heads=2, head_dim=8, mlp_dim=128, mlp_matrices=3,
                       bytes_per_weight=2)
    lf_full, lf_gqa = layer_flops(full, 10), layer_flops(gqa, 10)
    assert lf_gqa.qkv < lf_full.qkv
    assert lf_gqa.attn_scores == lf_full.attn_scores
    assert lf_gqa.attn_apply == lf_full.attn_apply


def test_known_architecture_per_token_linear_flops():
    qwen = load_model_profile("qwen2-7b")
    lf = layer_flops(qwen, 1)
    assert lf.qkv + lf.out_proj + lf.mlp == 466_092_032
    assert lf.attn_scores + lf.attn_apply == 14_336  # at n=1
    vic = load_model_profile("vicuna-7b-v1_5")
    lv = layer_flops(vic, 1)
    assert lv.qkv + lv.out_proj + lv.mlp == 404_750_336


def test_pipeline_flops_constant_schedule_equals_multiples():
    per = pipeline_flops(TINY, [7, 7])
    assert len(per) == 2
    assert per[0].total == per[1].total == layer_flops(TINY, 7).total
    with pytest.raises(InputError):
        pipeline_flops(TINY, [7])


# --- overhead formulas -----------------------------------------------------------

def test_merge_overhead_hand_computed():
    # one halving iteration: n=4 -> target=2, dim=2
    want = (4 // 2) * ((4 + 1) // 2) * (2 * 2 + 3) + 4 * 2 * 2 + 2 * 2 * 2
    assert merge_overhead_flops(4, 2, 2) == want
    assert merge_overhead_flops(4, 4, 2) == 0  # already at target
    with pytest.raises(InputError):
        merge_overhead_flops(4, 5, 2)


def test_merge_overhead_iterates_to_target():
    # n=8 -> 2 with dim=1: first iteration merges 4, second merges 2
    it1 = (8 // 2) * ((8 + 1) // 2) * 5 + 8 * 2 + 4 * 2
    it2 = (4 // 2) * ((4 + 1) // 2) * 5 + 4 * 2 + 2 * 2
    assert merge_overhead_flops(8, 2, 1) == it1 + it2


def test_prune_overhead_hand_computed():
    sched = PruneSchedule(l1=1, l2=2, total_layers=2, base_visual_count=4)
    # layer 1: count=4, +1 text => n=5 ; layer 2: count=0, +1 => n=1
    want = (PRUNE_FLOPS_PER_ATTN_ELEMENT * TINY.heads * 25
            + math.ceil(5 * math.log2(5)))
    want += PRUNE_FLOPS_PER_ATTN_ELEMENT * TINY.heads * 1 + 0  # n=1: no sort
    assert prune_overhead_flops(TINY, sched, text_tokens=1) == want


def test_prune_overhead_disabled_is_zero():
    sched = PruneSchedule.disabled(2, 100)
    assert prune_overhead_flops(TINY, sched, text_tokens=50) == 0


# --- roofline latency ------------------------------------------------------------

def test_compute_bound_vs_memory_bound():
    compute_hw = HardwareProfile(name="c", peak_flops=1.0,
                                 memory_bandwidth=1e18)
    memory_hw = HardwareProfile(name="m", peak_flops=1e18,
                                memory_bandwidth=1.0)
    geo = Geometry(frames=1, tokens_per_frame=4, text_tokens=0)
    rep_c = pipeline_cost(TINY, compute_hw, geo)
    rep_m = pipeline_cost(TINY, memory_hw, geo)
    # compute-bound: seconds == FLOPs / peak exactly
    assert rep_c.llm_ms == pytest.approx(rep_c.llm_flops * 1e3, rel=1e-12)
    # memory-bound: seconds == bytes / bandwidth
    weight_bytes = TINY.weight_params_per_layer * TINY.bytes_per_weight
    act_bytes = 4 * TINY.hidden_dim * 2 * TINY.bytes_per_weight
    want_ms = TINY.layers * (weight_bytes + act_bytes) * 1e3
    assert rep_m.llm_ms == pytest.approx(want_ms, rel=1e-12)


def test_empty_layers_cost_nothing():
    geo = Geometry(frames=1, tokens_per_frame=8, text_tokens=0)
    rep = pipeline_cost(TINY, HW, geo, prune_l1=1, prune_l2=1)
    # step schedule drops everything at layer 1; no text: layer 2 is empty
    assert rep.per_layer[1].tokens == 0
    lf0 = layer_flops(TINY, 0)
    assert lf0.total == 0


# --- full-pipeline report ---------------------------------------------------------

def test_pipeline_cost_structure_and_totals():
    geo = Geometry(frames=2, tokens_per_frame=8, text_tokens=3)
    rep = pipeline_cost(TINY, HW, geo, merge_ratio=0.5, prune_l1=1, prune_l2=2)
    n1 = 2 * scope_target(8, 0.5)
    sched = PruneSchedule(1, 2, TINY.layers, n1)
    want_counts = [c + 3 for c in sched.retained_counts()]
    assert [lf.tokens for lf in rep.per_layer] == want_counts
    assert rep.llm_flops == sum(lf.total for lf in rep.per_layer)
    assert rep.total_flops == rep.llm_flops + rep.merge_overhead + \
        rep.prune_overhead
    assert rep.prefill_ms == rep.llm_ms + rep.overhead_ms
    assert rep.merge_overhead == merge_overhead_flops(16, n1,
                                                      TINY.hidden_dim)
    assert rep.prune_overhead == prune_overhead_flops(TINY, sched, 3)
    assert rep.config_id == "r0.5-l1-2"
    assert rep.l1 == 1 and rep.l2 == 2


def test_pipeline_cost_disabled_prune_and_merge():
    geo = Geometry(frames=2, tokens_per_frame=8, text_tokens=3)
    rep = pipeline_cost(TINY, HW, geo)
    assert rep.l1 == 0 and rep.l2 == 0
    assert rep.prune_overhead == 0
    assert rep.merge_overhead == 0  # ratio 1.0: target == count
    assert [lf.tokens for lf in rep.per_layer] == [19, 19]
    assert rep.config_id == "r1"


def test_pipeline_cost_temporal_target():
    geo = Geometry(frames=4, tokens_per_frame=5, text_tokens=0)
    rep_sp = pipeline_cost(TINY, HW, geo, merge_ratio=0.5)
    rep_tm = pipeline_cost(TINY, HW, geo, merge_ratio=0.5,
                           merge_mode="temporal")
    assert rep_sp.per_layer[0].tokens == 4 * scope_target(5, 0.5)
    assert rep_tm.per_layer[0].tokens == scope_target(20, 0.5)


def test_merge_dim_controls_overhead_width():
    geo_narrow = Geometry(frames=1, tokens_per_frame=16, text_tokens=0,
                          merge_dim=8)
    geo_default = Geometry(frames=1, tokens_per_frame=16, text_tokens=0)
    rep_n = pipeline_cost(TINY, HW, geo_narrow, merge_ratio=0.5)
    rep_d = pipeline_cost(TINY, HW, geo_default, merge_ratio=0.5)
    assert rep_n.merge_overhead == merge_overhead_flops(16, 8, 8)
    assert rep_d.merge_overhead == merge_overhead_flops(16, 8,
                                                        TINY.hidden_dim)


def test_pipeline_cost_validation():
    geo = Geometry(frames=1, tokens_per_frame=4, text_tokens=0)
    with pytest.raises(InputError):
        pipeline_cost(TINY, HW, geo, merge_ratio=0.0)
    with pytest.raises(InputError):
        pipeline_cost(TINY, HW, geo, merge_mode="sideways")
    with pytest.raises(InputError):
        Geometry(frames=0, tokens_per_frame=4, text_tokens=0)
    with pytest.raises(InputError):
        Geometry(frames=1, tokens_per_frame=4, text_tokens=-1)


def test_csv_row_and_jsonable():
    geo = Geometry(frames=2, tokens_per_frame=8, text_tokens=3)
    rep = pipeline_cost(TINY, HW, geo, merge_ratio=0.5, prune_l1=1,
                        prune_l2=2, config_id="demo")
    row = rep.csv_row()
    assert len(row) == len(CostReport.CSV_HEADER)
    assert row[0] == "demo"
    assert float(row[5]) == pytest.approx(rep.total_flops / 1e12, rel=1e-5)
    payload = json.loads(json.dumps(rep.to_jsonable()))
    assert payload["total_flops"] == rep.total_flops
    assert payload["per_layer"][0]["tokens"] == rep.per_layer[0].tokens
    assert payload["prefill_ms"] == rep.prefill_ms


@given(n=st.integers(0, 300))
@settings(max_examples=60, deadline=None)
def test_layer_total_matches_closed_form(n):
    lf = layer_flops(TINY, n)
    d, m = 4, 8
    linear = 2 * n * d * (d + 2 * 1 * 4) + 2 * n * d * d + 2 * n * d * m * 3
    quad = 2 * 2 * n * n * 1 * 4
    assert lf.total == linear + quad


# --- profiles ---------------------------------------------------------------------

def test_builtin_profiles_load_and_validate():
    qwen = load_model_profile("qwen2-7b")
    assert (qwen.layers, qwen.hidden_dim, qwen.heads, qwen.kv_heads) == \
        (28, 3584, 28, 4)
    assert qwen.mlp_dim == 18944 and qwen.mlp_matrices == 3
    vic = load_model_profile("vicuna-7b-v1_5")
    assert (vic.layers, vic.hidden_dim, vic.heads, vic.kv_heads) == \
        (32, 4096, 32, 32)
    hw = load_hardware_profile("a100")
    assert hw.peak_flops == 312e12
    assert hw.memory_bandwidth == 2.0e12


def test_profile_env_dir_override(tmp_path, monkeypatch):
    data = {"name": "custom", "layers": 2, "hidden_dim": 8, "heads": 2,
            "kv_heads": 1, "head_dim": 4, "mlp_dim": 16, "mlp_matrices": 2,
            "bytes_per_weight": 2}
    (tmp_path / "custom.json").write_text(json.dumps(data))
    monkeypatch.setenv("AIM_PROFILE_DIR", str(tmp_path))
    prof = load_model_profile("custom")
    assert prof.hidden_dim == 8 and prof.mlp_matrices == 2


def test_profile_explicit_path_and_editability(tmp_path):
    data = {"name": "edit-me", "layers": 2, "hidden_dim": 8, "heads": 2,
            "kv_heads": 2, "head_dim": 4, "mlp_dim": 16, "mlp_matrices": 3,
            "bytes_per_weight": 2}
    path = tmp_path / "edit.json"
    path.write_text(json.dumps(data))
    first = load_model_profile(str(path))
    assert first.mlp_dim == 16
    data["mlp_dim"] = 32
    path.write_text(json.dumps(data))
    second = load_model_profile(str(path))
    assert second.mlp_dim == 32
    assert layer_flops(second, 1).mlp == 2 * layer_flops(first, 1).mlp


def test_profile_rejects_unknown_and_invalid(tmp_path):
    base = {"name": "bad", "layers": 2, "hidden_dim": 8, "heads": 2,
            "kv_heads": 1, "head_dim": 4, "mlp_dim": 16, "mlp_matrices": 3,
            "bytes_per_weight": 2}
    bad1 = dict(base, zaps=1)
    p1 = tmp_path / "b1.json"
    p1.write_text(json.dumps(bad1))
    with pytest.raises(InputError):
        load_model_profile(str(p1))
    bad2 = dict(base, head_dim=5)  # heads*head_dim != hidden_dim
    p2 = tmp_path / "b2.json"
    p2.write_text(json.dumps(bad2))
    with pytest.raises(InputError):
        load_model_profile(str(p2))
    with pytest.raises(InputError):
        load_model_profile("no-such-profile")
    hw_bad = {"name": "h", "peak_flops": 1e12, "memory_bandwidth": 1e12,
              "watts": 300}
    p3 = tmp_path / "hw.json"
    p3.write_text(json.dumps(hw_bad))
    with pytest.raises(InputError):
        load_hardware_profile(str(p3))


def test_model_profile_validation():
    with pytest.raises(InputError):
        ModelProfile(name="x", layers=1, hidden_dim=8, heads=2, kv_heads=4,
                     head_dim=4, mlp_dim=16, mlp_matrices=3,
                     bytes_per_weight=2)  # kv_heads > heads
    with pytest.raises(InputError):
        ModelProfile(name="x", layers=1, hidden_dim=8, heads=2, kv_heads=1,
                     head_dim=4, mlp_dim=16, mlp_matrices=4,
                     bytes_per_weight=2)
    with pytest.raises(InputError):
        ModelProfile(name="x", layers=1, hidden_dim=8, heads=2, kv_heads=1,
                     head_dim=4, mlp_dim=16, mlp_matrices=3,
                     bytes_per_weight=2, excludes_vocab_projection=False)
    with pytest.raises(InputError):
        HardwareProfile(name="x", peak_flops=0.0, memory_bandwidth=1.0)
