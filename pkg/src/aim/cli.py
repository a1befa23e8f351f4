"""Command-line surface: batch analyses emitting JSON/CSV artifacts.

Subcommands
    gen-tokens   synthesize a token file (AIMT format)
    merge        merge a token file at a retention ratio, dump trace JSON
    simulate     run the desk-scale prefill pipeline, dump per-layer JSON
    cost         cost one full-scale configuration (JSON + CSV row)
    sweep        cost every candidate in a grid -> sweep.csv / sweep.json
    plan         pick the best config under a FLOPs or latency budget

Global flags: --config <json> (defaults for any flag), --seed <u64>,
--out <dir>.  $AIM_PROFILE_DIR adds a model/hardware profile search path.
Exit codes: 0 ok, 1 runtime error, 2 bad input, 3 infeasible budget.

JSON artifacts carry full float precision plus a config echo and the tool
version; CSV is for humans and plotting, floats at 6 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from aim import __version__
from aim.costmodel import (
    CostReport,
    Geometry,
    load_hardware_profile,
    load_model_profile,
    pipeline_cost,
)
from aim.errors import EngineError, InfeasibleBudgetError, InputError
from aim.merge import MergeConfig, merge_to_ratio, scope_target
from aim.planner import (
    DEFAULT_RATIOS,
    CandidateGrid,
    load_quality_table,
    default_grid,
    search_config,
    sweep,
)
from aim.prune import DIRECTIONS
from aim.schedule import PruneSchedule
from aim.simengine import PruneOptions, ToyModel, run_prefill
from aim.tokens import read_token_file, synthesize_tokens, write_token_file

TEXT_SEED_OFFSET = 1000003  # text tokens come from seed + this offset


# --- config plumbing ---------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InputError(f"config {path}: top level must be an object")
    return data


def _cfg(config: dict, section: str, key: str, flag_value, default):
    """Priority: explicit flag > config file > built-in default."""
    if flag_value is not None:
        return flag_value
    sec = config.get(section, {})
    if not isinstance(sec, dict):
        raise InputError(f"config section {section!r} must be an object")
    if key in sec:
        return sec[key]
    return default


def _ensure_out(out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _write_json(path: str, payload: dict) -> None:
    wrapped = {"tool": "aim", "version": __version__}
    wrapped.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(wrapped, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _geometry_from(config: dict, args) -> Geometry:
    return Geometry(
        frames=int(_cfg(config, "geometry", "frames", args.frames, 32)),
        tokens_per_frame=int(_cfg(config, "geometry", "tokens_per_frame",
                                  args.tokens_per_frame, 196)),
        text_tokens=int(_cfg(config, "geometry", "text_tokens",
                             args.text_tokens, 100)),
        merge_dim=_cfg(config, "geometry", "merge_dim", args.merge_dim, None),
    )


def _merge_params(config: dict, args) -> tuple:
    ratio = float(_cfg(config, "merge", "ratio", args.merge_ratio, 1.0))
    mode = _cfg(config, "merge", "mode", args.merge_mode, "spatial")
    return ratio, mode


def _schedule_params(config: dict, args) -> tuple:
    l1 = int(_cfg(config, "schedule", "l1", args.l1, 0))
    l2 = int(_cfg(config, "schedule", "l2", args.l2, 0))
    if l1 < 0 or l2 < 0:
        raise InputError("l1/l2 must be >= 0 (0 disables pruning)")
    if l1 == 0:
        return 0, 0
    if l2 < l1:
        raise InputError(f"need l1 <= l2; got ({l1}, {l2})")
    return l1, l2


def _profiles_from(config: dict, args) -> tuple:
    model_name = args.model if args.model is not None else \
        config.get("model_profile", "qwen2-7b")
    hw_name = args.hardware if args.hardware is not None else \
        config.get("hardware_profile", "a100")
    return load_model_profile(model_name), load_hardware_profile(hw_name)


def _seed_from(config: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", 0))


# --- subcommands -------------------------------------------------------------

def cmd_gen_tokens(args, config: dict) -> int:
    seed = _seed_from(config, args)
    sim = config.get("sim", {})
    frames = int(args.frames if args.frames is not None
                 else sim.get("frames", 4))
    tpf = int(args.tokens_per_frame if args.tokens_per_frame is not None
              else sim.get("tokens_per_frame", 16))
    dim = int(args.dim if args.dim is not None else sim.get("dim", 32))
    redundancy = float(args.redundancy if args.redundancy is not None
                       else sim.get("redundancy", 0.5))
    tokens = synthesize_tokens(seed=seed, frames=frames, tokens_per_frame=tpf,
                               dim=dim, redundancy=redundancy)
    out_path = args.output or os.path.join(_ensure_out(args.out), "tokens.aimt")
    write_token_file(out_path, tokens)
    print(f"wrote {out_path}: {tokens.count} tokens x {tokens.dim} dims, "
          f"{len(tokens.frame_spans)} frame(s), seed {seed}")
    return 0


def cmd_merge(args, config: dict) -> int:
    tokens = read_token_file(args.input)
    ratio, mode = _merge_params(config, args)
    merged, trace = merge_to_ratio(tokens, MergeConfig(ratio, mode))
    out_path = args.output or os.path.join(_ensure_out(args.out), "merged.aimt")
    write_token_file(out_path, merged)
    trace_path = args.trace or os.path.join(_ensure_out(args.out),
                                            "merge_trace.json")
    _write_json(trace_path, {
        "config": {"input": args.input, "ratio": ratio, "mode": mode},
        "input_count": tokens.count,
        "output_count": merged.count,
        "trace": trace.to_jsonable(),
    })
    print(f"merged {tokens.count} -> {merged.count} tokens "
          f"(ratio {ratio:g}, {mode}); wrote {out_path} and {trace_path}")
    return 0


def _sim_params(config: dict, args) -> dict:
    sim = dict(config.get("sim", {}))
    out = {
        "frames": int(args.frames if args.frames is not None
                      else sim.get("frames", 4)),
        "tokens_per_frame": int(args.tokens_per_frame
                                if args.tokens_per_frame is not None
                                else sim.get("tokens_per_frame", 16)),
        "text_tokens": int(args.text_tokens if args.text_tokens is not None
                           else sim.get("text_tokens", 8)),
        "dim": int(args.dim if args.dim is not None else sim.get("dim", 32)),
        "layers": int(args.layers if args.layers is not None
                      else sim.get("layers", 6)),
        "heads": int(args.heads if args.heads is not None
                     else sim.get("heads", 4)),
        "mlp_dim": int(args.mlp_dim if args.mlp_dim is not None
                       else sim.get("mlp_dim", 64)),
        "redundancy": float(sim.get("redundancy", 0.5)),
    }
    return out


def cmd_simulate(args, config: dict) -> int:
    seed = _seed_from(config, args)
    sim = _sim_params(config, args)
    ratio, mode = _merge_params(config, args)
    l1, l2 = _schedule_params(config, args)
    options = PruneOptions(
        direction=_cfg(config, "prune", "direction", args.direction,
                       "received"),
        iterations=int(_cfg(config, "prune", "iterations", args.iterations, 1)),
        until_convergence=bool(_cfg(config, "prune", "until_convergence",
                                    True if args.until_convergence else None,
                                    False)),
        prune_text=bool(_cfg(config, "prune", "prune_text",
                             True if args.prune_text else None, False)),
        causal_debias=bool(_cfg(config, "prune", "causal_debias",
                                True if args.causal_debias else None, False)),
    )
    if options.direction not in DIRECTIONS:
        raise InputError(f"direction {options.direction!r} not in {DIRECTIONS}")

    if args.visual_file:
        visual = read_token_file(args.visual_file)
    else:
        visual = synthesize_tokens(seed=seed, frames=sim["frames"],
                                   tokens_per_frame=sim["tokens_per_frame"],
                                   dim=sim["dim"],
                                   redundancy=sim["redundancy"])
    if args.text_file:
        text = read_token_file(args.text_file)
    else:
        text = synthesize_tokens(seed=seed + TEXT_SEED_OFFSET, frames=1,
                                 tokens_per_frame=sim["text_tokens"],
                                 dim=sim["dim"], redundancy=0.0)
    model = ToyModel.build(seed=seed, layers=sim["layers"], dim=sim["dim"],
                           heads=sim["heads"], mlp_dim=sim["mlp_dim"])

    merge_config = MergeConfig(ratio, mode)
    if mode == "spatial":
        n1 = sum(scope_target(b - a, ratio) for a, b in visual.frame_spans)
    else:
        n1 = scope_target(visual.count, ratio)
    if l1 >= 1:
        schedule = PruneSchedule(l1, l2, model.layers, n1)
    else:
        schedule = PruneSchedule.disabled(model.layers, n1)

    result = run_prefill(visual, text, model, merge_config=merge_config,
                         schedule=schedule, options=options)

    out_path = args.output or os.path.join(_ensure_out(args.out),
                                           "prefill.json")
    _write_json(out_path, {
        "config": {
            "seed": seed, "sim": sim, "merge": {"ratio": ratio, "mode": mode},
            "schedule": {"l1": l1, "l2": l2},
            "prune": {
                "direction": options.direction,
                "iterations": options.iterations,
                "until_convergence": options.until_convergence,
                "prune_text": options.prune_text,
                "causal_debias": options.causal_debias,
            },
        },
        "result": result.to_jsonable(include_hidden=not args.no_hidden),
    })

    print(f"{'layer':>5} {'visual':>7} {'text':>5} {'total':>6}")
    for rec in result.per_layer:
        print(f"{rec.layer:>5} {rec.visual_count:>7} {rec.text_count:>5} "
              f"{rec.visual_count + rec.text_count:>6}")
    print(f"wrote {out_path}")
    return 0


def cmd_cost(args, config: dict) -> int:
    profile, hardware = _profiles_from(config, args)
    geometry = _geometry_from(config, args)
    ratio, mode = _merge_params(config, args)
    l1, l2 = _schedule_params(config, args)
    report = pipeline_cost(profile, hardware, geometry, merge_ratio=ratio,
                           prune_l1=l1, prune_l2=l2, merge_mode=mode)
    out_path = args.output or os.path.join(_ensure_out(args.out), "cost.json")
    _write_json(out_path, {
        "config": {
            "model_profile": profile.name,
            "hardware_profile": hardware.name,
            "geometry": {
                "frames": geometry.frames,
                "tokens_per_frame": geometry.tokens_per_frame,
                "text_tokens": geometry.text_tokens,
                "merge_dim": geometry.merge_dim,
            },
            "merge": {"ratio": ratio, "mode": mode},
            "schedule": {"l1": l1, "l2": l2},
        },
        "report": report.to_jsonable(),
    })
    print(",".join(CostReport.CSV_HEADER))
    print(",".join(report.csv_row()))
    print(f"wrote {out_path}")
    return 0


def _grid_from_file(path: str) -> tuple:
    """Grid JSON -> (CandidateGrid, model name, hardware name)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"grid {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"grid {path}: invalid JSON ({exc})") from exc
    geo = data.get("geometry")
    if not isinstance(geo, dict):
        raise InputError(f"grid {path}: needs a geometry object")
    geometry = Geometry(
        frames=int(geo.get("frames", 32)),
        tokens_per_frame=int(geo.get("tokens_per_frame", 196)),
        text_tokens=int(geo.get("text_tokens", 100)),
        merge_dim=geo.get("merge_dim"),
    )
    grid = CandidateGrid(
        geometry=geometry,
        ratios=tuple(data.get("ratios", DEFAULT_RATIOS)),
        l1_values=tuple(data.get("l1_values", (0,))),
        l2_values=tuple(data.get("l2_values", (0,))),
        merge_mode=data.get("merge_mode", "spatial"),
    )
    return grid, data.get("model_profile"), data.get("hardware_profile")


def _grid_for(args, config: dict) -> tuple:
    if args.grid:
        grid, model_name, hw_name = _grid_from_file(args.grid)
        profile = load_model_profile(model_name or args.model or
                                     config.get("model_profile", "qwen2-7b"))
        hardware = load_hardware_profile(hw_name or args.hardware or
                                         config.get("hardware_profile", "a100"))
        return grid, profile, hardware
    profile, hardware = _profiles_from(config, args)
    geometry = _geometry_from(config, args)
    return default_grid(geometry), profile, hardware


def cmd_sweep(args, config: dict) -> int:
    grid, profile, hardware = _grid_for(args, config)
    reports = sweep(grid, profile, hardware)
    out_dir = _ensure_out(args.out)
    csv_path = args.output or os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CostReport.CSV_HEADER)
        for rep in reports:
            writer.writerow(rep.csv_row())
    json_path = os.path.splitext(csv_path)[0] + ".json"
    _write_json(json_path, {
        "config": {
            "model_profile": profile.name,
            "hardware_profile": hardware.name,
            "grid": {
                "ratios": list(grid.ratios),
                "l1_values": list(grid.l1_values),
                "l2_values": list(grid.l2_values),
                "merge_mode": grid.merge_mode,
            },
        },
        "reports": [rep.to_jsonable() for rep in reports],
    })
    print(f"wrote {csv_path} ({len(reports)} rows) and {json_path}")
    return 0


def cmd_plan(args, config: dict) -> int:
    grid, profile, hardware = _grid_for(args, config)
    if (args.budget_tflops is None) == (args.budget_ms is None):
        raise InputError("give exactly one of --budget-tflops / --budget-ms")
    quality = load_quality_table(args.quality_table) \
        if args.quality_table else None
    plan = search_config(grid, profile, hardware,
                         budget_tflops=args.budget_tflops,
                         budget_ms=args.budget_ms, quality_table=quality)
    out_path = args.output or os.path.join(_ensure_out(args.out), "plan.json")
    payload = plan.to_jsonable()
    payload["config"] = {"model_profile": profile.name,
                         "hardware_profile": hardware.name}
    _write_json(out_path, payload)
    c = plan.chosen
    sched = f"({c.l1}, {c.l2})" if c.l1 else "disabled"
    print(f"budget {plan.budget:g} {plan.budget_kind}: "
          f"chose ratio {c.ratio:g}, pruning {sched} -> "
          f"{plan.report.total_flops / 1e12:.6g} TFLOPs, "
          f"{plan.report.prefill_ms:.6g} ms "
          f"({len(plan.ranked)} feasible candidate(s))")
    print(f"wrote {out_path}")
    return 0


# --- argument parsing --------------------------------------------------------

def _add_geometry_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--tokens-per-frame", type=int, default=None)
    p.add_argument("--text-tokens", type=int, default=None)
    p.add_argument("--merge-dim", type=int, default=None,
                   help="width at which merge overhead is costed")


def _add_merge_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--merge-ratio", type=float, default=None,
                   help="retention ratio in (0, 1]")
    p.add_argument("--merge-mode", choices=("spatial", "temporal"),
                   default=None)


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--l1", type=int, default=None,
                   help="first pruning layer; 0 disables pruning")
    p.add_argument("--l2", type=int, default=None,
                   help="layer at which visual tokens reach zero")


def _add_profile_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default=None,
                   help="model profile name or JSON path")
    p.add_argument("--hardware", default=None,
                   help="hardware profile name or JSON path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aim",
        description="Adaptive multi-modal inference engine: token merging, "
                    "progressive pruning, cost modeling, budget planning.")
    parser.add_argument("--version", action="version",
                        version=f"aim {__version__}")
    parser.add_argument("--config", default=None,
                        help="JSON file supplying defaults for any flag")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed")
    parser.add_argument("--out", default=".",
                        help="directory for output artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tokens", help="synthesize a token file")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--tokens-per-frame", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--redundancy", type=float, default=None,
                   help="fraction of tokens near cluster centroids, in [0,1]")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_gen_tokens)

    p = sub.add_parser("merge", help="merge a token file at a ratio")
    p.add_argument("--input", required=True, help="AIMT token file")
    p.add_argument("--ratio", dest="merge_ratio", type=float, default=None)
    p.add_argument("--mode", dest="merge_mode",
                   choices=("spatial", "temporal"), default=None)
    p.add_argument("--output", default=None, help="merged AIMT path")
    p.add_argument("--trace", default=None, help="merge trace JSON path")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("simulate", help="run the desk-scale prefill pipeline")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--tokens-per-frame", type=int, default=None)
    p.add_argument("--text-tokens", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--mlp-dim", type=int, default=None)
    _add_merge_flags(p)
    _add_schedule_flags(p)
    p.add_argument("--direction", choices=DIRECTIONS, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--until-convergence", action="store_true")
    p.add_argument("--prune-text", action="store_true")
    p.add_argument("--causal-debias", action="store_true")
    p.add_argument("--visual-file", default=None,
                   help="AIMT file instead of synthesized visual tokens")
    p.add_argument("--text-file", default=None,
                   help="AIMT file instead of synthesized text tokens")
    p.add_argument("--no-hidden", action="store_true",
                   help="omit final hidden states from the JSON")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cost", help="cost one full-scale configuration")
    _add_profile_flags(p)
    _add_geometry_flags(p)
    _add_merge_flags(p)
    _add_schedule_flags(p)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("sweep", help="cost every candidate in a grid")
    p.add_argument("--grid", default=None, help="grid JSON file")
    _add_profile_flags(p)
    _add_geometry_flags(p)
    p.add_argument("--output", default=None, help="CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plan", help="pick the best config under a budget")
    p.add_argument("--grid", default=None, help="grid JSON file")
    _add_profile_flags(p)
    _add_geometry_flags(p)
    p.add_argument("--budget-tflops", type=float, default=None)
    p.add_argument("--budget-ms", type=float, default=None)
    p.add_argument("--quality-table", default=None,
                   help="CSV (ratio,l1,l2,score) overriding the default "
                        "quality ordering")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_plan)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except InfeasibleBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (EngineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
