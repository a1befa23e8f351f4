"""Budget-constrained search over (retention ratio, l1, l2) configurations.

Every grid candidate is costed analytically, the feasible set is filtered by
a FLOPs or prefill-latency budget, and the best feasible candidate is chosen
under a quality ordering.  The default ordering is an explicit heuristic
proxy for task accuracy — keep more tokens, start pruning later, finish
pruning later — with lower cost breaking ties; it can be overridden by a
user-supplied quality table (CSV: ratio, l1, l2, score) mapping configs to
measured scores.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from aim.costmodel import (
    CostReport,
    Geometry,
    HardwareProfile,
    ModelProfile,
    pipeline_cost,
)
from aim.errors import InfeasibleBudgetError, InputError

DEFAULT_RATIOS = (1.0, 0.5, 0.25, 0.125, 0.063, 0.031, 0.016)

_DISABLED_RANK = 1 << 30  # pruning disabled == pruning later than any layer


@dataclass(frozen=True)
class Candidate:
    """One configuration; l1 == 0 means pruning disabled (l2 then 0 too)."""

    ratio: float
    l1: int
    l2: int

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise InputError(f"ratio {self.ratio} outside (0, 1]")
        if self.l1 < 0 or self.l2 < 0:
            raise InputError("l1/l2 must be >= 0")
        if self.l1 == 0 and self.l2 != 0:
            raise InputError("disabled pruning is encoded as l1 == l2 == 0")
        if self.l1 > 0 and self.l2 < self.l1:
            raise InputError(f"need l1 <= l2; got ({self.l1}, {self.l2})")

    @property
    def key(self) -> tuple:
        return (round(self.ratio, 9), self.l1, self.l2)

    def quality_rank(self) -> tuple:
        """Sort key fragment: smaller tuple == higher heuristic quality."""
        l1 = self.l1 if self.l1 > 0 else _DISABLED_RANK
        l2 = self.l2 if self.l1 > 0 else _DISABLED_RANK
        return (-self.ratio, -l1, -l2)


@dataclass(frozen=True)
class CandidateGrid:
    geometry: Geometry
    ratios: tuple = DEFAULT_RATIOS
    l1_values: tuple = (0,)  # 0 entries contribute a pruning-disabled candidate
    l2_values: tuple = (0,)
    merge_mode: str = "spatial"

    def __post_init__(self):
        if not self.ratios:
            raise InputError("grid needs at least one ratio")
        for r in self.ratios:
            if not 0.0 < r <= 1.0:
                raise InputError(f"grid ratio {r} outside (0, 1]")
        if list(self.ratios) != sorted(self.ratios, reverse=True):
            raise InputError("grid ratios must be sorted descending")
        if len(set(self.ratios)) != len(self.ratios):
            raise InputError("grid ratios must be distinct")
        if not self.l1_values or not self.l2_values:
            raise InputError("grid needs l1 and l2 values (0 = disabled)")
        if any(v < 0 for v in self.l1_values + self.l2_values):
            raise InputError("l1/l2 grid values must be >= 0")

    def candidates(self) -> list:
        """Cross product in grid order, invalid (l1 > l2) pairs skipped."""
        out, seen = [], set()
        for ratio in self.ratios:
            for l1 in self.l1_values:
                if l1 == 0:
                    pairs = [(0, 0)]
                else:
                    pairs = [(l1, l2) for l2 in self.l2_values if l2 >= l1]
                for p1, p2 in pairs:
                    cand = Candidate(ratio, p1, p2)
                    if cand.key not in seen:
                        seen.add(cand.key)
                        out.append(cand)
        if not out:
            raise InputError("grid contains no valid (l1, l2) pair")
        return out


def default_grid(geometry: Geometry) -> CandidateGrid:
    """The published adaptive-inference ladder: each ratio with pruning off
    or with the default (14, 22) schedule."""
    return CandidateGrid(geometry=geometry, ratios=DEFAULT_RATIOS,
                         l1_values=(0, 14), l2_values=(22,))


def evaluate_grid(grid: CandidateGrid, profile: ModelProfile,
                  hardware: HardwareProfile) -> list:
    """[(Candidate, CostReport)] in grid order; deterministic."""
    out = []
    for cand in grid.candidates():
        report = pipeline_cost(profile, hardware, grid.geometry,
                               merge_ratio=cand.ratio, prune_l1=cand.l1,
                               prune_l2=cand.l2, merge_mode=grid.merge_mode)
        out.append((cand, report))
    return out


def sweep(grid: CandidateGrid, profile: ModelProfile,
          hardware: HardwareProfile) -> list:
    """One CostReport per candidate, in grid order."""
    return [report for _, report in evaluate_grid(grid, profile, hardware)]


@dataclass(frozen=True)
class Plan:
    chosen: Candidate
    report: CostReport
    ranked: tuple  # ((Candidate, CostReport), ...) feasible, best first
    budget: float
    budget_kind: str  # "tflops" | "ms"

    def to_jsonable(self) -> dict:
        return {
            "budget": self.budget,
            "budget_kind": self.budget_kind,
            "chosen": {"ratio": self.chosen.ratio, "l1": self.chosen.l1,
                       "l2": self.chosen.l2},
            "chosen_report": self.report.to_jsonable(),
            "feasible": [
                {"ratio": c.ratio, "l1": c.l1, "l2": c.l2,
                 "total_flops": r.total_flops, "prefill_ms": r.prefill_ms}
                for c, r in self.ranked
            ],
        }


def _budget_cost(report: CostReport, kind: str) -> float:
    if kind == "tflops":
        return report.total_flops / 1e12
    return report.prefill_ms


def search_config(grid: CandidateGrid, profile: ModelProfile,
                  hardware: HardwareProfile, budget_tflops: float = None,
                  budget_ms: float = None, quality_table: dict = None) -> Plan:
    """Best feasible candidate under the quality ordering.

    Exactly one of budget_tflops / budget_ms must be given.  quality_table
    maps Candidate.key -> score (higher better, missing -> -inf); without
    it the default ordering applies.  Raises InfeasibleBudgetError carrying
    the cheapest candidate when nothing fits.
    """
    if (budget_tflops is None) == (budget_ms is None):
        raise InputError("give exactly one of budget_tflops / budget_ms")
    kind = "tflops" if budget_tflops is not None else "ms"
    budget = budget_tflops if kind == "tflops" else budget_ms
    if budget <= 0:
        raise InputError("budget must be positive")

    evaluated = evaluate_grid(grid, profile, hardware)
    feasible = [(c, r) for c, r in evaluated
                if _budget_cost(r, kind) <= budget]
    if not feasible:
        cheap_c, cheap_r = min(evaluated,
                               key=lambda cr: _budget_cost(cr[1], kind))
        raise InfeasibleBudgetError(
            budget=budget, budget_kind=kind,
            cheapest_config={"ratio": cheap_c.ratio, "l1": cheap_c.l1,
                             "l2": cheap_c.l2},
            cheapest_cost=_budget_cost(cheap_r, kind))

    if quality_table is None:
        def sort_key(cr):
            cand, rep = cr
            return cand.quality_rank() + (rep.total_flops,)
    else:
        def sort_key(cr):
            cand, rep = cr
            score = quality_table.get(cand.key, float("-inf"))
            return (-score,) + cand.quality_rank() + (rep.total_flops,)

    ranked = sorted(feasible, key=sort_key)
    chosen, report = ranked[0]
    return Plan(chosen=chosen, report=report, ranked=tuple(ranked),
                budget=budget, budget_kind=kind)


def load_quality_table(path: str) -> dict:
    """CSV (ratio, l1, l2, score) -> {Candidate.key: score}."""
    table = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"quality table {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        needed = {"ratio", "l1", "l2", "score"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise InputError(
                f"quality table {path}: need columns {sorted(needed)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (round(float(row["ratio"]), 9), int(row["l1"]),
                       int(row["l2"]))
                score = float(row["score"])
            except (TypeError, ValueError) as exc:
                raise InputError(
                    f"quality table {path} line {lineno}: {exc}") from exc
            if key in table:
                raise InputError(
                    f"quality table {path} line {lineno}: duplicate config {key}")
            table[key] = score
    return table
