"""Piecewise-linear retention schedule for progressive in-decoder pruning.

Retention ratio at decoder layer l (1-based):

    r(l) = 1                                for l <  l1
    r(l) = 1 - (l - l1) / (l2 - l1)         for l1 <= l <= l2   (l1 < l2)
    r(l) = 0                                for l >  l2

l1 == l2 degenerates to a step: keep everything before l1, drop all visual
tokens from l1 on (the drop-all-at-layer-K baseline).  Retained counts are
cumulative against the post-merge count N1 (count_l = ceil(N1 * r(l))), not
multiplicative per layer.  l1 > total_layers disables pruning; l2 =
total_layers + 1 means the schedule never reaches zero inside the stack.

"Pruned at layer l" applies to the layer's output: layer l computes
attention over the layer-(l-1) retained set, then its output rows are cut
down to count_l.
"""

from __future__ import annotations

from dataclasses import dataclass

from aim.errors import InputError


@dataclass(frozen=True)
class PruneSchedule:
    l1: int
    l2: int
    total_layers: int
    base_visual_count: int

    def __post_init__(self):
        if self.total_layers < 1:
            raise InputError("total_layers must be >= 1")
        if not 1 <= self.l1 <= self.l2 <= self.total_layers + 1:
            raise InputError(
                f"need 1 <= l1 <= l2 <= total_layers + 1; got "
                f"l1={self.l1} l2={self.l2} layers={self.total_layers}")
        if self.base_visual_count < 0:
            raise InputError("base_visual_count must be >= 0")

    @classmethod
    def disabled(cls, total_layers: int, base_visual_count: int) -> "PruneSchedule":
        return cls(total_layers + 1, total_layers + 1, total_layers,
                   base_visual_count)

    @property
    def is_disabled(self) -> bool:
        return self.l1 > self.total_layers

    def retention_ratio(self, layer: int) -> float:
        if not 1 <= layer <= self.total_layers:
            raise InputError(
                f"layer {layer} outside 1..{self.total_layers}")
        if layer < self.l1:
            return 1.0
        if self.l1 == self.l2:
            return 0.0
        if layer > self.l2:
            return 0.0
        return (self.l2 - layer) / (self.l2 - self.l1)

    def retained_count(self, layer: int) -> int:
        """ceil(N1 * r(layer)), computed in exact integer arithmetic."""
        if not 1 <= layer <= self.total_layers:
            raise InputError(
                f"layer {layer} outside 1..{self.total_layers}")
        n1 = self.base_visual_count
        if layer < self.l1:
            return n1
        if self.l1 == self.l2 or layer > self.l2:
            return 0
        num = n1 * (self.l2 - layer)
        den = self.l2 - self.l1
        return -((-num) // den)  # ceil for non-negative num

    def retained_counts(self) -> list:
        return [self.retained_count(l) for l in range(1, self.total_layers + 1)]
