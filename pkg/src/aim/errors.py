"""Exception types shared across the engine.

The split matters to the CLI: InputError subclasses map to exit code 2,
InfeasibleBudgetError to exit code 3, anything else to 1.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for every error raised deliberately by this package."""


class InputError(EngineError, ValueError):
    """Bad input: shapes, preconditions, malformed files, invalid config."""


class ShapeMismatchError(InputError):
    def __init__(self, op: str, left: tuple, right: tuple):
        self.op, self.left, self.right = op, left, right
        super().__init__(f"{op}: incompatible shapes {left} and {right}")


class NonFiniteError(InputError):
    def __init__(self, where: str):
        super().__init__(f"{where}: non-finite value encountered")


class FullyMaskedRowError(InputError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"softmax: row {row} is fully masked")


class ZeroNormEmbeddingError(InputError):
    def __init__(self, token_id: int):
        self.token_id = token_id
        super().__init__(f"cosine similarity undefined: token {token_id} has zero norm")


class TokenFileError(InputError):
    def __init__(self, path: str, reason: str):
        self.path, self.reason = path, reason
        super().__init__(f"{path}: {reason}")


class InfeasibleBudgetError(EngineError):
    """No candidate fits the budget; carries the cheapest one found."""

    def __init__(self, budget: float, budget_kind: str, cheapest_config: dict,
                 cheapest_cost: float):
        self.budget = budget
        self.budget_kind = budget_kind
        self.cheapest_config = cheapest_config
        self.cheapest_cost = cheapest_cost
        super().__init__(
            f"no configuration fits budget {budget:g} {budget_kind}; "
            f"cheapest candidate {cheapest_config} costs {cheapest_cost:g}"
        )
