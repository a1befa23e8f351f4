"""Adaptive multi-modal inference engine.

Pipeline: similarity-based visual-token merging before the decoder,
attention-graph (PageRank) token pruning inside it, an analytic
FLOPs/latency cost model, and a budget-constrained configuration planner.
"""

__version__ = "0.1.0"

from aim.costmodel import (  # noqa: E402
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
from aim.errors import (  # noqa: E402
    EngineError,
    FullyMaskedRowError,
    InfeasibleBudgetError,
    InputError,
    NonFiniteError,
    ShapeMismatchError,
    TokenFileError,
    ZeroNormEmbeddingError,
)
from aim.merge import (  # noqa: E402
    MergeConfig,
    MergeEvent,
    MergeTrace,
    merge_step,
    merge_to_ratio,
    scope_target,
)
from aim.planner import (  # noqa: E402
    Candidate,
    CandidateGrid,
    Plan,
    default_grid,
    search_config,
    sweep,
)
from aim.prune import (  # noqa: E402
    AttentionSnapshot,
    ImportanceScores,
    head_average,
    importance_scores,
    select_retained,
)
from aim.schedule import PruneSchedule  # noqa: E402
from aim.simengine import (  # noqa: E402
    PrefillResult,
    PruneOptions,
    ToyModel,
    plain_forward,
    run_prefill,
)
from aim.tokens import (  # noqa: E402
    SequenceState,
    TokenMatrix,
    concat_sequence,
    read_token_file,
    split_sequence,
    synthesize_tokens,
    write_token_file,
)

__all__ = [
    "__version__",
    "AttentionSnapshot", "Candidate", "CandidateGrid", "CostReport",
    "EngineError", "FullyMaskedRowError", "Geometry", "HardwareProfile",
    "ImportanceScores", "InfeasibleBudgetError", "InputError", "MergeConfig",
    "MergeEvent", "MergeTrace", "ModelProfile", "NonFiniteError", "Plan",
    "PrefillResult", "PruneOptions", "PruneSchedule", "SequenceState",
    "ShapeMismatchError", "TokenFileError", "TokenMatrix", "ToyModel",
    "ZeroNormEmbeddingError", "concat_sequence", "head_average",
    "importance_scores", "layer_flops", "load_hardware_profile",
    "load_model_profile", "merge_overhead_flops", "merge_step",
    "merge_to_ratio", "default_grid", "pipeline_cost", "pipeline_flops",
    "plain_forward", "prune_overhead_flops", "read_token_file", "run_prefill",
    "scope_target", "search_config", "select_retained", "split_sequence",
    "sweep", "synthesize_tokens", "write_token_file",
]
