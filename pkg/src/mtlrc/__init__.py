"""Local Rademacher complexity bounds and validation tools for multi-task learning."""

from .core import (
    ConfidenceParams,
    GraphOperator,
    HypothesisFamily,
    InvalidInput,
    LossSpec,
    PowerLawDecay,
    ProblemParams,
    TaskSpectra,
    build_graph_operator,
    complete_graph,
    dual_exponent,
    path_graph,
    power_law_spectra,
    tail_sum,
    tail_sum_power_law_bound,
)

__all__ = [
    "ConfidenceParams",
    "GraphOperator",
    "HypothesisFamily",
    "InvalidInput",
    "LossSpec",
    "PowerLawDecay",
    "ProblemParams",
    "TaskSpectra",
    "build_graph_operator",
    "complete_graph",
    "dual_exponent",
    "path_graph",
    "power_law_spectra",
    "tail_sum",
    "tail_sum_power_law_bound",
]

__version__ = "0.1.0"
