"""Training-free, role-aware visual token pruning for video-language models."""

from .budget import BudgetVector, HyperParams, RoleQuota, allocate_budgets, partition_roles
from .errors import BudgetInfeasibleError, FormatError, ValidationError
from .graph import AttentionStack, MetricReport, evaluate_selection, propagate_evidence
from .pipeline import Strategy, run_baseline, run_bench, run_semvid
from .selector import Selection
from .synth import Scenario, ScenarioSpec, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "AttentionStack",
    "BudgetInfeasibleError",
    "BudgetVector",
    "FormatError",
    "HyperParams",
    "MetricReport",
    "RoleQuota",
    "Scenario",
    "ScenarioSpec",
    "Selection",
    "Strategy",
    "ValidationError",
    "allocate_budgets",
    "evaluate_selection",
    "generate_scenario",
    "partition_roles",
    "propagate_evidence",
    "run_baseline",
    "run_bench",
    "run_semvid",
]
