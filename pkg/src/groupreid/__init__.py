"""Multi-granularity group re-identification across camera views."""

from .config import MatcherConfig, PipelineConfig, load_config
from .datasets import SynthConfig, generate_synthetic, load_manifest, save_task
from .features import GroupGraph, build_group_graph, extract_person_descriptor
from .importance import ImportanceTable, group_importance
from .matcher import MatchOutcome, match_groups
from .pipeline import ReIdTask, evaluate, run_ablation, run_iterations

__all__ = [
    "GroupGraph", "ImportanceTable", "MatchOutcome", "MatcherConfig", "PipelineConfig",
    "ReIdTask", "SynthConfig", "build_group_graph", "evaluate", "extract_person_descriptor",
    "generate_synthetic", "group_importance", "load_config", "load_manifest", "match_groups",
    "run_ablation", "run_iterations", "save_task",
]
