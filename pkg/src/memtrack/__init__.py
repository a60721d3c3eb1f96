__version__ = "0.1.0"

from .core import FeatureVec, FrameInput, MaskGeom, MemoryBank, MemoryEntry, Observation, validate_frame
from .errors import MemtrackError
from .policy import PolicyConfig, PolicyKind, apply_updates, decide, group_score, per_target_score
from .tracker import RunRecord, Tracker, TrackerConfig, TrackingMode, run, run_one_by_one
from .scenario import ScenarioConfig, archetype, generate, perceive, simulate


# Lazy imports keep pandas and the file formats out of plain tracking use
def get_metrics():
    """Lazy import for the evaluation kernels"""
    from . import metrics
    return metrics


def get_records():
    """Lazy import for config parsing and run-record I/O"""
    from . import records
    return records


__all__ = [
    "__version__",
    "FeatureVec",
    "FrameInput",
    "MaskGeom",
    "MemoryBank",
    "MemoryEntry",
    "Observation",
    "validate_frame",
    "MemtrackError",
    "PolicyConfig",
    "PolicyKind",
    "apply_updates",
    "decide",
    "group_score",
    "per_target_score",
    "RunRecord",
    "Tracker",
    "TrackerConfig",
    "TrackingMode",
    "run",
    "run_one_by_one",
    "ScenarioConfig",
    "archetype",
    "generate",
    "perceive",
    "simulate",
    "get_metrics",
    "get_records",
]
