"""Eye-tracking analytics for serious-game sessions."""

from .adaptation import AdaptationPolicy, AdaptationSignal, replay_batch, stream_signals
from .clustering import ClusterModel, cluster_gaze, rank_clusters
from .gaze import Fixation, aoi_hits, detect_fixations, label_samples, quadrant_of
from .ingest import (
    AoiDefinition,
    GazeSample,
    SessionLog,
    StimulusEvent,
    derive_disappearances,
    parse_session,
    pseudonymize,
)
from .insights import Insight, derive_insights, render_report
from .pipeline import EngineConfig, analyze_session

__version__ = "0.1.0"

__all__ = [
    "AdaptationPolicy", "AdaptationSignal", "replay_batch", "stream_signals",
    "ClusterModel", "cluster_gaze", "rank_clusters",
    "Fixation", "aoi_hits", "detect_fixations", "label_samples", "quadrant_of",
    "AoiDefinition", "GazeSample", "SessionLog", "StimulusEvent",
    "derive_disappearances", "parse_session", "pseudonymize",
    "Insight", "derive_insights", "render_report",
    "EngineConfig", "analyze_session",
]
