"""End-to-end session analysis and artifact writing."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import adaptation, clustering, gaze, ingest, insights, metrics
from .errors import EmptySession, MalformedHeader, PrivacyRefusal

log = logging.getLogger(__name__)

# substring scans on very short ids would match ordinary numbers
MIN_SCANNABLE_ID = 4


@dataclass
class EngineConfig:
    k: int = clustering.DEFAULT_K
    seed: int = 42
    cluster_on: str = "samples"  # or "fixations"
    dispersion_px: float = gaze.DEFAULT_DISPERSION_PX
    min_fixation_ms: float = gaze.DEFAULT_MIN_FIXATION_MS
    visibility_timeout_ms: float = ingest.DEFAULT_VISIBILITY_TIMEOUT_MS
    expectancy_window_ms: float = metrics.DEFAULT_EXPECTANCY_WINDOW_MS
    focus_gap_ms: float = metrics.DEFAULT_FOCUS_GAP_MS
    response_window_ms: float = metrics.DEFAULT_RESPONSE_WINDOW_MS
    policy: adaptation.AdaptationPolicy = field(default_factory=adaptation.AdaptationPolicy)
    rules: list = field(default_factory=insights.load_rules)

    @property
    def metric_settings(self) -> metrics.MetricSettings:
        return metrics.MetricSettings(self.expectancy_window_ms, self.focus_gap_ms, self.response_window_ms)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("policy", "rules")}
        d["policy"] = self.policy.to_dict()
        d["rules"] = [r.to_dict() for r in self.rules]
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_session(session_path, meta_path=None, salt=None, aois=None, screen=None, delimiter=","):
    """Parse a session file, replacing the participant id by its salted pseudonym.

    Returns (session, raw_participant_id or None). The raw id is only handed
    back so callers can scan outputs for leaks; it is never stored on the session.
    """
    raw_id = None
    width, height = ingest.DEFAULT_SCREEN
    pseudonym = ""
    if meta_path is not None:
        meta = ingest.load_metadata(Path(meta_path))
        raw_id = meta.participant_id
        width, height = meta.screen_width, meta.screen_height
        if salt is None:
            raise PrivacyRefusal("a pseudonymization salt is required when participant metadata is given")
        pseudonym = ingest.pseudonymize(raw_id, salt)
    if screen is not None:
        width, height = screen
    options = ingest.FormatOptions(delimiter=delimiter, screen_width=width, screen_height=height,
                                   participant_pseudonym=pseudonym, aois=aois)
    try:
        session = ingest.parse_session(Path(session_path).read_bytes(), options)
    except EmptySession as exc:
        raise EmptySession(f"{session_path}: {exc}", exc.ledger) from exc
    except MalformedHeader as exc:
        raise MalformedHeader(f"{session_path}: {exc}") from exc
    return session, raw_id


@dataclass
class Analysis:
    session: ingest.SessionLog
    aois: list
    config: EngineConfig
    events: list
    stimuli: list
    labels: list
    fixations: list
    consistency: gaze.ConsistencyReport | None
    cluster: clustering.ClusterModel | None
    cluster_points: list
    dwell: metrics.DwellReport
    suite: metrics.MetricSuite
    values: dict
    insights: list
    signals: list

    @property
    def session_span(self) -> tuple:
        return tuple(self.suite.session_span)


class _Point:
    __slots__ = ("timestamp_ms", "x", "y")

    def __init__(self, t, x, y):
        self.timestamp_ms, self.x, self.y = t, x, y


def prepare(session, aois, config: EngineConfig):
    """Events with derived disappearances, visibility windows and fixations."""
    end = ingest.session_end_ms(session.samples)
    events = ingest.derive_disappearances(session.events, config.visibility_timeout_ms, end)
    stimuli = gaze.visibility_windows(events, aois, end)
    fixations = gaze.detect_fixations(session.samples, config.dispersion_px, config.min_fixation_ms)
    return events, stimuli, fixations


def analyze_session(session, aois, config: EngineConfig | None = None) -> Analysis:
    config = config or EngineConfig()
    events, stimuli, fixations = prepare(session, aois, config)
    labels = gaze.label_samples(session, aois, stimuli)
    consistency = gaze.consistency_report(session, labels)

    if config.cluster_on == "fixations":
        points = [_Point(f.start_ms, f.centroid_x, f.centroid_y) for f in fixations]
    else:
        points = [s for s in session.samples if s.valid]
    cluster = clustering.cluster_gaze(points, config.k, config.seed) if len(points) >= config.k else None

    dwell = metrics.dwell_analysis(session.samples, labels, aois, session.screen_width)
    focus_aois = gaze.effective_aois(aois, stimuli)
    suite = metrics.compute_metrics(session.samples, stimuli, fixations, focus_aois, config.metric_settings)
    values = insights.metric_values(suite, dwell)
    found = insights.derive_insights(values, config.rules)
    signals = adaptation.replay_batch(stimuli, fixations, suite.session_span, config.policy)
    return Analysis(session, aois, config, events, stimuli, labels, fixations, consistency,
                    cluster, points, dwell, suite, values, found, signals)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def metrics_document(a: Analysis) -> dict:
    return {
        "participant_pseudonym": a.session.participant_pseudonym,
        "engine_config_hash": a.config.fingerprint(),
        "fixation_count": len(a.fixations),
        "suite": a.suite.to_dict(),
        "dwell": a.dwell.to_dict(),
        "metric_values": {k: v.to_dict() for k, v in sorted(a.values.items())},
    }


def report_meta(a: Analysis) -> dict:
    meta = {
        "participant_pseudonym": a.session.participant_pseudonym,
        "engine_config_hash": a.config.fingerprint(),
        "rules_version": insights.rules_fingerprint(a.config.rules),
    }
    if a.cluster is not None:
        meta["cluster_ranking"] = clustering.ranking_statement(a.cluster.rank_order)
    return meta


def aoi_overlay(a: Analysis) -> dict:
    aois = gaze.effective_aois(a.aois, a.stimuli)
    return {
        "screen": {"width": a.session.screen_width, "height": a.session.screen_height},
        "aois": [x.to_dict() for x in aois],
        "fixations": [
            {"start_ms": f.start_ms, "duration_ms": f.duration_ms,
             "x": f.centroid_x, "y": f.centroid_y,
             "aoi_ids": list(gaze.aoi_hits(f.centroid_x, f.centroid_y, aois))}
            for f in a.fixations
        ],
    }


def build_artifacts(a: Analysis) -> dict:
    """name -> text for every output file except the manifest."""
    mdoc = metrics_document(a)
    md, report_json = insights.render_report(a.insights, mdoc, report_meta(a))
    validation = {"parse": a.session.ledger.to_dict() if a.session.ledger else None,
                  "consistency": a.consistency.to_dict() if a.consistency else None}
    files = {
        "labeled_samples.csv": gaze.labels_csv(a.labels),
        "fixations.csv": gaze.fixations_csv(a.fixations, gaze.effective_aois(a.aois, a.stimuli)),
        "aoi_overlay.json": _json(aoi_overlay(a)),
        "metrics.json": _json(mdoc),
        "metrics.csv": metrics.metrics_csv(a.suite, a.dwell),
        "report.json": report_json,
        "report.md": md,
        "adaptation.jsonl": adaptation.signals_jsonl(a.signals),
        "validation.json": _json(validation),
        "config.json": _json(a.config.to_dict()),
    }
    if a.cluster is not None:
        files["clusters.csv"] = clustering.cluster_csv(a.cluster_points, a.cluster)
        files["clusters.json"] = _json(clustering.cluster_summary(a.cluster))
    return files


def check_no_identity(files: dict, raw_id) -> None:
    if not raw_id:
        return
    if len(raw_id) < MIN_SCANNABLE_ID:
        log.warning("participant id too short for a meaningful leak scan")
        return
    for name, text in files.items():
        if raw_id in text:
            raise PrivacyRefusal(f"refusing to write {name}: it contains the raw participant id")


def write_files(out_dir, files: dict, raw_id=None) -> dict:
    """Write files plus manifest.json; returns the manifest."""
    check_no_identity(files, raw_id)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(files):
        data = files[name].encode("utf-8")
        (out / name).write_bytes(data)
        entries[name] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
    manifest = {"artifacts": entries}
    (out / "manifest.json").write_text(_json(manifest), encoding="utf-8")
    return manifest


def run_analysis(session_path, out_dir, meta_path=None, aoi_path=None, salt=None,
                 config: EngineConfig | None = None, screen=None, delimiter=",") -> dict:
    config = config or EngineConfig()
    aois = ingest.load_aoi_config(Path(aoi_path)) if aoi_path else []
    session, raw_id = load_session(session_path, meta_path, salt, aois, screen, delimiter)
    analysis = analyze_session(session, aois, config)
    return write_files(out_dir, build_artifacts(analysis), raw_id)
