"""Declarative rules that turn metrics into teacher-facing insights with evidence."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import UnknownMetricInRule
from .evidence import COMPARATORS, Evidence, compare

SEVERITIES = ("info", "notice", "concern")
REPORT_SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class MetricValue:
    value: float | None
    sample_range: tuple | None = None
    event_refs: tuple = ()

    def to_dict(self) -> dict:
        return {"value": self.value,
                "sample_range": list(self.sample_range) if self.sample_range else None,
                "event_refs": list(self.event_refs)}

    @classmethod
    def from_dict(cls, d) -> "MetricValue":
        rng = d.get("sample_range")
        return cls(d.get("value"), tuple(rng) if rng else None, tuple(d.get("event_refs", ())))


def metric_values(suite, dwell) -> dict:
    """Flat name -> MetricValue namespace that rules may reference."""
    span = tuple(suite.session_span)
    target_refs = tuple(e.event_ref for e in suite.episodes)
    focus = suite.focus_loss_episodes
    focus_range = (focus[0][0], focus[-1][0] + focus[-1][1]) if focus else span
    return {
        "sustained_attention_score": MetricValue(suite.sustained_attention_score, span, target_refs),
        "expectancy_rate": MetricValue(suite.expectancy_rate, span, tuple(suite.anticipated_refs)),
        "inhibitory_control_score": MetricValue(suite.inhibitory_control_score, span,
                                                tuple(suite.inhibition_lapse_refs)),
        "focus_loss_count": MetricValue(len(focus), focus_range),
        "focus_loss_total_ms": MetricValue(suite.focus_loss_total_ms, focus_range),
        "left_fraction": MetricValue(dwell.left_fraction, span),
        "right_fraction": MetricValue(dwell.right_fraction, span),
        "dominant_quadrant_fraction": MetricValue(dwell.dominant_quadrant_fraction, span),
        "aoi_fraction": MetricValue(dwell.aoi_fraction, span),
    }


@dataclass(frozen=True)
class Rule:
    code: str
    metric: str
    comparator: str
    threshold: float
    severity: str
    narrative: str
    version: str = "1"

    def to_dict(self) -> dict:
        return {"code": self.code, "metric": self.metric, "comparator": self.comparator,
                "threshold": self.threshold, "severity": self.severity,
                "narrative": self.narrative, "version": self.version}


def parse_rules(data) -> list:
    rules = []
    for item in data:
        rule = Rule(
            code=str(item["code"]),
            metric=str(item["metric"]),
            comparator=str(item["comparator"]),
            threshold=item["threshold"],
            severity=str(item.get("severity", "notice")),
            narrative=str(item.get("narrative", "{metric} is {value} ({comparator} {threshold}).")),
            version=str(item.get("version", "1")),
        )
        if rule.comparator not in COMPARATORS:
            raise ValueError(f"rule {rule.code}: unknown comparator {rule.comparator!r}")
        if rule.severity not in SEVERITIES:
            raise ValueError(f"rule {rule.code}: unknown severity {rule.severity!r}")
        rules.append(rule)
    codes = [r.code for r in rules]
    if len(set(codes)) != len(codes):
        raise ValueError("rule codes must be unique")
    return sorted(rules, key=lambda r: r.code)


def load_rules(path=None) -> list:
    if path is None:
        text = resources.files("gazeinsight").joinpath("data/default_rules.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_rules(json.loads(text))


def rules_fingerprint(rules) -> str:
    blob = json.dumps([r.to_dict() for r in rules], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def fmt_number(value) -> str:
    return f"{value:g}"


@dataclass(frozen=True)
class Insight:
    code: str
    severity: str
    narrative: str
    evidence: tuple
    rule_version: str

    def to_dict(self) -> dict:
        return {"code": self.code, "severity": self.severity, "narrative": self.narrative,
                "evidence": [e.to_dict() for e in self.evidence], "rule_version": self.rule_version}


def derive_insights(values: dict, rules) -> list:
    """Fire each rule at most once; absent metric values never fire."""
    for rule in rules:
        if rule.metric not in values:
            raise UnknownMetricInRule(f"rule {rule.code} references unknown metric {rule.metric!r}")
    insights = []
    for rule in sorted(rules, key=lambda r: r.code):
        mv = values[rule.metric]
        if not compare(mv.value, rule.comparator, rule.threshold):
            continue
        evidence = Evidence(rule.metric, mv.value, rule.comparator, rule.threshold,
                            mv.sample_range, tuple(mv.event_refs))
        narrative = rule.narrative.format(
            value=fmt_number(mv.value), threshold=fmt_number(rule.threshold),
            metric=rule.metric, comparator=rule.comparator,
        )
        insights.append(Insight(rule.code, rule.severity, narrative, (evidence,),
                                rule.version))
    return insights


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render_report(insights, metrics: dict, meta: dict):
    """Build (markdown, json_text) for one session.

    ``metrics`` is the metrics document written by the pipeline; ``meta``
    holds pseudonym, engine_config_hash, rules_version and extras. Nothing
    time-of-run dependent goes in, so repeated renders are byte-identical.
    """
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "participant_pseudonym": meta["participant_pseudonym"],
        "engine_config_hash": meta["engine_config_hash"],
        "rules_version": meta["rules_version"],
        "metrics": metrics,
        "insights": [i.to_dict() for i in insights],
    }
    if "cluster_ranking" in meta:
        doc["cluster_ranking"] = meta["cluster_ranking"]
    return _render_markdown(doc), _canonical_json(doc)


def _cell(v) -> str:
    if v is None or v == "absent":
        return "absent"
    if isinstance(v, float):
        return fmt_number(v)
    return str(v)


def _render_markdown(doc) -> str:
    m = doc["metrics"]
    suite = m.get("suite", {})
    dwell = m.get("dwell", {})
    lines = [
        "# Session attention report",
        "",
        f"- Participant: `{doc['participant_pseudonym']}`",
        f"- Engine config: `{doc['engine_config_hash']}`",
        f"- Rules version: `{doc['rules_version']}`",
        "",
        "## Metrics",
        "",
        "| metric | value |",
        "|---|---|",
    ]
    for name in ("sustained_attention_score", "expectancy_rate", "inhibitory_control_score"):
        lines.append(f"| {name} | {_cell(suite.get(name))} |")
    lines.append(f"| focus_loss_episodes | {len(suite.get('focus_loss_episodes', []))} |")
    for name in ("left_fraction", "right_fraction", "dominant_quadrant", "dominant_quadrant_fraction",
                 "total_ms", "invalid_ms"):
        lines.append(f"| {name} | {_cell(dwell.get(name))} |")
    if "cluster_ranking" in doc:
        lines += ["", f"Gaze clusters: the participant {doc['cluster_ranking']}."]
    lines += ["", "## Insights", ""]
    if not doc["insights"]:
        lines.append("No flags raised.")
    for ins in doc["insights"]:
        lines += [f"### {ins['code']} ({ins['severity']})", "", ins["narrative"], "",
                  "| metric | value | comparator | threshold | range | events |",
                  "|---|---|---|---|---|---|"]
        for ev in ins["evidence"]:
            rng = ev.get("sample_range")
            rng_text = f"{_cell(rng[0])} to {_cell(rng[1])} ms" if rng else ""
            refs = ", ".join(ev.get("event_refs", []))
            lines.append(f"| {ev['metric_name']} | {_cell(ev['value'])} | {ev['comparator']} | "
                         f"{_cell(ev['threshold'])} | {rng_text} | {refs} |")
        lines += ["", f"Rule version: {ins['rule_version']}", ""]
    lines += ["", "Metric definitions are engine operationalizations, listed in the JSON report for audit."]
    return "\n".join(lines).rstrip() + "\n"
