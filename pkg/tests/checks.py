"""Property checks shared by the unit tests and the acceptance suite.

Each check returns a list of violation strings (empty when the property holds),
so a fuzz loop can report every failing case rather than only the first.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import replace

from gazeinsight import adaptation, gaze, ingest, insights, metrics
from gazeinsight.adaptation import AdaptationPolicy
from gazeinsight.evidence import Evidence, reevaluate
from gazeinsight.pipeline import EngineConfig, analyze_session, prepare

from oracles import MsReplay, fixations_by_enumeration
from synth import metric_session


def check_fixations(samples, thr, min_dur) -> list:
    got = [(f.first_index, f.last_index, f.start_ms, f.duration_ms, f.centroid_x, f.centroid_y)
           for f in gaze.detect_fixations(samples, thr, min_dur)]
    want = fixations_by_enumeration(samples, thr, min_dur)
    if [g[:4] for g in got] != [w[:4] for w in want]:
        return [f"boundaries differ: got {[g[:4] for g in got]} want {[w[:4] for w in want]}"]
    bad = []
    for g, w in zip(got, want):
        if not (math.isclose(g[4], w[4], rel_tol=1e-9) and math.isclose(g[5], w[5], rel_tol=1e-9)):
            bad.append(f"centroid {g[4:]} != {w[4:]}")
    return bad


def check_dwell(session, aois, interval) -> list:
    labels = gaze.label_samples(session, aois)
    d = metrics.dwell_analysis(session.samples, labels, aois, session.screen_width)
    parts = sum(d.per_aoi_exclusive_ms.values()) + d.non_aoi_ms + d.invalid_ms
    # total duration measured independently: first timestamp to last timestamp plus the hold of the last sample
    ts = [s.timestamp_ms for s in session.samples]
    expected_total = ts[-1] - ts[0] + interval
    bad = []
    if abs(parts - d.total_ms) > interval:
        bad.append(f"parts {parts} vs total {d.total_ms}")
    if abs(d.total_ms - expected_total) > interval:
        bad.append(f"total {d.total_ms} vs span {expected_total}")
    if abs(d.left_ms + d.right_ms + d.invalid_ms - d.total_ms) > interval:
        bad.append("halves do not cover valid time")
    return bad


def _windows(session, aois, timeout):
    config = EngineConfig(visibility_timeout_ms=timeout)
    _, stimuli, fixations = prepare(session, aois, config)
    return stimuli, fixations


def check_metrics_oracle(session, aois, dt, settings=None, timeout=ingest.DEFAULT_VISIBILITY_TIMEOUT_MS) -> list:
    """Compare the four attention metrics with a per-millisecond replay; slack is one interval."""
    settings = settings or metrics.MetricSettings()
    stimuli, fixations = _windows(session, aois, timeout)
    focus_aois = gaze.effective_aois(aois, stimuli)
    suite = metrics.compute_metrics(session.samples, stimuli, fixations, focus_aois, settings)
    replay = MsReplay(session.samples, fixations)
    bad = []

    # sustained attention: per target appearance, contact and time to first fixation
    targets = [w for w in stimuli if w.event.role == ingest.TARGET]
    by_ref = {e.event_ref: e for e in suite.episodes}
    attended = 0
    for w in targets:
        fc = replay.first_contact(w.aoi, w.start_ms, w.end_ms)
        ep = by_ref[w.event.ref]
        attended += fc is not None
        if (fc is not None) != ep.attended:
            bad.append(f"attention {w.event.ref}: oracle {fc} engine {ep.attended}")
        elif fc is not None and abs((fc - w.start_ms) - ep.time_to_first_fixation_ms) > dt:
            bad.append(f"ttff {w.event.ref}: oracle {fc - w.start_ms} engine {ep.time_to_first_fixation_ms}")
    want = attended / len(targets) if targets else None
    if not _close(want, suite.sustained_attention_score):
        bad.append(f"sustained attention {suite.sustained_attention_score} != {want}")

    # expectancy
    anticipated = [w.event.ref for w in stimuli
                   if replay.anticipated(w.aoi, w.start_ms, settings.expectancy_window_ms)]
    if sorted(anticipated) != sorted(suite.anticipated_refs):
        bad.append(f"anticipated {suite.anticipated_refs} != {anticipated}")

    # loss of focus
    want_focus = replay.focus_loss([(w.start_ms, w.end_ms) for w in stimuli], focus_aois, settings.focus_gap_ms)
    got_focus = suite.focus_loss_episodes
    if len(want_focus) != len(got_focus):
        bad.append(f"focus episodes {got_focus} != {want_focus}")
    else:
        for (gs, gd), (ws, wd) in zip(got_focus, want_focus):
            if abs(gs - ws) > dt or abs(gd - wd) > dt:
                bad.append(f"focus episode ({gs},{gd}) vs ({ws},{wd})")

    # inhibitory control
    distractors = [w for w in stimuli if w.event.role == ingest.DISTRACTOR]
    lapses = [w.event.ref for w in distractors
              if replay.first_contact(w.aoi, w.start_ms,
                                      min(w.start_ms + settings.response_window_ms, w.end_ms)) is not None]
    want_ic = 1 - len(lapses) / len(distractors) if distractors else None
    if not _close(want_ic, suite.inhibitory_control_score) or sorted(lapses) != sorted(suite.inhibition_lapse_refs):
        bad.append(f"inhibitory control {suite.inhibitory_control_score} != {want_ic}")
    return bad


def _close(a, b):
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, abs_tol=1e-12)


def _suite(session, aois, settings, timeout=ingest.DEFAULT_VISIBILITY_TIMEOUT_MS):
    stimuli, fixations = _windows(session, aois, timeout)
    return metrics.compute_metrics(session.samples, stimuli, fixations,
                                   gaze.effective_aois(aois, stimuli), settings)


def check_monotonicity(session, aois, rng: random.Random) -> list:
    """Enlarging a window never makes the corresponding metric move the other way."""
    base = metrics.MetricSettings(expectancy_window_ms=rng.choice([100, 300, 500]),
                                  focus_gap_ms=rng.choice([200, 500, 1000, 2000]),
                                  response_window_ms=rng.choice([200, 500, 1000]))
    grow = rng.choice([1.5, 2, 4])
    a = _suite(session, aois, base)
    b = _suite(session, aois, replace(base, expectancy_window_ms=base.expectancy_window_ms * grow,
                                      response_window_ms=base.response_window_ms * grow,
                                      focus_gap_ms=base.focus_gap_ms * grow))
    bad = []
    if a.expectancy_rate is not None and b.expectancy_rate < a.expectancy_rate:
        bad.append("expectancy fell when its window grew")
    if not set(a.anticipated_refs) <= set(b.anticipated_refs):
        bad.append("anticipated set shrank")
    if a.inhibitory_control_score is not None and b.inhibitory_control_score > a.inhibitory_control_score:
        bad.append("inhibitory control rose when the response window grew")
    if len(b.focus_loss_episodes) > len(a.focus_loss_episodes) or b.focus_loss_total_ms > a.focus_loss_total_ms:
        bad.append("focus loss grew when the gap threshold grew")
    # a longer visibility timeout can only add contacts to target appearances
    t1 = rng.choice([500, 1000, 2000])
    c = _suite(session, aois, base, timeout=t1)
    d = _suite(session, aois, base, timeout=t1 * grow)
    if c.sustained_attention_score is not None and d.sustained_attention_score < c.sustained_attention_score:
        bad.append("sustained attention fell when visibility grew")
    return bad


def random_policy(rng: random.Random) -> AdaptationPolicy:
    return AdaptationPolicy(
        window_ms=float(rng.choice([500, 1000, 2000, 4000])),
        step_ms=float(rng.choice([100, 250, 500, 1000])),
        highlight_delay_ms=float(rng.choice([200, 500, 1500])),
        low_threshold=rng.choice([0.2, 0.3, 0.5]),
        low_windows=rng.randint(1, 3),
        high_threshold=rng.choice([0.5, 0.7, 0.85]),
        high_windows=rng.randint(1, 3),
        refractory_ms=float(rng.choice([0, 1000, 3000, 30000])),
    )


def random_rules(rng: random.Random) -> list:
    """Rules over every metric with random thresholds, so that firing varies across the corpus."""
    names = ["sustained_attention_score", "expectancy_rate", "inhibitory_control_score", "focus_loss_count",
             "focus_loss_total_ms", "left_fraction", "right_fraction", "dominant_quadrant_fraction",
             "aoi_fraction"]
    rules = []
    for i, name in enumerate(names):
        scale = 5 if name == "focus_loss_count" else 5000 if name.endswith("_ms") else 1
        rules.append({"code": f"R{i}", "metric": name, "comparator": rng.choice([">", ">=", "<", "<=", "=="]),
                      "threshold": round(rng.random() * scale, 2) if scale != 5 else rng.randint(0, 5),
                      "severity": "notice", "narrative": "{metric} {value} vs {threshold}"})
    return insights.parse_rules(rules)


def check_evidence(analysis) -> list:
    """Every emitted insight and signal must re-evaluate to 'fire' from its serialized evidence alone."""
    bad = []
    for ins in analysis.insights:
        record = json.loads(json.dumps(ins.to_dict()))
        if not reevaluate(record["evidence"]):
            bad.append(f"insight {ins.code} does not re-evaluate")
        for e in record["evidence"]:
            if str(e["value"]) not in record["narrative"] and insights.fmt_number(e["value"]) not in record["narrative"]:
                bad.append(f"insight {ins.code}: narrative lacks its value")
    # rules that did not fire must evaluate false on the metric they reference
    fired = {i.code for i in analysis.insights}
    for rule in analysis.config.rules:
        if rule.code in fired:
            continue
        mv = analysis.values[rule.metric]
        if Evidence(rule.metric, mv.value, rule.comparator, rule.threshold).holds():
            bad.append(f"rule {rule.code} held but did not fire")
    for sig in analysis.signals:
        record = json.loads(sig.to_json())
        if not reevaluate(record["reason"]):
            bad.append(f"signal {sig.kind}@{sig.timestamp_ms} does not re-evaluate")
    return bad


def check_stream_batch(session, aois, policy) -> list:
    config = EngineConfig(policy=policy)
    _, stimuli, fixations = prepare(session, aois, config)
    samples = session.samples
    span = (samples[0].timestamp_ms, ingest.session_end_ms(samples))
    streamed = adaptation.stream_signals(stimuli, fixations, span, policy)
    batch = adaptation.replay_batch(stimuli, fixations, span, policy)
    if [s.to_json() for s in streamed] != [s.to_json() for s in batch]:
        return [f"stream {len(streamed)} signals vs batch {len(batch)}"]
    return []


def fuzz_analysis(rng: random.Random, n=None):
    session, aois, dt = metric_session(rng, n)
    config = EngineConfig(policy=random_policy(rng), rules=random_rules(rng), k=rng.randint(1, 4))
    return analyze_session(session, aois, config), dt
