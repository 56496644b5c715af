"""Attention metric suite: dwell, sustained attention, expectancy, focus loss, inhibitory control.

Time model: each sample holds from its own timestamp until the next sample's;
the last sample holds for the median inter-sample interval. Stimulus windows
are half-open [appear, disappear); fixations are closed [start, start+duration].
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, field

from .ingest import DISTRACTOR, TARGET, median_interval

DEFAULT_EXPECTANCY_WINDOW_MS = 500.0
DEFAULT_FOCUS_GAP_MS = 2000.0
DEFAULT_RESPONSE_WINDOW_MS = 1000.0

DEFINITION_VERSION = "engine definition v1"
DEFINITIONS = {
    "sustained_attention": f"{DEFINITION_VERSION}: a target appearance is attended when a fixation whose "
                           "centroid lies in the stimulus AoI overlaps its visibility window; "
                           "score = attended / target appearances",
    "stimuli_expectancy": f"{DEFINITION_VERSION}: an appearance is anticipated when gaze is inside the "
                          "stimulus AoI at any instant of the window before it appears; "
                          "rate = anticipated / appearances",
    "loss_of_focus": f"{DEFINITION_VERSION}: maximal periods with gaze invalid, off-screen or outside every "
                     "AoI while a stimulus is visible, lasting at least the gap threshold",
    "inhibitory_control": f"{DEFINITION_VERSION}: share of distractor appearances with no fixation in the "
                          "distractor AoI during the response window (capped at disappearance)",
}


def sample_durations(samples) -> list:
    if not samples:
        return []
    tail = median_interval(samples)
    durations = [b.timestamp_ms - a.timestamp_ms for a, b in zip(samples, samples[1:])]
    durations.append(tail)
    return durations


@dataclass
class DwellReport:
    per_aoi_ms: dict  # inclusive: overlapping AoIs each get the full time
    per_aoi_exclusive_ms: dict  # highest-priority hit only
    per_quadrant_ms: dict
    non_aoi_ms: float
    offscreen_ms: float
    invalid_ms: float
    total_ms: float
    left_ms: float
    right_ms: float

    @property
    def valid_ms(self) -> float:
        return self.left_ms + self.right_ms

    @property
    def left_fraction(self) -> float | None:
        return self.left_ms / self.valid_ms if self.valid_ms > 0 else None

    @property
    def right_fraction(self) -> float | None:
        return self.right_ms / self.valid_ms if self.valid_ms > 0 else None

    @property
    def dominant_side(self) -> str:
        if self.left_ms > self.right_ms:
            return "left"
        if self.right_ms > self.left_ms:
            return "right"
        return "balanced"

    @property
    def dominant_quadrant(self) -> str | None:
        if not self.per_quadrant_ms or self.valid_ms <= 0:
            return None
        return max(sorted(self.per_quadrant_ms), key=lambda q: self.per_quadrant_ms[q])

    @property
    def dominant_quadrant_fraction(self) -> float | None:
        q = self.dominant_quadrant
        if q is None or self.valid_ms <= 0:
            return None
        return self.per_quadrant_ms[q] / self.valid_ms

    @property
    def aoi_fraction(self) -> float | None:
        if self.valid_ms <= 0:
            return None
        return sum(self.per_aoi_exclusive_ms.values()) / self.valid_ms

    def to_dict(self) -> dict:
        return {
            "per_aoi_ms": dict(sorted(self.per_aoi_ms.items())),
            "per_aoi_exclusive_ms": dict(sorted(self.per_aoi_exclusive_ms.items())),
            "per_quadrant_ms": dict(sorted(self.per_quadrant_ms.items())),
            "non_aoi_ms": self.non_aoi_ms,
            "offscreen_ms": self.offscreen_ms,
            "invalid_ms": self.invalid_ms,
            "total_ms": self.total_ms,
            "left_ms": self.left_ms,
            "right_ms": self.right_ms,
            "left_fraction": self.left_fraction,
            "right_fraction": self.right_fraction,
            "dominant_side": self.dominant_side,
            "dominant_quadrant": self.dominant_quadrant,
            "dominant_quadrant_fraction": self.dominant_quadrant_fraction,
        }


def dwell_analysis(samples, labels, aois, screen_width) -> DwellReport:
    """Attribute each sample's hold time to AoIs, quadrants and screen halves.

    ``labels`` must come from label_samples on the same samples (their
    aoi_hits are already priority-ordered).
    """
    durations = sample_durations(samples)
    by_index = {lab.sample_index: lab for lab in labels}
    per_aoi = {a.aoi_id: 0.0 for a in aois}
    exclusive = {a.aoi_id: 0.0 for a in aois}
    per_quadrant = {}
    non_aoi = offscreen = invalid = left = right = 0.0
    half = screen_width / 2
    for i, (s, d) in enumerate(zip(samples, durations)):
        lab = by_index.get(i)
        if lab is None:
            invalid += d
            continue
        per_quadrant[lab.quadrant] = per_quadrant.get(lab.quadrant, 0.0) + d
        if s.x < half:
            left += d
        else:
            right += d
        if lab.aoi_hits:
            for aoi_id in lab.aoi_hits:
                per_aoi[aoi_id] += d
            exclusive[lab.aoi_hits[0]] += d
        else:
            non_aoi += d
            if lab.offscreen:
                offscreen += d
    return DwellReport(per_aoi, exclusive, per_quadrant, non_aoi, offscreen, invalid,
                       sum(durations), left, right)


@dataclass(frozen=True)
class AttentionEpisode:
    event_ref: str
    object_id: str
    appear_ms: float
    disappear_ms: float
    aoi_id: str
    time_to_first_fixation_ms: float | None
    dwell_on_target_ms: float
    attended: bool

    def to_dict(self) -> dict:
        return {
            "event_ref": self.event_ref, "object_id": self.object_id,
            "appear_ms": self.appear_ms, "disappear_ms": self.disappear_ms, "aoi_id": self.aoi_id,
            "time_to_first_fixation_ms": self.time_to_first_fixation_ms,
            "dwell_on_target_ms": self.dwell_on_target_ms, "attended": self.attended,
        }


def contacts(fixations, aoi, start_ms, end_ms) -> list:
    """Fixations with centroid in ``aoi`` that overlap [start_ms, end_ms)."""
    if end_ms <= start_ms:
        return []
    return [f for f in fixations
            if f.start_ms < end_ms and f.end_ms >= start_ms and aoi.contains(f.centroid_x, f.centroid_y)]


def _ratio(hits, total):
    return hits / total if total else None


def sustained_attention(windows, fixations):
    """Returns (score or None, episodes) over target appearances."""
    episodes = []
    for w in windows:
        if w.event.role != TARGET:
            continue
        touching = contacts(fixations, w.aoi, w.start_ms, w.end_ms)
        if touching:
            first = min(max(f.start_ms, w.start_ms) for f in touching)
            ttff = first - w.start_ms
            dwell = sum(max(0.0, min(f.end_ms, w.end_ms) - max(f.start_ms, w.start_ms)) for f in touching)
        else:
            ttff, dwell = None, 0.0
        episodes.append(AttentionEpisode(w.event.ref, w.event.object_id, w.start_ms, w.end_ms,
                                         w.aoi.aoi_id, ttff, dwell, bool(touching)))
    return _ratio(sum(e.attended for e in episodes), len(episodes)), episodes


def stimuli_expectancy(windows, samples, window_ms=DEFAULT_EXPECTANCY_WINDOW_MS):
    """Returns (rate or None, refs of anticipated appearances)."""
    durations = sample_durations(samples)
    stamps = [s.timestamp_ms for s in samples]
    anticipated = []
    for w in windows:
        lo, hi = w.start_ms - window_ms, w.start_ms
        # the last sample at or before lo may still be holding inside the window
        i = max(bisect.bisect_right(stamps, lo) - 1, 0)
        for s, d in zip(samples[i:], durations[i:]):
            if s.timestamp_ms >= hi:
                break
            if d <= 0 or s.timestamp_ms + d <= lo:
                continue
            if s.valid and not s.offscreen and w.aoi.contains(s.x, s.y):
                anticipated.append(w.event.ref)
                break
    return _ratio(len(anticipated), len(windows)), anticipated


def _merge(intervals):
    merged = []
    for lo, hi in sorted(intervals):
        if hi <= lo:
            continue
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return merged


def _intersect(a, b):
    out, i, j = [], 0, 0
    while i < len(a) and j < len(b):
        lo, hi = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
        if lo < hi:
            out.append([lo, hi])
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def loss_of_focus(samples, windows, aois, gap_threshold_ms=DEFAULT_FOCUS_GAP_MS) -> list:
    """(start_ms, duration_ms) of each unfocused period while something is on screen."""
    durations = sample_durations(samples)
    off = []
    for s, d in zip(samples, durations):
        focused = s.valid and not s.offscreen and any(a.contains(s.x, s.y) for a in aois)
        if not focused:
            off.append((s.timestamp_ms, s.timestamp_ms + d))
    visible = _merge((w.start_ms, w.end_ms) for w in windows)
    periods = _merge(_intersect(_merge(off), visible))
    return [(lo, hi - lo) for lo, hi in periods if hi - lo >= gap_threshold_ms]


def inhibitory_control(windows, fixations, response_window_ms=DEFAULT_RESPONSE_WINDOW_MS):
    """Returns (score or None, refs of distractor appearances that drew a fixation)."""
    distractors = [w for w in windows if w.event.role == DISTRACTOR]
    lapses = [w.event.ref for w in distractors
              if contacts(fixations, w.aoi, w.start_ms, min(w.start_ms + response_window_ms, w.end_ms))]
    if not distractors:
        return None, lapses
    return 1.0 - len(lapses) / len(distractors), lapses


@dataclass
class MetricSettings:
    expectancy_window_ms: float = DEFAULT_EXPECTANCY_WINDOW_MS
    focus_gap_ms: float = DEFAULT_FOCUS_GAP_MS
    response_window_ms: float = DEFAULT_RESPONSE_WINDOW_MS


@dataclass
class MetricSuite:
    sustained_attention_score: float | None
    expectancy_rate: float | None
    focus_loss_episodes: list
    inhibitory_control_score: float | None
    episodes: list = field(default_factory=list)
    anticipated_refs: list = field(default_factory=list)
    inhibition_lapse_refs: list = field(default_factory=list)
    appearance_count: int = 0
    distractor_count: int = 0
    settings: MetricSettings = field(default_factory=MetricSettings)
    session_span: tuple = (0.0, 0.0)

    @property
    def focus_loss_total_ms(self) -> float:
        return sum(d for _, d in self.focus_loss_episodes)

    def to_dict(self) -> dict:
        return {
            "sustained_attention_score": _absent(self.sustained_attention_score),
            "expectancy_rate": _absent(self.expectancy_rate),
            "inhibitory_control_score": _absent(self.inhibitory_control_score),
            "focus_loss_episodes": [{"start_ms": s, "duration_ms": d} for s, d in self.focus_loss_episodes],
            "episodes": [e.to_dict() for e in self.episodes],
            "anticipated_refs": list(self.anticipated_refs),
            "inhibition_lapse_refs": list(self.inhibition_lapse_refs),
            "appearance_count": self.appearance_count,
            "distractor_count": self.distractor_count,
            "session_span_ms": list(self.session_span),
            "settings": {
                "expectancy_window_ms": self.settings.expectancy_window_ms,
                "focus_gap_ms": self.settings.focus_gap_ms,
                "response_window_ms": self.settings.response_window_ms,
            },
            "definitions": DEFINITIONS,
        }


def _absent(value):
    return "absent" if value is None else value


def compute_metrics(samples, windows, fixations, focus_aois, settings: MetricSettings | None = None) -> MetricSuite:
    settings = settings or MetricSettings()
    score, episodes = sustained_attention(windows, fixations)
    rate, anticipated = stimuli_expectancy(windows, samples, settings.expectancy_window_ms)
    focus = loss_of_focus(samples, windows, focus_aois, settings.focus_gap_ms)
    inhibition, lapses = inhibitory_control(windows, fixations, settings.response_window_ms)
    span = (samples[0].timestamp_ms, samples[-1].timestamp_ms + sample_durations(samples)[-1]) if samples else (0.0, 0.0)
    return MetricSuite(
        sustained_attention_score=score,
        expectancy_rate=rate,
        focus_loss_episodes=focus,
        inhibitory_control_score=inhibition,
        episodes=episodes,
        anticipated_refs=anticipated,
        inhibition_lapse_refs=lapses,
        appearance_count=len(windows),
        distractor_count=sum(1 for w in windows if w.event.role == DISTRACTOR),
        settings=settings,
        session_span=span,
    )


def metrics_csv(suite: MetricSuite, dwell: DwellReport) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["metric", "value"])
    rows = [
        ("sustained_attention_score", suite.sustained_attention_score),
        ("expectancy_rate", suite.expectancy_rate),
        ("inhibitory_control_score", suite.inhibitory_control_score),
        ("focus_loss_count", len(suite.focus_loss_episodes)),
        ("focus_loss_total_ms", suite.focus_loss_total_ms),
        ("appearance_count", suite.appearance_count),
        ("distractor_count", suite.distractor_count),
        ("total_ms", dwell.total_ms),
        ("invalid_ms", dwell.invalid_ms),
        ("non_aoi_ms", dwell.non_aoi_ms),
        ("left_fraction", dwell.left_fraction),
        ("right_fraction", dwell.right_fraction),
        ("dominant_quadrant_fraction", dwell.dominant_quadrant_fraction),
    ]
    for name, value in rows:
        out.writerow([name, "absent" if value is None else repr(value)])
    return buf.getvalue()
