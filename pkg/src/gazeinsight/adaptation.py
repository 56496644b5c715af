"""Game adaptation signals.

Two routes produce the same signal list: a sequential evaluator that consumes
a time-ordered stream of window/stimulus records (what a live game would tail),
and a batch replay computed directly over a whole session.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import OutOfOrderDelivery
from .evidence import Evidence
from .ingest import TARGET
from .metrics import contacts

HIGHLIGHT = "HighlightStimulus"
DIFFICULTY_UP = "DifficultyUp"
DIFFICULTY_DOWN = "DifficultyDown"

_KIND_RANK = {"window": 0, "stimulus": 1}


@dataclass(frozen=True)
class AdaptationPolicy:
    window_ms: float = 10_000.0
    step_ms: float = 2_000.0
    highlight_delay_ms: float = 1_500.0
    low_threshold: float = 0.3
    low_windows: int = 2
    high_threshold: float = 0.85
    high_windows: int = 3
    refractory_ms: float = 30_000.0
    version: str = "1"

    @classmethod
    def from_dict(cls, data) -> "AdaptationPolicy":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown policy field(s): {', '.join(sorted(unknown))}")
        policy = cls(**data)
        if policy.window_ms <= 0 or policy.step_ms <= 0:
            raise ValueError("window_ms and step_ms must be positive")
        if policy.low_windows < 1 or policy.high_windows < 1:
            raise ValueError("consecutive window counts must be >= 1")
        return policy

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AdaptationSignal:
    timestamp_ms: float
    kind: str
    target_aoi: str | None
    reason: tuple  # of Evidence

    def to_dict(self) -> dict:
        return {"timestamp_ms": self.timestamp_ms, "kind": self.kind, "target_aoi": self.target_aoi,
                "reason": [e.to_dict() for e in self.reason]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- stream items

@dataclass(frozen=True)
class MetricWindow:
    index: int
    start_ms: float
    end_ms: float
    score: float | None
    events: int
    attended: int
    event_refs: tuple = ()

    @property
    def time_ms(self) -> float:
        return self.end_ms

    kind = "window"


@dataclass(frozen=True)
class StimulusCheck:
    """Delivered at the highlight deadline of one target appearance."""

    time_ms: float
    event_ref: str
    object_id: str
    aoi_id: str
    appear_ms: float
    disappear_ms: float
    session_end_ms: float
    first_contact_ms: float | None

    kind = "stimulus"


def _first_contact(fixations, window):
    touching = contacts(fixations, window.aoi, window.start_ms, window.end_ms)
    if not touching:
        return None
    return min(max(f.start_ms, window.start_ms) for f in touching)


def window_count(t0, t_end, policy) -> int:
    if t_end - t0 < policy.window_ms:
        return 0
    return int((t_end - t0 - policy.window_ms) // policy.step_ms) + 1


def metric_stream(stimuli, fixations, session_span, policy: AdaptationPolicy):
    """Yield MetricWindow and StimulusCheck records in delivery order."""
    t0, t_end = session_span
    targets = sorted((w for w in stimuli if w.event.role == TARGET),
                     key=lambda w: (w.start_ms, w.event.object_id))
    first = {id(w): _first_contact(fixations, w) for w in targets}

    items = []
    for w in targets:
        deadline = w.start_ms + policy.highlight_delay_ms
        items.append(StimulusCheck(deadline, w.event.ref, w.event.object_id, w.aoi.aoi_id,
                                   w.start_ms, w.end_ms, t_end, first[id(w)]))

    # sweep windows with a moving range over targets sorted by appearance
    lo = hi = 0
    for k in range(window_count(t0, t_end, policy)):
        ws = t0 + k * policy.step_ms
        we = ws + policy.window_ms
        while lo < len(targets) and targets[lo].start_ms < ws:
            lo += 1
        hi = max(hi, lo)
        while hi < len(targets) and targets[hi].start_ms < we:
            hi += 1
        members = targets[lo:hi]
        attended = 0
        for w in members:
            fc = first[id(w)]
            if fc is not None and fc < min(w.end_ms, we):
                attended += 1
        score = attended / len(members) if members else None
        items.append(MetricWindow(k, ws, we, score, len(members), attended,
                                  tuple(w.event.ref for w in members)))

    def order(item):
        if item.kind == "window":
            return (item.time_ms, 0, item.index, "")
        return (item.time_ms, 1, item.appear_ms, item.object_id)

    items.sort(key=order)
    yield from items


class StreamingEvaluator:
    """Sequential consumer of metric_stream records. Rejects out-of-order delivery."""

    def __init__(self, policy: AdaptationPolicy):
        self.policy = policy
        self._last_time = None
        self._last_change = None
        self._low_run = []
        self._high_run = []

    def feed(self, item) -> list:
        if self._last_time is not None and item.time_ms < self._last_time:
            raise OutOfOrderDelivery(f"item at {item.time_ms} after {self._last_time}")
        self._last_time = item.time_ms
        if item.kind == "window":
            return self._on_window(item)
        return self._on_stimulus(item)

    def _on_stimulus(self, item: StimulusCheck) -> list:
        p = self.policy
        deadline = item.time_ms
        if deadline >= item.disappear_ms or deadline > item.session_end_ms:
            return []
        if item.first_contact_ms is not None and item.first_contact_ms < deadline:
            return []
        without = (item.first_contact_ms if item.first_contact_ms is not None
                   else min(item.disappear_ms, item.session_end_ms)) - item.appear_ms
        reason = (
            Evidence("ms_without_contact", without, ">=", p.highlight_delay_ms,
                     (item.appear_ms, deadline), (item.event_ref,)),
            Evidence("ms_visible_after_delay", item.disappear_ms - deadline, ">", 0.0,
                     (deadline, item.disappear_ms), (item.event_ref,)),
            Evidence("ms_session_remaining", item.session_end_ms - deadline, ">=", 0.0,
                     (deadline, item.session_end_ms)),
        )
        return [AdaptationSignal(deadline, HIGHLIGHT, item.aoi_id, reason)]

    def _on_window(self, w: MetricWindow) -> list:
        p = self.policy
        if w.score is None:
            self._low_run, self._high_run = [], []
            return []
        if w.score < p.low_threshold:
            self._low_run.append(w)
            self._high_run = []
        elif w.score > p.high_threshold:
            self._high_run.append(w)
            self._low_run = []
        else:
            self._low_run, self._high_run = [], []
            return []
        if len(self._low_run) >= p.low_windows:
            run, self._low_run = self._low_run, []
            return self._difficulty(DIFFICULTY_DOWN, run, "<", p.low_threshold, p.low_windows, w.end_ms)
        if len(self._high_run) >= p.high_windows:
            run, self._high_run = self._high_run, []
            return self._difficulty(DIFFICULTY_UP, run, ">", p.high_threshold, p.high_windows, w.end_ms)
        return []

    def _difficulty(self, kind, run, comparator, threshold, needed, t) -> list:
        p = self.policy
        if self._last_change is not None and t - self._last_change < p.refractory_ms:
            return []
        reason = [Evidence("window_sustained_attention", r.score, comparator, threshold,
                           (r.start_ms, r.end_ms), r.event_refs) for r in run]
        reason.append(Evidence("consecutive_windows", len(run), ">=", needed))
        if self._last_change is not None:
            reason.append(Evidence("ms_since_last_difficulty_change", t - self._last_change, ">=",
                                   p.refractory_ms))
        self._last_change = t
        return [AdaptationSignal(t, kind, None, tuple(reason))]


def evaluate_adaptation(stream, policy: AdaptationPolicy, sink=None):
    """Consume a metric stream, yielding signals as they fire (also written to ``sink``)."""
    evaluator = StreamingEvaluator(policy)
    for item in stream:
        for signal in evaluator.feed(item):
            if sink is not None:
                sink.write(signal.to_json() + "\n")
                sink.flush()
            yield signal


def stream_signals(stimuli, fixations, session_span, policy) -> list:
    return list(evaluate_adaptation(metric_stream(stimuli, fixations, session_span, policy), policy))


# ---------------------------------------------------------------- batch route

@dataclass
class _Run:
    kind: str
    windows: list = field(default_factory=list)


def replay_batch(stimuli, fixations, session_span, policy: AdaptationPolicy) -> list:
    """Offline what-would-have-fired replay over a whole session."""
    t0, t_end = session_span
    p = policy
    targets = sorted((w for w in stimuli if w.event.role == TARGET),
                     key=lambda w: (w.start_ms, w.event.object_id))

    highlights = []
    for w in targets:
        deadline = w.start_ms + p.highlight_delay_ms
        if deadline >= w.end_ms or deadline > t_end:
            continue
        early = contacts(fixations, w.aoi, w.start_ms, deadline)
        if early:
            continue
        later = contacts(fixations, w.aoi, deadline, w.end_ms)
        if later:
            without = min(max(f.start_ms, w.start_ms) for f in later) - w.start_ms
        else:
            without = min(w.end_ms, t_end) - w.start_ms
        reason = (
            Evidence("ms_without_contact", without, ">=", p.highlight_delay_ms,
                     (w.start_ms, deadline), (w.event.ref,)),
            Evidence("ms_visible_after_delay", w.end_ms - deadline, ">", 0.0,
                     (deadline, w.end_ms), (w.event.ref,)),
            Evidence("ms_session_remaining", t_end - deadline, ">=", 0.0, (deadline, t_end)),
        )
        highlights.append(((deadline, 1, w.start_ms, w.event.object_id),
                           AdaptationSignal(deadline, HIGHLIGHT, w.aoi.aoi_id, reason)))

    # per-window scores computed window by window
    scored = []
    for k in range(window_count(t0, t_end, p)):
        ws = t0 + k * p.step_ms
        we = ws + p.window_ms
        members = [w for w in targets if ws <= w.start_ms < we]
        if not members:
            scored.append((ws, we, None, ()))
            continue
        hit = sum(1 for w in members if contacts(fixations, w.aoi, w.start_ms, min(w.end_ms, we)))
        scored.append((ws, we, hit / len(members), tuple(w.event.ref for w in members)))

    # split scores into maximal qualifying runs, cut each run into chunks of the required length
    candidates = []
    run = None
    for ws, we, score, refs in scored + [(None, None, None, ())]:
        kind = None
        if score is not None and score < p.low_threshold:
            kind = DIFFICULTY_DOWN
        elif score is not None and score > p.high_threshold:
            kind = DIFFICULTY_UP
        if run is not None and kind != run.kind:
            need = p.low_windows if run.kind == DIFFICULTY_DOWN else p.high_windows
            for c in range(len(run.windows) // need):
                candidates.append((run.kind, run.windows[c * need:(c + 1) * need]))
            run = None
        if kind is not None:
            run = run or _Run(kind)
            run.windows.append((ws, we, score, refs))

    difficulty = []
    last = None
    for kind, chunk in sorted(candidates, key=lambda kc: kc[1][-1][1]):
        t = chunk[-1][1]
        if last is not None and t - last < p.refractory_ms:
            continue
        comparator, threshold, need = ((("<", p.low_threshold, p.low_windows)) if kind == DIFFICULTY_DOWN
                                       else (">", p.high_threshold, p.high_windows))
        reason = [Evidence("window_sustained_attention", s, comparator, threshold, (a, b), r)
                  for a, b, s, r in chunk]
        reason.append(Evidence("consecutive_windows", need, ">=", need))
        if last is not None:
            reason.append(Evidence("ms_since_last_difficulty_change", t - last, ">=", p.refractory_ms))
        last = t
        difficulty.append(((t, 0, 0.0, ""), AdaptationSignal(t, kind, None, tuple(reason))))

    merged = sorted(highlights + difficulty, key=lambda ks: ks[0])
    return [s for _, s in merged]


def signals_jsonl(signals) -> str:
    return "".join(s.to_json() + "\n" for s in signals)
