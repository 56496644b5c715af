"""Per-sample geometry: quadrants, AoI membership, message labels, and I-DT fixations."""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass

from .errors import OutOfBounds
from .ingest import (
    APPEAR,
    DISAPPEAR,
    ROLE_PRIORITY,
    AoiDefinition,
    StimulusEvent,
    session_end_ms,
)

DEFAULT_DISPERSION_PX = 50.0
DEFAULT_MIN_FIXATION_MS = 100.0
STIMULUS_SQUARE_PX = 160.0
NO_STIMULI = "No Stimuli"

# (is_top, is_left) -> label.  Q3/Q4 follow the logged messages; Q1/Q2 are convention.
DEFAULT_QUADRANT_MAP = {
    (True, True): "Q3",
    (True, False): "Q4",
    (False, True): "Q1",
    (False, False): "Q2",
}


def quadrant_of(x, y, screen_w, screen_h, quadrant_map=None) -> str:
    if not (0 <= x <= screen_w and 0 <= y <= screen_h):
        raise OutOfBounds(f"({x}, {y}) outside {screen_w}x{screen_h}")
    qmap = quadrant_map or DEFAULT_QUADRANT_MAP
    return qmap[(y < screen_h / 2, x < screen_w / 2)]


def aoi_hits(x, y, aois) -> tuple:
    """Ids of every AoI whose closed rectangle contains the point, in config order."""
    return tuple(a.aoi_id for a in aois if a.contains(x, y))


def prioritized(aois) -> list:
    """AoIs ordered Target > Distractor > Neutral, config order within a role."""
    return sorted(aois, key=lambda a: ROLE_PRIORITY.get(a.role, 3))


@dataclass(frozen=True)
class StimulusWindow:
    """One appearance of a stimulus, paired with when it stopped being visible."""

    event: StimulusEvent
    start_ms: float
    end_ms: float
    aoi: AoiDefinition

    def visible_at(self, t) -> bool:
        return self.start_ms <= t < self.end_ms


def stimulus_aoi(event: StimulusEvent, aois) -> AoiDefinition:
    """Configured AoI containing the object, else a fixed square centred on it."""
    for aoi in prioritized(aois):
        if aoi.contains(event.obj_x, event.obj_y):
            return aoi
    half = STIMULUS_SQUARE_PX / 2
    return AoiDefinition(f"stim:{event.object_id}", event.obj_x - half, event.obj_y - half,
                         STIMULUS_SQUARE_PX, STIMULUS_SQUARE_PX, event.role)


def visibility_windows(events, aois, session_end_ms) -> list:
    """Pair each Appear with the next Disappear of the same object.

    An Appear left open is visible until the end of the session.
    """
    open_by_object = {}
    windows = []
    for ev in events:
        if ev.kind == APPEAR:
            if ev.object_id in open_by_object:
                prev = open_by_object.pop(ev.object_id)
                windows.append(StimulusWindow(prev, prev.timestamp_ms, ev.timestamp_ms, stimulus_aoi(prev, aois)))
            open_by_object[ev.object_id] = ev
        elif ev.kind == DISAPPEAR:
            prev = open_by_object.pop(ev.object_id, None)
            if prev is not None:
                windows.append(StimulusWindow(prev, prev.timestamp_ms, ev.timestamp_ms, stimulus_aoi(prev, aois)))
    for prev in open_by_object.values():
        end = max(session_end_ms, prev.timestamp_ms)
        windows.append(StimulusWindow(prev, prev.timestamp_ms, end, stimulus_aoi(prev, aois)))
    windows.sort(key=lambda w: (w.start_ms, w.event.object_id))
    return windows


def effective_aois(aois, windows) -> list:
    """Configured AoIs plus any synthesized stimulus squares."""
    out = list(aois)
    seen = {a.aoi_id for a in out}
    for w in windows:
        if w.aoi.aoi_id not in seen:
            seen.add(w.aoi.aoi_id)
            out.append(w.aoi)
    return out


@dataclass(frozen=True)
class SampleLabel:
    sample_index: int
    timestamp_ms: float
    x: float
    y: float
    quadrant: str
    aoi_hits: tuple
    stimulus: str
    message: str
    offscreen: bool = False


def render_message(quadrant, in_aoi, stimulus) -> str:
    return f"{quadrant}-{'In' if in_aoi else 'Not in'} AoI-{stimulus}"


def _pick_stimulus(visible, hits) -> str:
    if not visible:
        return NO_STIMULI
    if hits:
        hit_set = set(hits)
        touched = [w for w in visible if w.aoi.aoi_id in hit_set]
        if touched:
            best = min(touched, key=lambda w: (ROLE_PRIORITY.get(w.aoi.role, 3), -w.start_ms, w.event.object_id))
            return best.event.object_id
    best = max(visible, key=lambda w: (w.start_ms, w.event.object_id))
    return best.event.object_id


def label_samples(session, aois, windows=None, quadrant_map=None) -> list:
    """One SampleLabel per valid sample.

    Off-screen (clamped) samples keep a quadrant but never hit an AoI.
    """
    if windows is None:
        windows = visibility_windows(session.events, aois, session_end_ms(session.samples))
    windows = sorted(windows, key=lambda w: w.start_ms)
    ordered = prioritized(aois)
    rank = {a.aoi_id: i for i, a in enumerate(ordered)}
    w, h = session.screen_width, session.screen_height
    labels = []
    active, ptr = [], 0
    for i, s in enumerate(session.samples):
        if not s.valid:
            continue
        t = s.timestamp_ms
        while ptr < len(windows) and windows[ptr].start_ms <= t:
            active.append(windows[ptr])
            ptr += 1
        if active:
            active = [win for win in active if t < win.end_ms]
        q = quadrant_of(s.x, s.y, w, h, quadrant_map)
        hits = () if s.offscreen else aoi_hits(s.x, s.y, aois)
        if len(hits) > 1:
            hits = tuple(sorted(hits, key=rank.__getitem__))
        stim = _pick_stimulus(active, hits)
        labels.append(SampleLabel(i, t, s.x, s.y, q, hits, stim,
                                  render_message(q, bool(hits), stim), s.offscreen))
    return labels


_MESSAGE_RE = re.compile(r"^\s*(q[1-4])\s*-\s*(?:(in|not\s*in)\s*)?aoi\s*-?\s*(.*?)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class ParsedMessage:
    quadrant: str
    in_aoi: bool | None  # None when the message does not say
    stimulus: str


def parse_message(message: str) -> ParsedMessage | None:
    """Fold the logged message variants ("Q4-In AoI - No Stimuli", "Q4-AoI-No Stimuli", ...)."""
    m = _MESSAGE_RE.match(message or "")
    if not m:
        return None
    membership = m.group(2)
    in_aoi = None if membership is None else not membership.lower().startswith("not")
    stimulus = re.sub(r"\s+", " ", m.group(3)).strip().lower()
    return ParsedMessage(m.group(1).upper(), in_aoi, stimulus)


@dataclass
class ConsistencyReport:
    compared: int
    agree: int
    skipped: int
    rows: list  # dicts per compared row

    @property
    def disagree(self) -> int:
        return self.compared - self.agree

    @property
    def all_agree(self) -> bool:
        return self.agree == self.compared

    def to_dict(self) -> dict:
        return {"compared": self.compared, "agree": self.agree, "disagree": self.disagree,
                "skipped": self.skipped, "rows": self.rows}


def consistency_report(session, labels) -> ConsistencyReport | None:
    """Compare recomputed labels with the logged Message column.

    Quadrant is always compared; AoI membership only where the log states it.
    The stimulus name is reported but not scored, because the logged name is
    not a function of timestamp alone.
    """
    if session.source_messages is None:
        return None
    by_index = {lab.sample_index: lab for lab in labels}
    rows, agree, skipped = [], 0, 0
    for i, msg in enumerate(session.source_messages):
        if not msg:
            continue
        lab = by_index.get(i)
        src = parse_message(msg)
        if lab is None:
            skipped += 1
            continue
        diffs = []
        if src is None:
            diffs.append("unparseable source message")
        else:
            if src.quadrant != lab.quadrant:
                diffs.append(f"quadrant {src.quadrant} != {lab.quadrant}")
            if src.in_aoi is not None and src.in_aoi != bool(lab.aoi_hits):
                diffs.append(f"aoi {'in' if src.in_aoi else 'not in'} != {'in' if lab.aoi_hits else 'not in'}")
        ok = not diffs
        agree += ok
        rows.append({
            "index": i, "timestamp_ms": lab.timestamp_ms, "source": msg, "computed": lab.message,
            "agree": ok, "diff": diffs,
            "stimulus_match": src is not None and src.stimulus == lab.stimulus.lower(),
        })
    return ConsistencyReport(len(rows), agree, skipped, rows)


def labels_csv(labels) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["timestamp_ms", "x", "y", "quadrant", "aoi_ids", "message"])
    for lab in labels:
        out.writerow([repr(lab.timestamp_ms), repr(lab.x), repr(lab.y), lab.quadrant,
                      ";".join(lab.aoi_hits), lab.message])
    return buf.getvalue()


@dataclass(frozen=True)
class Fixation:
    start_ms: float
    duration_ms: float
    centroid_x: float
    centroid_y: float
    sample_count: int
    first_index: int
    last_index: int

    @property
    def end_ms(self) -> float:
        return self.start_ms + self.duration_ms


def valid_runs(samples) -> list:
    """Index ranges [lo, hi) of consecutive valid samples."""
    runs, lo = [], None
    for i, s in enumerate(samples):
        if s.valid and lo is None:
            lo = i
        elif not s.valid and lo is not None:
            runs.append((lo, i))
            lo = None
    if lo is not None:
        runs.append((lo, len(samples)))
    return runs


def detect_fixations(samples, dispersion_threshold_px=DEFAULT_DISPERSION_PX,
                     min_duration_ms=DEFAULT_MIN_FIXATION_MS) -> list:
    """Dispersion-threshold (I-DT) fixation identification.

    Dispersion is checked per axis: max-min of x and of y must each stay within
    the threshold. From each start the window grows greedily while dispersion
    holds; it is kept if its time span reaches ``min_duration_ms``, and the scan
    resumes after it, otherwise the start advances by one sample.
    """
    fixations = []
    thr = dispersion_threshold_px
    for lo, hi in valid_runs(samples):
        i = lo
        while i < hi:
            s0 = samples[i]
            min_x = max_x = s0.x
            min_y = max_y = s0.y
            j = i
            while j + 1 < hi:
                nxt = samples[j + 1]
                nmin_x, nmax_x = min(min_x, nxt.x), max(max_x, nxt.x)
                nmin_y, nmax_y = min(min_y, nxt.y), max(max_y, nxt.y)
                if nmax_x - nmin_x > thr or nmax_y - nmin_y > thr:
                    break
                min_x, max_x, min_y, max_y = nmin_x, nmax_x, nmin_y, nmax_y
                j += 1
            span = samples[j].timestamp_ms - s0.timestamp_ms
            if span >= min_duration_ms:
                members = samples[i:j + 1]
                n = len(members)
                cx = sum(s.x for s in members) / n
                cy = sum(s.y for s in members) / n
                fixations.append(Fixation(s0.timestamp_ms, span, cx, cy, n, i, j))
                i = j + 1
            else:
                i += 1
    return fixations


def fixations_csv(fixations, aois=()) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["start_ms", "duration_ms", "centroid_x", "centroid_y", "sample_count", "aoi_ids"])
    for f in fixations:
        out.writerow([repr(f.start_ms), repr(f.duration_ms), repr(f.centroid_x), repr(f.centroid_y),
                      f.sample_count, ";".join(aoi_hits(f.centroid_x, f.centroid_y, aois))])
    return buf.getvalue()
