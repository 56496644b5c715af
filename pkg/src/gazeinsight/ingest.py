"""Session log ingestion.

Reads the Mushroom Hunter style CSV (Timestamp, X, Y, Message, Obj-X, Obj-Y,
Obj-Z plus optional Kind/Object/Role/Offscreen extension columns), AoI
configuration and session metadata. Participant identity is replaced by a
salted digest before anything else sees it.
"""

from __future__ import annotations

import csv
import hashlib
import hmac
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import EmptySession, MalformedHeader, MalformedRow, SaltTooShort

DEFAULT_SCREEN = (1920, 1080)
DEFAULT_VISIBILITY_TIMEOUT_MS = 3000.0
MIN_SALT_BYTES = 16

APPEAR = "Appear"
DISAPPEAR = "Disappear"
TARGET = "Target"
DISTRACTOR = "Distractor"
NEUTRAL = "Neutral"

ROLE_PRIORITY = {TARGET: 0, DISTRACTOR: 1, NEUTRAL: 2}


@dataclass(frozen=True)
class GazeSample:
    timestamp_ms: float
    x: float | None
    y: float | None
    valid: bool = True
    # gaze was outside the screen and has been clamped to its edge
    offscreen: bool = False


@dataclass(frozen=True)
class StimulusEvent:
    timestamp_ms: float
    kind: str
    object_id: str
    obj_x: float
    obj_y: float
    obj_z: float = 0.0
    role: str = TARGET
    synthetic: bool = False

    @property
    def ref(self) -> str:
        return f"{self.object_id}@{self.timestamp_ms!r}"


@dataclass(frozen=True)
class AoiDefinition:
    aoi_id: str
    x: float
    y: float
    width: float
    height: float
    role: str = NEUTRAL

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.width and self.y <= py <= self.y + self.height

    def to_dict(self) -> dict:
        return {"aoi_id": self.aoi_id, "x": self.x, "y": self.y,
                "width": self.width, "height": self.height, "role": self.role}


@dataclass
class ParseLedger:
    total_rows: int = 0
    accepted: int = 0
    clamped: int = 0
    invalid: int = 0
    rejected: list = field(default_factory=list)  # (line_no, reason)

    @property
    def rejected_count(self) -> int:
        return len(self.rejected)

    def to_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "accepted": self.accepted,
            "rejected": self.rejected_count,
            "clamped": self.clamped,
            "invalid": self.invalid,
            "rejections": [{"line": n, "reason": r} for n, r in self.rejected],
        }


@dataclass
class SessionLog:
    participant_pseudonym: str
    screen_width: int
    screen_height: int
    samples: list
    events: list
    source_messages: list | None = None
    ledger: ParseLedger | None = field(default=None, compare=False, repr=False)

    @property
    def valid_samples(self) -> list:
        return [s for s in self.samples if s.valid]


@dataclass
class FormatOptions:
    delimiter: str = ","
    screen_width: int = DEFAULT_SCREEN[0]
    screen_height: int = DEFAULT_SCREEN[1]
    participant_pseudonym: str = ""
    # used to assign event roles when the log carries no Role column
    aois: list | None = None


_REQUIRED = ("timestamp", "x", "y")
_OPTIONAL = ("message", "objx", "objy", "objz", "kind", "object", "role", "offscreen")


def _norm_header(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.strip().lower())


def _number(text: str, line_no: int, column: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise MalformedRow(line_no, f"non-numeric {column}: {text!r}") from None


def object_key(obj_x: float, obj_y: float) -> str:
    """Fallback object id for logs without an Object column: keyed by position."""
    return f"obj_{obj_x!r}_{obj_y!r}"


def _role_from_aois(obj_x, obj_y, aois) -> str:
    if aois:
        for aoi in sorted(aois, key=lambda a: ROLE_PRIORITY.get(a.role, 3)):
            if aoi.contains(obj_x, obj_y) and aoi.role in (TARGET, DISTRACTOR):
                return aoi.role
    return TARGET


def _canonical_role(text: str, line_no: int) -> str:
    for role in (TARGET, DISTRACTOR):
        if text.lower() == role.lower():
            return role
    raise MalformedRow(line_no, f"unknown role {text!r}")


def _canonical_kind(text: str, line_no: int) -> str:
    for kind in (APPEAR, DISAPPEAR):
        if text.lower() == kind.lower():
            return kind
    raise MalformedRow(line_no, f"unknown kind {text!r}")


def _read_text(raw) -> str:
    if isinstance(raw, (bytes, bytearray)):
        return raw.decode("utf-8-sig")
    if isinstance(raw, str):
        return raw
    data = raw.read()
    return data.decode("utf-8-sig") if isinstance(data, (bytes, bytearray)) else data


def parse_session(raw_log, options: FormatOptions | None = None) -> SessionLog:
    """Parse a delimiter-separated gaze log into a SessionLog.

    Bad rows are skipped and recorded on ``session.ledger``; a session with no
    usable rows raises EmptySession.
    """
    options = options or FormatOptions()
    text = _read_text(raw_log)
    reader = csv.reader(io.StringIO(text), delimiter=options.delimiter, skipinitialspace=True)
    header = None
    for row in reader:
        if any(cell.strip() for cell in row):
            header = row
            break
    if header is None:
        raise EmptySession("empty log: no header and no rows", ParseLedger())

    index = {}
    for i, name in enumerate(header):
        key = _norm_header(name)
        if key in _REQUIRED + _OPTIONAL and key not in index:
            index[key] = i
    missing = [c for c in _REQUIRED if c not in index]
    if missing:
        raise MalformedHeader(f"missing required column(s): {', '.join(missing)}")
    has_message = "message" in index

    w, h = options.screen_width, options.screen_height
    ledger = ParseLedger()
    rows = []  # (timestamp, file_order, sample, message, event_spec)
    for row in reader:
        if not any(cell.strip() for cell in row):
            continue
        ledger.total_rows += 1
        line_no = reader.line_num
        try:
            if len(row) > len(header):
                raise MalformedRow(line_no, f"expected {len(header)} fields, got {len(row)}")
            cells = {k: (row[i] if i < len(row) else "") for k, i in index.items()}
            rows.append(_parse_row(cells, line_no, w, h, options, ledger))
        except MalformedRow as exc:
            ledger.rejected.append((exc.line_no, exc.reason))

    if not rows:
        raise EmptySession("session has no usable rows", ledger)

    # Python's sort is stable: equal timestamps keep file order
    rows.sort(key=lambda r: r[0])
    samples = [r[1] for r in rows]
    events, rejected_idx = _resolve_events(rows)
    if rejected_idx:
        keep = [i for i in range(len(rows)) if i not in rejected_idx]
        for i in sorted(rejected_idx):
            ledger.rejected.append((rows[i][4], "disappear without a preceding appear"))
        rows = [rows[i] for i in keep]
        samples = [r[1] for r in rows]
        if not rows:
            raise EmptySession("session has no usable rows", ledger)
    ledger.rejected.sort()
    ledger.accepted = len(samples)
    ledger.clamped = sum(1 for s in samples if s.offscreen)
    ledger.invalid = sum(1 for s in samples if not s.valid)
    return SessionLog(
        participant_pseudonym=options.participant_pseudonym,
        screen_width=w,
        screen_height=h,
        samples=samples,
        events=events,
        source_messages=[r[2] for r in rows] if has_message else None,
        ledger=ledger,
    )


def _parse_row(cells, line_no, w, h, options, ledger):
    t = _number(cells["timestamp"], line_no, "Timestamp")
    if t is None or not math.isfinite(t):
        raise MalformedRow(line_no, "missing or non-finite Timestamp")
    x = _number(cells["x"], line_no, "X")
    y = _number(cells["y"], line_no, "Y")
    offscreen_flag = cells.get("offscreen", "").strip()
    if offscreen_flag not in ("", "0", "1"):
        raise MalformedRow(line_no, f"Offscreen must be 0/1, got {offscreen_flag!r}")

    if x is None or y is None or not (math.isfinite(x) and math.isfinite(y)):
        sample = GazeSample(t, None, None, valid=False)
    else:
        cx, cy = min(max(x, 0.0), float(w)), min(max(y, 0.0), float(h))
        clamped = (cx, cy) != (x, y) or offscreen_flag == "1"
        sample = GazeSample(t, cx, cy, valid=True, offscreen=clamped)

    ox = _number(cells.get("objx", ""), line_no, "Obj-X")
    oy = _number(cells.get("objy", ""), line_no, "Obj-Y")
    oz = _number(cells.get("objz", ""), line_no, "Obj-Z")
    kind_text = cells.get("kind", "").strip()
    obj_text = cells.get("object", "").strip()
    role_text = cells.get("role", "").strip()

    event = None
    if (ox is None) != (oy is None):
        raise MalformedRow(line_no, "Obj-X and Obj-Y must both be present or both empty")
    kind = _canonical_kind(kind_text, line_no) if kind_text else None
    if ox is not None or kind is not None:
        kind = kind or APPEAR
        if kind == APPEAR and ox is None:
            raise MalformedRow(line_no, "Appear row without object coordinates")
        if ox is None and not obj_text:
            raise MalformedRow(line_no, "Disappear row needs Object or coordinates")
        object_id = obj_text or object_key(ox, oy)
        if role_text:
            role = _canonical_role(role_text, line_no)
        elif ox is not None:
            role = _role_from_aois(ox, oy, options.aois)
        else:
            role = None
        event = (kind, object_id, ox, oy, oz if oz is not None else 0.0, role)
    message = cells["message"].strip() if "message" in cells else None
    return (t, sample, message or None, event, line_no)


def _resolve_events(rows):
    """Build StimulusEvents in row order, filling Disappear coordinates from the open Appear."""
    events = []
    open_appear = {}
    bad = set()
    for i, (t, _sample, _msg, ev_fields, _line) in enumerate(rows):
        if ev_fields is None:
            continue
        kind, object_id, ox, oy, oz, role = ev_fields
        if kind == APPEAR:
            ev = StimulusEvent(t, APPEAR, object_id, ox, oy, oz, role)
            open_appear[object_id] = ev
            events.append(ev)
            continue
        prior = open_appear.pop(object_id, None)
        if prior is None:
            bad.add(i)
            continue
        events.append(StimulusEvent(
            t, DISAPPEAR, object_id,
            ox if ox is not None else prior.obj_x,
            oy if oy is not None else prior.obj_y,
            oz if ox is not None else prior.obj_z,
            role or prior.role,
        ))
    return events, bad


def serialize_session(session: SessionLog) -> str:
    """Write a session back to CSV such that parse_session reproduces it.

    Every event must share its timestamp with a sample row.
    """
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    header = ["Timestamp", "X", "Y"]
    if session.source_messages is not None:
        header.append("Message")
    header += ["Obj-X", "Obj-Y", "Obj-Z", "Kind", "Object", "Role", "Offscreen"]
    out.writerow(header)

    slots = {}
    for i, s in enumerate(session.samples):
        slots.setdefault(s.timestamp_ms, []).append(i)
    attached = {}
    for ev in session.events:
        free = slots.get(ev.timestamp_ms)
        if not free:
            raise ValueError(f"event {ev.ref} has no sample row to attach to")
        attached[free.pop(0)] = ev

    for i, s in enumerate(session.samples):
        row = [repr(s.timestamp_ms)]
        row += [repr(s.x), repr(s.y)] if s.valid else ["", ""]
        if session.source_messages is not None:
            row.append(session.source_messages[i] or "")
        ev = attached.get(i)
        if ev is None:
            row += ["", "", "", "", "", ""]
        else:
            row += [repr(ev.obj_x), repr(ev.obj_y), repr(ev.obj_z), ev.kind, ev.object_id, ev.role]
        row.append("1" if s.offscreen else "")
        out.writerow(row)
    return buf.getvalue()


def pseudonymize(raw_id: str, salt: bytes) -> str:
    """Keyed one-way digest of a participant id, rendered as 64 hex chars.

    The digest is re-keyed with a counter in the rare case the hex text happens
    to contain the raw id, so the token never carries it as a substring.
    """
    if isinstance(salt, str):
        salt = salt.encode("utf-8")
    if len(salt) < MIN_SALT_BYTES:
        raise SaltTooShort(f"salt must be at least {MIN_SALT_BYTES} bytes, got {len(salt)}")
    if not raw_id:
        raise ValueError("participant id is empty")
    message = raw_id.encode("utf-8")
    counter = 0
    while True:
        token = hmac.new(salt, message + b"\x00" + str(counter).encode(), hashlib.sha256).hexdigest()
        if raw_id not in token:
            return token
        counter += 1


def derive_disappearances(events: Iterable[StimulusEvent], visibility_timeout_ms=DEFAULT_VISIBILITY_TIMEOUT_MS,
                          session_end_ms: float | None = None) -> list:
    """Close every Appear that has no explicit Disappear with a synthetic one.

    The synthetic Disappear lands at the earliest of: the timeout, the next
    Appear of the same object, and the end of the session.
    """
    events = list(events)
    keyed = [((ev.timestamp_ms, float(i)), ev) for i, ev in enumerate(events)]
    by_object = {}
    for i, ev in enumerate(events):
        by_object.setdefault(ev.object_id, []).append(i)
    for idxs in by_object.values():
        for pos, i in enumerate(idxs):
            ev = events[i]
            if ev.kind != APPEAR:
                continue
            nxt = events[idxs[pos + 1]] if pos + 1 < len(idxs) else None
            if nxt is not None and nxt.kind == DISAPPEAR:
                continue
            bounds = [ev.timestamp_ms + visibility_timeout_ms]
            if nxt is not None:
                bounds.append(nxt.timestamp_ms)
            if session_end_ms is not None:
                bounds.append(max(session_end_ms, ev.timestamp_ms))
            t_end = min(bounds)
            synthetic = StimulusEvent(t_end, DISAPPEAR, ev.object_id, ev.obj_x, ev.obj_y,
                                      ev.obj_z, ev.role, synthetic=True)
            # sort just after its Appear but ahead of anything later in the file at t_end
            keyed.append(((t_end, i + 0.5), synthetic))
    keyed.sort(key=lambda kv: kv[0])
    return [ev for _, ev in keyed]


def load_aoi_config(path_or_text) -> list:
    data = _load_json(path_or_text)
    if not isinstance(data, list):
        raise ValueError("AoI config must be a JSON array")
    aois, seen = [], set()
    for item in data:
        aoi = AoiDefinition(
            aoi_id=str(item["aoi_id"]),
            x=float(item["x"]), y=float(item["y"]),
            width=float(item["width"]), height=float(item["height"]),
            role=_canonical_aoi_role(item.get("role", NEUTRAL)),
        )
        if aoi.width <= 0 or aoi.height <= 0:
            raise ValueError(f"AoI {aoi.aoi_id!r} must have positive width and height")
        if aoi.aoi_id in seen:
            raise ValueError(f"duplicate aoi_id {aoi.aoi_id!r}")
        seen.add(aoi.aoi_id)
        aois.append(aoi)
    return aois


def _canonical_aoi_role(text: str) -> str:
    for role in (TARGET, DISTRACTOR, NEUTRAL):
        if str(text).lower() == role.lower():
            return role
    raise ValueError(f"unknown AoI role {text!r}")


@dataclass(frozen=True)
class SessionMeta:
    participant_id: str
    screen_width: int = DEFAULT_SCREEN[0]
    screen_height: int = DEFAULT_SCREEN[1]


def load_metadata(path_or_text) -> SessionMeta:
    data = _load_json(path_or_text)
    return SessionMeta(
        participant_id=str(data["participant_id"]),
        screen_width=int(data.get("screen_width", DEFAULT_SCREEN[0])),
        screen_height=int(data.get("screen_height", DEFAULT_SCREEN[1])),
    )


def _load_json(path_or_text):
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and not path_or_text.lstrip().startswith(("[", "{"))):
        return json.loads(Path(path_or_text).read_text(encoding="utf-8"))
    return json.loads(path_or_text)


def session_end_ms(samples) -> float:
    """End of the observed period: last timestamp plus the median inter-sample interval."""
    if not samples:
        return 0.0
    return samples[-1].timestamp_ms + median_interval(samples)


def median_interval(samples) -> float:
    diffs = sorted(b.timestamp_ms - a.timestamp_ms for a, b in zip(samples, samples[1:]))
    if not diffs:
        return 0.0
    mid = len(diffs) // 2
    return diffs[mid] if len(diffs) % 2 else (diffs[mid - 1] + diffs[mid]) / 2.0
