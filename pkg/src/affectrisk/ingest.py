"""Corpus ingestion: line-delimited JSON call records.

One JSON object per line::

    {"call_id": "c1", "firm_id": "f1", "hist_vol_30d": 0.31,
     "utterances": [{"role": "cfo", "section": "qa", "order": 0,
                     "text_emotion": "fear", "acoustic_emotion": "neutral"}],
     "targets": {"30": {"car": 0.01, "realized_vol": 0.42}}}

Utterances may carry ``transcript`` instead of ``section``; the section is
then inferred with :func:`segment_sections`.  Operator and analyst speech is
dropped (counted in :class:`ParseStats`).
"""
from __future__ import annotations

import enum
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

from .asl import EmotionLabel, parse_emotion
from .errors import (
    DuplicateCallId,
    InvalidRole,
    InvalidSection,
    MalformedLine,
    UnknownEmotion,
)

log = logging.getLogger(__name__)

HORIZONS = (1, 7, 30)
DEFAULT_QA_MARKERS = (
    "question-and-answer session",
    "q&a session",
    "first question",
    "open the line for questions",
)
DROPPED_ROLES = frozenset({"operator", "analyst"})


class Role(enum.Enum):
    CEO = "ceo"
    CFO = "cfo"
    CXO = "cxo"

    @property
    def tag(self) -> str:
        return self.name


class Section(enum.Enum):
    PRESENTATION = "presentation"
    QA = "qa"

    @property
    def tag(self) -> str:
        """Spelling used inside feature names."""
        return "presentation" if self is Section.PRESENTATION else "q&a"


ROLES = tuple(Role)
SECTIONS = tuple(Section)


@dataclass(frozen=True)
class Utterance:
    role: Role
    section: Section
    order: int
    text_emotion: EmotionLabel | None = None
    acoustic_emotion: EmotionLabel | None = None
    transcript: str | None = None

    def emotion(self, modality: str) -> EmotionLabel | None:
        if modality == "text":
            return self.text_emotion
        if modality == "acoustic":
            return self.acoustic_emotion
        raise ValueError(f"unknown modality {modality!r}")


@dataclass(frozen=True)
class Target:
    car: float
    realized_vol: float


@dataclass(frozen=True)
class CallRecord:
    call_id: str
    firm_id: str
    utterances: tuple[Utterance, ...]
    hist_vol_30d: float
    targets: Mapping[int, Target] = field(default_factory=dict)


@dataclass(frozen=True)
class Issue:
    kind: str
    detail: object = None

    def __str__(self) -> str:
        return self.kind if self.detail is None else f"{self.kind}({self.detail})"


@dataclass
class ParseStats:
    lines: int = 0
    unknown_fields: int = 0
    dropped_utterances: int = 0
    segmented_calls: int = 0
    no_qa_detected: list = field(default_factory=list)


@dataclass(frozen=True)
class Segmentation:
    sections: tuple[Section, ...]
    no_qa_detected: bool


def segment_sections(transcripts: Sequence[str], markers: Sequence[str] = DEFAULT_QA_MARKERS) -> Segmentation:
    """Split an ordered utterance list at the first Q&A marker.

    Everything before the first transcript containing a marker is
    presentation; that transcript and everything after is Q&A.  Matching is a
    case-insensitive substring test.
    """
    if not markers:
        raise ValueError("at least one Q&A marker is required")
    needles = [m.lower() for m in markers]
    cut = None
    for i, text in enumerate(transcripts):
        low = (text or "").lower()
        if any(n in low for n in needles):
            cut = i
            break
    if cut is None:
        return Segmentation((Section.PRESENTATION,) * len(transcripts), True)
    return Segmentation(
        (Section.PRESENTATION,) * cut + (Section.QA,) * (len(transcripts) - cut), False
    )


def validate_call(call: CallRecord) -> list[Issue]:
    issues = []
    roles = {u.role for u in call.utterances}
    for role in ROLES:
        if role not in roles:
            issues.append(Issue("MissingRole", role.tag))
    sections = {u.section for u in call.utterances}
    for section in SECTIONS:
        if section not in sections:
            issues.append(Issue("EmptySection", section.value))
    for h in HORIZONS:
        if h not in call.targets:
            issues.append(Issue("MissingTargets", h))
    orders = [u.order for u in call.utterances]
    if any(b <= a for a, b in zip(orders, orders[1:])):
        issues.append(Issue("NonMonotoneOrder"))
    seen_qa = False
    for u in call.utterances:
        if u.section is Section.QA:
            seen_qa = True
        elif seen_qa:
            issues.append(Issue("SectionOrder"))
            break
    return issues


# -- parsing ---------------------------------------------------------------

_CALL_KEYS = {"call_id", "firm_id", "hist_vol_30d", "utterances", "targets"}
_UTT_KEYS = {"role", "section", "transcript", "order", "text_emotion", "acoustic_emotion"}


def _finite(value, what, line_no, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedLine(f"{what} must be a number", line_no)
    value = float(value)
    if not math.isfinite(value) or (nonneg and value < 0):
        raise MalformedLine(f"{what} must be finite{' and nonnegative' if nonneg else ''}", line_no)
    return value


def _emotion_field(raw, line_no):
    if raw is None:
        return None
    try:
        return parse_emotion(raw)
    except UnknownEmotion:
        raise UnknownEmotion(raw, line_no) from None


def _parse_record(obj, line_no, stats, markers):
    if not isinstance(obj, dict):
        raise MalformedLine("expected a JSON object", line_no)
    missing = {"call_id", "firm_id", "hist_vol_30d", "utterances"} - obj.keys()
    if missing:
        raise MalformedLine("missing keys: " + ", ".join(sorted(missing)), line_no)
    stats.unknown_fields += len(obj.keys() - _CALL_KEYS)
    call_id = obj["call_id"]
    if not isinstance(call_id, str) or not call_id:
        raise MalformedLine("call_id must be a non-empty string", line_no)
    hist_vol = _finite(obj["hist_vol_30d"], "hist_vol_30d", line_no, nonneg=True)

    raw_utts = obj["utterances"]
    if not isinstance(raw_utts, list):
        raise MalformedLine("utterances must be an array", line_no)
    kept = []
    for u in raw_utts:
        if not isinstance(u, dict):
            raise MalformedLine("utterance must be an object", line_no)
        stats.unknown_fields += len(u.keys() - _UTT_KEYS)
        role_raw = u.get("role")
        if role_raw in DROPPED_ROLES:
            stats.dropped_utterances += 1
            continue
        try:
            role = Role(role_raw)
        except ValueError:
            raise InvalidRole(f"invalid role {role_raw!r}", line_no) from None
        order = u.get("order")
        if isinstance(order, bool) or not isinstance(order, int) or order < 0:
            raise MalformedLine("utterance order must be a nonnegative integer", line_no)
        section = None
        if "section" in u:
            try:
                section = Section(u["section"])
            except ValueError:
                raise InvalidSection(f"invalid section {u['section']!r}", line_no) from None
        elif "transcript" not in u:
            raise MalformedLine("utterance needs 'section' or 'transcript'", line_no)
        text_em = _emotion_field(u.get("text_emotion"), line_no)
        ac_em = _emotion_field(u.get("acoustic_emotion"), line_no)
        if text_em is None and ac_em is None:
            raise MalformedLine("utterance carries no emotion label", line_no)
        kept.append((order, role, section, text_em, ac_em, u.get("transcript")))

    kept.sort(key=lambda t: t[0])
    if any(b[0] == a[0] for a, b in zip(kept, kept[1:])):
        raise MalformedLine("duplicate utterance order within call", line_no)
    if any(k[2] is None for k in kept):
        if any(k[5] is None for k in kept):
            raise MalformedLine("cannot mix utterances with and without 'section'", line_no)
        seg = segment_sections([k[5] for k in kept], markers)
        stats.segmented_calls += 1
        if seg.no_qa_detected:
            stats.no_qa_detected.append(call_id)
        kept = [(o, r, s, t, a, tr) for (o, r, _, t, a, tr), s in zip(kept, seg.sections)]
    utterances = tuple(
        Utterance(role=r, section=s, order=o, text_emotion=t, acoustic_emotion=a, transcript=tr)
        for o, r, s, t, a, tr in kept
    )

    targets = {}
    raw_targets = obj.get("targets") or {}
    if not isinstance(raw_targets, dict):
        raise MalformedLine("targets must be an object", line_no)
    for key, val in raw_targets.items():
        try:
            h = int(key)
        except ValueError:
            h = None
        if h not in HORIZONS or str(h) != key:
            raise MalformedLine(f"unsupported horizon {key!r}", line_no)
        if not isinstance(val, dict) or not {"car", "realized_vol"} <= val.keys():
            raise MalformedLine(f"target {key} needs car and realized_vol", line_no)
        targets[h] = Target(
            car=_finite(val["car"], "car", line_no),
            realized_vol=_finite(val["realized_vol"], "realized_vol", line_no, nonneg=True),
        )
    return CallRecord(
        call_id=call_id,
        firm_id=str(obj["firm_id"]),
        utterances=utterances,
        hist_vol_30d=hist_vol,
        targets=targets,
    )


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    for raw in stream:
        yield raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw


def parse_corpus(
    stream: IO | bytes | Iterable[str],
    markers: Sequence[str] = DEFAULT_QA_MARKERS,
    stats: ParseStats | None = None,
) -> list[CallRecord]:
    """Parse a corpus stream into call records, preserving file order.

    Blank lines are skipped.  Raises on the first structural error with the
    offending 1-based line number attached.
    """
    stats = stats if stats is not None else ParseStats()
    records = []
    seen = set()
    for line_no, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        stats.lines += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(f"invalid JSON ({exc.msg})", line_no) from None
        rec = _parse_record(obj, line_no, stats, markers)
        if rec.call_id in seen:
            raise DuplicateCallId(rec.call_id, line_no)
        seen.add(rec.call_id)
        records.append(rec)
    if stats.unknown_fields:
        log.warning("ignored %d unknown field(s)", stats.unknown_fields)
    return records


def parse_corpus_file(path, markers: Sequence[str] = DEFAULT_QA_MARKERS, stats: ParseStats | None = None) -> list[CallRecord]:
    with open(path, "rb") as fh:
        return parse_corpus(fh, markers, stats)


def record_to_json(call: CallRecord) -> dict:
    utts = []
    for u in call.utterances:
        d = {"role": u.role.value, "section": u.section.value, "order": u.order}
        if u.text_emotion is not None:
            d["text_emotion"] = u.text_emotion.value
        if u.acoustic_emotion is not None:
            d["acoustic_emotion"] = u.acoustic_emotion.value
        if u.transcript is not None:
            d["transcript"] = u.transcript
        utts.append(d)
    return {
        "call_id": call.call_id,
        "firm_id": call.firm_id,
        "hist_vol_30d": call.hist_vol_30d,
        "utterances": utts,
        "targets": {
            str(h): {"car": t.car, "realized_vol": t.realized_vol}
            for h, t in sorted(call.targets.items())
        },
    }


def serialize_corpus(calls: Iterable[CallRecord], stream: IO[str]) -> None:
    for call in calls:
        stream.write(json.dumps(record_to_json(call), separators=(",", ":")))
        stream.write("\n")


def dumps_corpus(calls: Iterable[CallRecord]) -> str:
    buf = io.StringIO()
    serialize_corpus(calls, buf)
    return buf.getvalue()
