"""Discrete emotion vocabulary and its fixed Affective State Label coordinates.

Each of the seven emotion labels maps to a point in a three-dimensional
space (tension, stability, arousal), every coordinate in [-1, 1].  The table
is compiled in; a replacement table can only be loaded through
:func:`load_asl_override` with ``unsafe=True``.
"""
from __future__ import annotations

import enum
import json
from types import MappingProxyType
from typing import Mapping, NamedTuple

from .errors import AslOverrideRejected, UnknownEmotion


class EmotionLabel(enum.Enum):
    HAPPINESS = "happiness"
    SURPRISE = "surprise"
    NEUTRAL = "neutral"
    SADNESS = "sadness"
    FEAR = "fear"
    ANGER = "anger"
    DISGUST = "disgust"

    @property
    def index(self) -> int:
        return _INDEX[self]

    def __str__(self) -> str:
        return self.value


EMOTIONS: tuple[EmotionLabel, ...] = tuple(EmotionLabel)
_INDEX = {e: i for i, e in enumerate(EMOTIONS)}
_BY_NAME = {e.value: e for e in EMOTIONS}


class ASLVector(NamedTuple):
    tension: float
    stability: float
    arousal: float


DIMENSIONS = ASLVector._fields

ASL_TABLE: Mapping[EmotionLabel, ASLVector] = MappingProxyType({
    EmotionLabel.HAPPINESS: ASLVector(-0.5, 1.0, 0.6),
    EmotionLabel.SURPRISE: ASLVector(0.2, 0.2, 0.9),
    EmotionLabel.NEUTRAL: ASLVector(0.0, 0.5, 0.0),
    EmotionLabel.SADNESS: ASLVector(0.6, -0.8, -0.5),
    EmotionLabel.FEAR: ASLVector(1.0, -1.0, 0.8),
    EmotionLabel.ANGER: ASLVector(0.9, -0.7, 0.7),
    EmotionLabel.DISGUST: ASLVector(0.8, -0.9, 0.4),
})


def map_emotion(label: EmotionLabel, table: Mapping[EmotionLabel, ASLVector] = ASL_TABLE) -> ASLVector:
    return table[label]


def parse_emotion(text: str) -> EmotionLabel:
    """Case-insensitive label lookup after trimming surrounding whitespace."""
    if isinstance(text, EmotionLabel):
        return text
    try:
        return _BY_NAME[text.strip().lower()]
    except (KeyError, AttributeError):
        raise UnknownEmotion(text) from None


def render_emotion(label: EmotionLabel) -> str:
    return label.value


def load_asl_override(path, unsafe: bool = False) -> Mapping[EmotionLabel, ASLVector]:
    """Load a replacement emotion table from JSON ``{label: [t, s, a]}``.

    Only meant for sensitivity experiments.  Refused unless ``unsafe`` is set,
    and the file must cover all seven labels with in-range coordinates.
    """
    if not unsafe:
        raise AslOverrideRejected(
            "ASL table override refused; pass --unsafe-asl-override to allow it"
        )
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    table = {}
    for name, coords in raw.items():
        label = parse_emotion(name)
        if len(coords) != 3 or any(not -1.0 <= float(c) <= 1.0 for c in coords):
            raise AslOverrideRejected(f"coordinates for {name!r} must be 3 values in [-1, 1]")
        table[label] = ASLVector(*(float(c) for c in coords))
    missing = set(EMOTIONS) - set(table)
    if missing:
        raise AslOverrideRejected(
            "override must cover every label; missing " + ", ".join(sorted(m.value for m in missing))
        )
    return MappingProxyType(table)
