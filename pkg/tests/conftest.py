import json

import pytest

from affectrisk.asl import EmotionLabel as E
from affectrisk.features import build_matrix
from affectrisk.ingest import CallRecord, Role, Section, Target, Utterance
from affectrisk.synthgen import PlantSpec, generate_corpus


def utt(role, section, order, text=None, acoustic=None, transcript=None):
    return Utterance(Role[role], Section[section], order, text, acoustic, transcript)


def full_call(call_id="c1", hist_vol=0.3, horizons=(1, 7, 30)):
    """Every role speaks in both sections with both modality labels."""
    utts, k = [], 0
    for section in ("PRESENTATION", "QA"):
        for role in ("CEO", "CFO", "CXO"):
            for em in (E.NEUTRAL, E.HAPPINESS, E.FEAR):
                utts.append(utt(role, section, k, em, E.SADNESS if k % 2 else E.ANGER))
                k += 1
    targets = {h: Target(0.0, 0.25) for h in horizons}
    return CallRecord(call_id, "f1", tuple(utts), hist_vol, targets)


def call_line(call_id="c1", **over):
    rec = {
        "call_id": call_id,
        "firm_id": "f1",
        "hist_vol_30d": 0.3,
        "utterances": [
            {"role": "ceo", "section": "presentation", "order": 0, "text_emotion": "neutral"},
            {"role": "cfo", "section": "qa", "order": 1, "text_emotion": "fear", "acoustic_emotion": "anger"},
        ],
        "targets": {"30": {"car": 0.01, "realized_vol": 0.4}},
    }
    rec.update(over)
    return json.dumps(rec)


@pytest.fixture(scope="session")
def planted_calls():
    return generate_corpus(PlantSpec(), seed=0)


@pytest.fixture(scope="session")
def planted_matrix(planted_calls):
    return build_matrix(planted_calls)
