"""Synthetic call corpora with planted affect -> volatility relationships.

Each call draws a log-normal 30-day historical volatility and, per executive
role, a latent "stress" level that shifts Q&A emotion distributions away from
the (positively skewed) scripted presentation.  Targets are built from the
realised feature values of the call itself::

    realized_vol(30) = a * hist_vol + sum_f coef_f * feature_f + noise

Shorter horizons reuse the same signal with more noise; CAR is pure noise.
A planted feature that is missing for a call contributes zero.
"""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from .asl import EMOTIONS
from .errors import InvalidSpec, TooFewReturns
from .features import CONTROL, build_features, feature_schema
from .ingest import HORIZONS, ROLES, SECTIONS, CallRecord, Role, Section, Target, Utterance

TRADING_DAYS = 252

# emission distributions over EMOTIONS order:
# happiness, surprise, neutral, sadness, fear, anger, disgust
TEXT_CALM = np.array([0.42, 0.10, 0.36, 0.03, 0.03, 0.03, 0.03])
TEXT_STRESSED = np.array([0.04, 0.08, 0.14, 0.22, 0.26, 0.12, 0.14])
TEXT_BUOYANT = np.array([0.86, 0.06, 0.06, 0.005, 0.005, 0.005, 0.005])
ACOUSTIC_CALM = np.array([0.20, 0.12, 0.32, 0.12, 0.08, 0.07, 0.09])
ACOUSTIC_STRESSED = np.array([0.06, 0.14, 0.12, 0.18, 0.22, 0.14, 0.14])
ACOUSTIC_BUOYANT = np.array([0.50, 0.16, 0.26, 0.02, 0.02, 0.02, 0.02])

DEFAULT_COEFFICIENTS = {
    "CFO_delta_text_stability_mean": -0.35,
    "CEO_q&a_text_arousal_std": 0.55,
    "CFO_delta_acoustic_stability_mean": -0.12,
}


def realized_vol(daily_log_returns) -> float:
    """Annualised population standard deviation of daily log returns."""
    r = [float(v) for v in daily_log_returns]
    if len(r) < 2:
        raise TooFewReturns("need at least 2 returns")
    # exact rational arithmetic: constant series give exactly 0
    return statistics.pstdev(r) * math.sqrt(TRADING_DAYS)


@dataclass(frozen=True)
class PlantSpec:
    coefficients: dict = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    hist_coef: float = 0.7
    noise_sd: float = 0.22
    car_noise_sd: float = 0.05
    n_calls: int = 1795
    roles_present: dict = field(default_factory=lambda: {"CFO": 1.0, "CXO": 1.0})
    utterances_per_cell: tuple = (3, 10)
    horizon_noise_mult: dict = field(default_factory=lambda: {1: 3.0, 7: 1.6, 30: 1.0})
    hist_vol_median: float = 0.30
    hist_vol_log_sd: float = 0.35
    n_firms: int = 283

    def validate(self) -> None:
        valid_names = set(feature_schema([]))
        for name in self.coefficients:
            if name not in valid_names or name == CONTROL:
                raise InvalidSpec(f"planted feature {name!r} is not a valid ASL feature name")
        if self.n_calls < 1:
            raise InvalidSpec("n_calls must be >= 1")
        if self.noise_sd < 0 or self.car_noise_sd < 0:
            raise InvalidSpec("noise levels must be nonnegative")
        lo, hi = self.utterances_per_cell
        if not 1 <= lo <= hi:
            raise InvalidSpec("utterances_per_cell must satisfy 1 <= min <= max")
        for role, p in self.roles_present.items():
            if role not in ("CFO", "CXO") or not 0 <= p <= 1:
                raise InvalidSpec("roles_present takes CFO/CXO probabilities in [0, 1]")
        if set(self.horizon_noise_mult) != set(HORIZONS):
            raise InvalidSpec("horizon_noise_mult must cover horizons 1, 7, 30")
        if self.n_firms < 1 or self.hist_vol_median <= 0 or self.hist_vol_log_sd < 0:
            raise InvalidSpec("invalid firm count or volatility distribution")

    def to_json(self) -> dict:
        d = asdict(self)
        d["utterances_per_cell"] = list(self.utterances_per_cell)
        d["horizon_noise_mult"] = {str(k): v for k, v in self.horizon_noise_mult.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PlantSpec":
        d = dict(d)
        if "utterances_per_cell" in d:
            d["utterances_per_cell"] = tuple(d["utterances_per_cell"])
        if "horizon_noise_mult" in d:
            d["horizon_noise_mult"] = {int(k): float(v) for k, v in d["horizon_noise_mult"].items()}
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidSpec("unknown PlantSpec fields: " + ", ".join(sorted(extra)))
        return cls(**d)


# Q&A shift ranges per role: negative values move toward buoyant speech,
# positive toward stressed; ranges keep the average delta near zero
_SHIFT = {Role.CEO: (-1.0, 0.6), Role.CFO: (-1.0, 0.7), Role.CXO: (-1.0, 0.5)}


def _mix(calm, stressed, buoyant, w):
    return (1 - w) * calm + w * stressed if w >= 0 else (1 + w) * calm - w * buoyant


def _draw_labels(rng, probs, size):
    return rng.choice(len(EMOTIONS), size=size, p=probs / probs.sum())


def _generate_call(spec: PlantSpec, seed: int, idx: int):
    rng = np.random.default_rng([seed, idx])
    lo, hi = spec.utterances_per_cell
    hist_vol = spec.hist_vol_median * math.exp(spec.hist_vol_log_sd * rng.standard_normal())
    firm = f"firm{int(rng.integers(spec.n_firms)):03d}"
    present = [Role.CEO]
    for role in (Role.CFO, Role.CXO):
        if rng.random() < spec.roles_present.get(role.tag, 1.0):
            present.append(role)

    # build per-section blocks; presentation speakers first, then Q&A
    blocks = {s: [] for s in SECTIONS}
    for role in present:
        shift = rng.uniform(*_SHIFT[role])
        ac_shift = 0.5 * shift + 0.5 * rng.uniform(*_SHIFT[role])
        for section in SECTIONS:
            w_t = shift if section is Section.QA else 0.0
            w_a = ac_shift if section is Section.QA else 0.0
            p_text = _mix(TEXT_CALM, TEXT_STRESSED, TEXT_BUOYANT, w_t)
            p_ac = _mix(ACOUSTIC_CALM, ACOUSTIC_STRESSED, ACOUSTIC_BUOYANT, w_a)
            k = int(rng.integers(lo, hi + 1))
            text = _draw_labels(rng, p_text, k)
            ac = _draw_labels(rng, p_ac, k)
            blocks[section] += [(role, t, a) for t, a in zip(text, ac)]
    qa = blocks[Section.QA]
    qa = [qa[i] for i in rng.permutation(len(qa))]  # interleave Q&A speakers
    utterances = []
    for section, block in ((Section.PRESENTATION, blocks[Section.PRESENTATION]), (Section.QA, qa)):
        for role, t, a in block:
            utterances.append(Utterance(role, section, len(utterances), EMOTIONS[t], EMOTIONS[a]))
    noise = rng.standard_normal(len(HORIZONS))
    car = rng.standard_normal(len(HORIZONS)) * spec.car_noise_sd
    return hist_vol, firm, tuple(utterances), noise, car


def generate_corpus(spec: PlantSpec = PlantSpec(), seed: int = 0, with_truth: bool = False):
    """Generate ``spec.n_calls`` calls; optionally also return the truth record.

    Calls are generated independently from ``(seed, call index)`` so the
    result does not depend on generation order.
    """
    spec.validate()
    calls, truth_rows = [], []
    planted = list(spec.coefficients)
    for idx in range(spec.n_calls):
        hist_vol, firm, utts, noise, car = _generate_call(spec, seed, idx)
        draft = CallRecord(f"call{idx:05d}", firm, utts, hist_vol, {})
        values = build_features(draft, interactions=[]).values
        signal = spec.hist_coef * hist_vol
        for name in planted:
            v = values[name]
            if v is not None:
                signal += spec.coefficients[name] * v
        targets = {}
        for j, h in enumerate(HORIZONS):
            vol = signal + spec.noise_sd * spec.horizon_noise_mult[h] * noise[j]
            targets[h] = Target(car=float(car[j]), realized_vol=max(0.0, float(vol)))
        calls.append(CallRecord(draft.call_id, firm, utts, hist_vol, targets))
        if with_truth:
            truth_rows.append({
                "call_id": draft.call_id,
                "signal": signal,
                "features": {name: values[name] for name in planted + [CONTROL]},
            })
    if not with_truth:
        return calls
    truth = {
        "seed": seed,
        "spec": spec.to_json(),
        "coefficients": dict(spec.coefficients),
        "calls": truth_rows,
    }
    return calls, truth


def dumps_truth(truth: dict) -> str:
    return json.dumps(truth, indent=1)
