"""Per-call feature rows built from Affective State Label series.

For every (role, section, modality, dimension) cell the four population
moments are emitted; Q&A-minus-presentation deltas of the mean and standard
deviation follow, then configurable interaction products and the 30-day
historical-volatility control.  Missing cells stay ``None`` (no imputation).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .asl import ASL_TABLE, DIMENSIONS, EMOTIONS, ASLVector, EmotionLabel, map_emotion
from .errors import EmptySeries, InvalidCombination, NoDualLabeledUtterances, UnknownFeatureName
from .ingest import HORIZONS, ROLES, SECTIONS, CallRecord, Role, Section

MODALITIES = ("acoustic", "text")
BASE_STATS = ("mean", "std", "skewness", "kurtosis")
DELTA_STATS = ("mean", "std")
CONTROL = "hist_vol_30d"
TARGET_KINDS = ("car", "realized_vol")


@dataclass(frozen=True)
class Moments:
    mean: float
    std: float
    skewness: float
    kurtosis_excess: float
    n: int
    degenerate: bool = False


# -- compensated arithmetic helpers for moments() ---------------------------

_SPLITTER = 134217729.0  # 2**27 + 1


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _fsum_dd(parts):
    """Sum to a (hi, lo) pair: hi is the rounded exact sum, lo the residual."""
    hi = math.fsum(parts)
    return hi, math.fsum(list(parts) + [-hi])


def moments(values: Iterable[float]) -> Moments:
    """Population mean, std, skewness and excess kurtosis.

    Deviations from the mean and their powers are carried as unevaluated
    double-double sums and accumulated exactly, so skewness and kurtosis keep
    full relative precision even when they are close to zero.  A series whose
    values are all equal reports zero spread, skewness and kurtosis with
    ``degenerate=True``.
    """
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    n = x.size
    if n == 0:
        raise EmptySeries("moments of an empty series")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if x.min() == x.max():
        return Moments(float(x[0]), 0.0, 0.0, 0.0, n, degenerate=True)

    mu = math.fsum(x) / n
    # exact deviation x - mu as dh + dl
    dh = x - mu
    bb = dh - x
    dl = (x - (dh - bb)) + (-mu - bb)
    p2, e2 = _two_prod(dh, dh)
    r2 = e2 + 2.0 * dh * dl + dl * dl
    p3, e3 = _two_prod(p2, dh)
    r3 = e3 + p2 * dl + r2 * dh
    p4, e4 = _two_prod(p2, p2)
    r4 = e4 + 2.0 * p2 * r2

    s1 = math.fsum(np.concatenate([dh, dl]))
    s2 = _fsum_dd(np.concatenate([p2, r2]))
    s3 = _fsum_dd(np.concatenate([p3, r3]))
    s4 = _fsum_dd(np.concatenate([p4, r4]))

    # re-centre on the exact mean: mu is off by m1
    m1 = s1 / n
    n2 = _fsum_dd([s2[0], s2[1], -s1 * m1])
    n3 = math.fsum([s3[0], s3[1], -3.0 * m1 * s2[0], 2.0 * n * m1 ** 3])
    n4 = _fsum_dd([s4[0], s4[1], -4.0 * m1 * s3[0], 6.0 * m1 * m1 * s2[0], -3.0 * n * m1 ** 4])

    var = n2[0] / n
    std = math.sqrt(var)
    skew = n3 * math.sqrt(n) / (n2[0] * math.sqrt(n2[0]))
    # n*N4 - 3*N2^2 without losing the leading digits
    a_hi, a_lo = _two_prod(float(n), n4[0])
    sq_hi, sq_lo = _two_prod(n2[0], n2[0])
    sq_lo = sq_lo + 2.0 * n2[0] * n2[1]
    t_hi, t_lo = _two_prod(3.0, sq_hi)
    num = math.fsum([a_hi, a_lo, n * n4[1], -t_hi, -t_lo, -3.0 * sq_lo])
    kurt = num / (sq_hi + sq_lo)
    return Moments(mu + m1, std, skew, kurt, n)


@lru_cache(maxsize=1 << 16)
def _cell_moments(values: tuple) -> Moments:
    # cells draw from 7 coordinates per dimension, so sorted series repeat a lot
    return moments(values)


# -- naming ----------------------------------------------------------------

def _role_tag(role) -> str:
    if isinstance(role, Role):
        return role.tag
    if isinstance(role, str) and role.upper() in {r.tag for r in ROLES}:
        return role.upper()
    raise InvalidCombination(f"invalid role {role!r}")


def _section_tag(section) -> str:
    if isinstance(section, Section):
        return section.tag
    if section in ("presentation", "q&a", "delta"):
        return section
    raise InvalidCombination(f"invalid section {section!r}")


def feature_name(role, section, modality: str, dimension: str, stat: str) -> str:
    """Canonical feature name, e.g. ``CFO_delta_text_stability_mean``."""
    r = _role_tag(role)
    s = _section_tag(section)
    if modality not in MODALITIES:
        raise InvalidCombination(f"invalid modality {modality!r}")
    if dimension not in DIMENSIONS:
        raise InvalidCombination(f"invalid dimension {dimension!r}")
    allowed = DELTA_STATS if s == "delta" else BASE_STATS
    if stat not in allowed:
        raise InvalidCombination(f"stat {stat!r} not valid for section {s!r}")
    return f"{r}_{s}_{modality}_{dimension}_{stat}"


def base_feature_names() -> list[str]:
    return [
        feature_name(r, s, m, d, st)
        for r in ROLES for s in SECTIONS for m in MODALITIES for d in DIMENSIONS for st in BASE_STATS
    ]


def delta_feature_names() -> list[str]:
    return [
        feature_name(r, "delta", m, d, st)
        for r in ROLES for m in MODALITIES for d in DIMENSIONS for st in DELTA_STATS
    ]


def default_interaction_spec() -> list[tuple[str, str]]:
    spec = []
    for r in ROLES:
        stab = feature_name(r, "delta", "text", "stability", "mean")
        spec.append((stab, feature_name(r, "delta", "text", "tension", "mean")))
        spec.append((CONTROL, stab))
    return spec


def interaction_name(a: str, b: str) -> str:
    return f"inter__{a}__{b}"


def feature_schema(interactions: Sequence[tuple[str, str]] | None = None) -> list[str]:
    if interactions is None:
        interactions = default_interaction_spec()
    known = set(base_feature_names()) | set(delta_feature_names()) | {CONTROL}
    for a, b in interactions:
        for name in (a, b):
            if name not in known:
                raise UnknownFeatureName(name)
    return (
        base_feature_names()
        + delta_feature_names()
        + [interaction_name(a, b) for a, b in interactions]
        + [CONTROL]
    )


def feature_modality(name: str) -> str | None:
    """'acoustic' / 'text' for ASL-derived names, 'control' for the control,
    None for interactions that mix modalities or the control."""
    if name == CONTROL:
        return "control"
    if name.startswith("inter__"):
        a, b = name[len("inter__"):].split("__", 1)
        ma, mb = feature_modality(a), feature_modality(b)
        return ma if ma == mb else None
    for m in MODALITIES:
        if f"_{m}_" in name:
            return m
    return None


# -- rows ------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureRow:
    call_id: str
    values: Mapping[str, float | None]


def asl_series(
    call: CallRecord,
    role: Role,
    section: Section,
    modality: str,
    table: Mapping[EmotionLabel, ASLVector] = ASL_TABLE,
) -> list[ASLVector]:
    out = []
    for u in sorted(call.utterances, key=lambda u: u.order):
        if u.role is role and u.section is section:
            label = u.emotion(modality)
            if label is not None:
                out.append(map_emotion(label, table))
    return out


def build_interactions(values: Mapping[str, float | None], spec: Sequence[tuple[str, str]]) -> dict[str, float | None]:
    out = {}
    for a, b in spec:
        for name in (a, b):
            if name not in values:
                raise UnknownFeatureName(name)
        va, vb = values[a], values[b]
        out[interaction_name(a, b)] = None if va is None or vb is None else va * vb
    return out


def build_features(
    call: CallRecord,
    interactions: Sequence[tuple[str, str]] | None = None,
    table: Mapping[EmotionLabel, ASLVector] = ASL_TABLE,
) -> FeatureRow:
    if interactions is None:
        interactions = default_interaction_spec()
    values: dict[str, float | None] = {}
    cell = {}
    for r in ROLES:
        for s in SECTIONS:
            for m in MODALITIES:
                series = asl_series(call, r, s, m, table)
                for k, d in enumerate(DIMENSIONS):
                    mom = _cell_moments(tuple(sorted(v[k] for v in series))) if series else None
                    cell[r, s, m, d] = mom
                    stats = (
                        (None,) * 4 if mom is None
                        else (mom.mean, mom.std, mom.skewness, mom.kurtosis_excess)
                    )
                    for st, v in zip(BASE_STATS, stats):
                        values[feature_name(r, s, m, d, st)] = v
    for r in ROLES:
        for m in MODALITIES:
            for d in DIMENSIONS:
                pre = cell[r, Section.PRESENTATION, m, d]
                qa = cell[r, Section.QA, m, d]
                ok = pre is not None and qa is not None
                values[feature_name(r, "delta", m, d, "mean")] = qa.mean - pre.mean if ok else None
                values[feature_name(r, "delta", m, d, "std")] = qa.std - pre.std if ok else None
    values[CONTROL] = float(call.hist_vol_30d)
    values.update(build_interactions(values, interactions))
    schema = feature_schema(interactions)
    return FeatureRow(call.call_id, {k: values[k] for k in schema})


# -- matrices ----------------------------------------------------------------

@dataclass
class FeatureMatrix:
    schema: list[str]
    rows: list[FeatureRow]
    targets: list[dict] = field(default_factory=list)
    interactions: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def call_ids(self) -> list[str]:
        return [r.call_id for r in self.rows]

    def to_array(self, columns: Sequence[str] | None = None) -> np.ndarray:
        """Dense float matrix with NaN for missing values."""
        cols = list(self.schema if columns is None else columns)
        out = np.full((len(self.rows), len(cols)), np.nan)
        for i, row in enumerate(self.rows):
            for j, c in enumerate(cols):
                v = row.values.get(c)
                if v is not None:
                    out[i, j] = v
        return out

    def target(self, horizon: int, kind: str) -> np.ndarray:
        if kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {kind!r}")
        out = np.full(len(self.rows), np.nan)
        for i, t in enumerate(self.targets):
            cell = t.get(horizon)
            if cell is not None:
                out[i] = getattr(cell, kind)
        return out


def build_matrix(
    calls: Sequence[CallRecord],
    interactions: Sequence[tuple[str, str]] | None = None,
    table: Mapping[EmotionLabel, ASLVector] = ASL_TABLE,
) -> FeatureMatrix:
    if interactions is None:
        interactions = default_interaction_spec()
    interactions = [tuple(p) for p in interactions]
    rows = [build_features(c, interactions, table) for c in calls]
    return FeatureMatrix(
        schema=feature_schema(interactions),
        rows=rows,
        targets=[dict(c.targets) for c in calls],
        interactions=interactions,
    )


def target_columns() -> list[str]:
    return [f"{kind}_{h}" for h in HORIZONS for kind in TARGET_KINDS]


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_feature_matrix(matrix: FeatureMatrix, stream) -> None:
    """Write the matrix as CSV: call_id, schema columns, then target columns.
    Missing values are empty fields."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["call_id"] + matrix.schema + target_columns())
    for row, tgt in zip(matrix.rows, matrix.targets):
        cells = [row.call_id] + [_fmt(row.values.get(c)) for c in matrix.schema]
        for h in HORIZONS:
            t = tgt.get(h)
            cells += ["", ""] if t is None else [_fmt(t.car), _fmt(t.realized_vol)]
        w.writerow(cells)


def read_feature_matrix(stream) -> tuple[list[str], list[FeatureRow]]:
    r = csv.reader(stream)
    header = next(r)
    tcols = set(target_columns())
    schema = [c for c in header[1:] if c not in tcols]
    rows = []
    for rec in r:
        vals = dict(zip(header[1:], rec[1:]))
        rows.append(FeatureRow(rec[0], {c: (float(vals[c]) if vals[c] != "" else None) for c in schema}))
    return schema, rows


def matrix_metadata(matrix: FeatureMatrix, corpus_sha256: str | None) -> dict:
    return {
        "schema": matrix.schema,
        "interactions": [list(p) for p in matrix.interactions],
        "corpus_sha256": corpus_sha256,
        "n_rows": len(matrix.rows),
        "missing_encoding": "empty field",
    }


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- modality concordance ------------------------------------------------------

@dataclass(frozen=True)
class Concordance:
    table: np.ndarray  # rows: acoustic label, cols: text label
    n: int
    agreement: float
    kappa: float

    def to_json(self) -> dict:
        return {
            "labels": [e.value for e in EMOTIONS],
            "rows": "acoustic",
            "cols": "text",
            "table": self.table.tolist(),
            "n": self.n,
            "agreement": self.agreement,
            "kappa": self.kappa,
        }


def concordance_from_table(table: np.ndarray) -> Concordance:
    table = np.asarray(table, dtype=np.int64)
    n = int(table.sum())
    if n == 0:
        raise NoDualLabeledUtterances("no utterances carry both modality labels")
    p_o = np.trace(table) / n
    p_e = float(np.dot(table.sum(axis=1), table.sum(axis=0))) / (n * n)
    # both raters constant and identical: perfect agreement by convention
    kappa = 1.0 if p_e == 1.0 else (p_o - p_e) / (1.0 - p_e)
    return Concordance(table, n, float(p_o), float(kappa))


def concordance_from_pairs(acoustic: Sequence[int], text: Sequence[int]) -> Concordance:
    table = np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64)
    np.add.at(table, (np.asarray(acoustic, dtype=np.intp), np.asarray(text, dtype=np.intp)), 1)
    return concordance_from_table(table)


def modality_concordance(calls: Iterable[CallRecord]) -> dict[str, Concordance]:
    """Acoustic-vs-text agreement per executive role (and ``ALL`` pooled).

    Roles without any dual-labelled utterance are omitted.
    """
    k = len(EMOTIONS)
    tables = {r.tag: np.zeros((k, k), dtype=np.int64) for r in ROLES}
    for call in calls:
        for u in call.utterances:
            if u.text_emotion is not None and u.acoustic_emotion is not None:
                tables[u.role.tag][u.acoustic_emotion.index, u.text_emotion.index] += 1
    pooled = sum(tables.values())
    if pooled.sum() == 0:
        raise NoDualLabeledUtterances("no utterances carry both modality labels")
    out = {tag: concordance_from_table(t) for tag, t in tables.items() if t.sum() > 0}
    out["ALL"] = concordance_from_table(pooled)
    return out
