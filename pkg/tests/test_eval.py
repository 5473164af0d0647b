import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affectrisk.errors import DegenerateTarget, MissingTargets, TooFewCalls
from affectrisk.evaluation import (
    VARIANTS,
    SplitPolicy,
    bootstrap_importance,
    bootstrap_validate,
    r2_oos,
    run_ablation,
    split,
    split_indices,
    variant_columns,
)
from affectrisk.features import CONTROL, build_matrix, feature_modality
from affectrisk.gbt import GbtHyperparams
from affectrisk.ingest import CallRecord, Target
from affectrisk.synthgen import PlantSpec, generate_corpus

# hist_vol dominates, text carries more planted signal than acoustic
ORDERING_SPEC = PlantSpec(
    hist_coef=2.0,
    coefficients={
        "CFO_delta_text_stability_mean": -0.3,
        "CEO_q&a_text_arousal_std": 0.4,
        "CFO_delta_acoustic_stability_mean": -0.08,
    },
    n_calls=800,
)


def test_r2_examples():
    y = np.array([1.0, 2.0, 4.0, 7.0])
    assert r2_oos(y, y, 3.0) == 1.0
    assert r2_oos(np.full(4, 3.0), y, 3.0) == 0.0
    worse = r2_oos(np.array([7.0, 4.0, 2.0, 1.0]), y, 3.0)
    assert worse < 0
    assert worse == pytest.approx(1 - 80 / 22)
    with pytest.raises(DegenerateTarget):
        r2_oos([1.0, 2.0], [5.0, 5.0], 5.0)
    with pytest.raises(ValueError):
        r2_oos([1.0], [1.0, 2.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-8000, 8000), min_size=2, max_size=40), st.integers(-80, 80))
def test_r2_identities(y, b):
    y, b = np.array(y) / 8.0, b / 8.0
    if np.all(y == b):
        return
    assert r2_oos(y, y, b) == 1.0
    assert r2_oos(np.full(y.size, b), y, b) == 0.0


def test_split_examples():
    train, test = split_indices(10, SplitPolicy())
    assert list(test) == [8, 9] and list(train) == list(range(8))
    order = [8, 9, 0, 1, 2, 3, 4, 5, 6, 7]  # calls 0 and 1 are the latest
    _, test = split_indices(10, SplitPolicy(), order=order)
    assert list(test) == [0, 1]
    train, test = split_indices(3, SplitPolicy(test_fraction=0.5))
    assert (len(train), len(test)) == (2, 1)
    a = split_indices(50, SplitPolicy("random", 0.3, seed=4))
    b = split_indices(50, SplitPolicy("random", 0.3, seed=4))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    calls = list("abcde")
    assert split(calls, SplitPolicy(test_fraction=0.4)) == (["a", "b", "c"], ["d", "e"])
    with pytest.raises(TooFewCalls):
        split_indices(1)
    with pytest.raises(ValueError):
        SplitPolicy("shuffled")


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 300), frac=st.floats(0.01, 0.99), mode=st.sampled_from(["chronological", "random"]),
       seed=st.integers(0, 1000))
def test_split_partition(n, frac, mode, seed):
    train, test = split_indices(n, SplitPolicy(mode, frac, seed))
    assert len(np.intersect1d(train, test)) == 0
    assert np.array_equal(np.union1d(train, test), np.arange(n))
    assert 1 <= len(test) <= n - 1


def test_constant_target_r2_zero():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 3))
    rep = bootstrap_validate(X, np.full(60, 0.4), iterations=5)
    assert rep.r2 == [0.0] * 5
    assert rep.ci == (0.0, 0.0)


def test_single_iteration():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 3))
    y = X[:, 0] + rng.normal(0, 0.3, 80)
    rep = bootstrap_validate(X, y, iterations=1)
    assert rep.iterations == 1 and len(rep.r2) == 1
    assert rep.ci == (rep.r2[0], rep.r2[0]) and rep.mean == rep.r2[0]
    with pytest.raises(ValueError):
        bootstrap_validate(X, y, iterations=0)


def test_report_lines_and_ci_order():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 4))
    y = X[:, 1] + rng.normal(0, 0.5, 100)
    rep = bootstrap_validate(X, y, iterations=8, seed=3)
    lo, hi = rep.ci
    assert lo <= rep.mean <= hi
    lines = [json.loads(s) for s in rep.iteration_lines()]
    assert [d["iteration"] for d in lines] == list(range(8))
    assert [d["r2"] for d in lines] == rep.r2


def test_parallel_matches_serial():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 5))
    y = X[:, 0] - X[:, 2] + rng.normal(0, 0.3, 120)
    a = bootstrap_validate(X, y, iterations=4, seed=9, n_jobs=1)
    b = bootstrap_validate(X, y, iterations=4, seed=9, n_jobs=2)
    assert a.r2 == b.r2 and a.n_trees == b.n_trees
    ia = bootstrap_importance(X, y, iterations=3, seed=9, n_jobs=1)
    ib = bootstrap_importance(X, y, iterations=3, seed=9, n_jobs=2)
    assert ia.importance == ib.importance


def test_importance_vectors_sum_to_one():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(90, 6))
    y = X[:, 0] ** 2 + rng.normal(0, 0.2, 90)
    rep = bootstrap_importance(X, y, iterations=6)
    mat = np.array(list(rep.importance.values()))
    assert mat.shape == (6, 6)
    for col in mat.T:
        assert col.sum() == pytest.approx(1.0) or np.all(col == 0)
    for row in rep.importance_summary():
        assert row["ci_low"] <= row["mean"] <= row["ci_high"]


def test_single_feature_importance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(70, 1))
    rep = bootstrap_importance(x, x[:, 0] + rng.normal(0, 0.1, 70), iterations=5, columns=["only"])
    assert rep.importance["only"] == [1.0] * 5


def test_noise_target_importance_is_calibrated():
    matrix = build_matrix(generate_corpus(PlantSpec(n_calls=400), seed=1))
    F = len(matrix.schema)
    worst = []
    for seed in range(5):
        y = np.random.default_rng(seed).normal(size=len(matrix))
        rep = bootstrap_importance(matrix, y, iterations=30, seed=seed)
        worst.append(max(r["ci_low"] for r in rep.importance_summary()))
    assert np.median(worst) <= 2.0 / F


def test_variant_columns(planted_matrix):
    schema = planted_matrix.schema
    assert variant_columns(schema, "factors_only") == [CONTROL]
    assert variant_columns(schema, "multimodal") == schema
    for m in ("acoustic", "text"):
        cols = variant_columns(schema, f"{m}_only")
        assert cols and CONTROL not in cols
        assert all(feature_modality(c) == m for c in cols)
    with pytest.raises(ValueError):
        variant_columns(schema, "audio_only")


def test_factors_only_identity():
    # discrete hist_vol levels so every held-out value also appears in training
    calls = []
    rng = np.random.default_rng(6)
    for c in generate_corpus(PlantSpec(n_calls=120), seed=2):
        hv = float(rng.choice([0.15, 0.25, 0.4, 0.6]))
        t = {h: Target(float(rng.normal(0, 0.01)), hv) for h in (1, 7, 30)}
        calls.append(CallRecord(c.call_id, c.firm_id, c.utterances, hv, t))
    exact = GbtHyperparams(learning_rate=1.0, max_depth=2, subsample=1.0, colsample=1.0,
                           l2_leaf=0.0, min_child_weight=0.0, n_estimators=1)
    table = run_ablation(build_matrix(calls), horizons=[30], iterations=3, hp=exact)
    assert table.value("realized_vol", "factors_only", 30) == pytest.approx(1.0, abs=1e-12)


def test_missing_targets_rejected():
    calls = generate_corpus(PlantSpec(n_calls=20), seed=0)
    c = calls[3]
    calls[3] = CallRecord(c.call_id, c.firm_id, c.utterances, c.hist_vol_30d, {1: c.targets[1]})
    with pytest.raises(MissingTargets):
        run_ablation(build_matrix(calls), horizons=[30], iterations=1)
    with pytest.raises(ValueError):
        run_ablation(build_matrix(calls), horizons=[14], iterations=1)


def test_ablation_table_shape(planted_matrix):
    table = run_ablation(planted_matrix, horizons=[30], iterations=2)
    assert set(table.cells) == {("car", "multimodal", 30)} | {("realized_vol", v, 30) for v in VARIANTS}
    text = table.render()
    assert "Multimodal" in text and "t+30 days" in text
    doc = table.to_json()
    assert len(doc["cells"]) == 5 and all(c["iterations"] == 2 for c in doc["cells"])


def test_car_column_is_near_zero(planted_matrix):
    table = run_ablation(planted_matrix, iterations=5)
    for h in (1, 7, 30):
        assert -0.05 <= table.value("car", "multimodal", h) <= 0.05


def test_multimodal_beats_factors(planted_matrix):
    y = planted_matrix.target(30, "realized_vol")
    multi = bootstrap_validate(planted_matrix, y, iterations=10)
    base = bootstrap_validate(planted_matrix, y, iterations=10, columns=[CONTROL])
    assert multi.mean - base.mean >= 0.10


def test_qualitative_ordering_on_ordering_corpus():
    matrix = build_matrix(generate_corpus(ORDERING_SPEC, seed=0))
    table = run_ablation(matrix, horizons=[30], iterations=5)
    r = [table.value("realized_vol", v, 30) for v in ("multimodal", "factors_only", "text_only", "acoustic_only")]
    assert r[0] > r[1] > r[2] > r[3], r


def test_planted_feature_top5(planted_matrix):
    y = planted_matrix.target(30, "realized_vol")
    rep = bootstrap_importance(planted_matrix, y, iterations=20)
    assert rep.top_k_frequency(5)["CFO_delta_text_stability_mean"] >= 0.8
