"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line."""
import json
import time

import numpy as np
import pytest

from affectrisk.asl import EMOTIONS, EmotionLabel, map_emotion
from affectrisk.cli import main
from affectrisk.evaluation import bootstrap_importance, run_ablation
from affectrisk.features import build_matrix, concordance_from_pairs, moments
from affectrisk.gbt import GbtHyperparams, fit, gain_importance
from affectrisk.physics import AcousticConstants, PressureOperator, finite_diff_check, westervelt_residual
from affectrisk.piam import TrainHyper, evaluate, make_dataset, train
from affectrisk.synthgen import PlantSpec, generate_corpus

from oracles import exhaustive_stump, monte_carlo_concordance, moments_oracle, random_series, rel_err

ASL_EXPECTED = {
    "happiness": (-0.5, 1.0, 0.6),
    "surprise": (0.2, 0.2, 0.9),
    "neutral": (0.0, 0.5, 0.0),
    "sadness": (0.6, -0.8, -0.5),
    "fear": (1.0, -1.0, 0.8),
    "anger": (0.9, -0.7, 0.7),
    "disgust": (0.8, -0.9, 0.4),
}
PLANTED = ("CFO_delta_text_stability_mean", "CEO_q&a_text_arousal_std")


def verdict(capsys, n, title, checks):
    """``checks`` maps a description to a bool; all must hold."""
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    detail = "; ".join(checks) if ok else "failed: " + "; ".join(failed)
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {title}: {detail}")
    assert ok, detail


def test_1_asl_fidelity(capsys):
    t = time.perf_counter()
    got = {e.value: tuple(map_emotion(e)) for e in EMOTIONS}
    elapsed = time.perf_counter() - t
    coords = sum(len(v) for v in got.values())
    verdict(capsys, 1, "ASL fidelity", {
        f"{coords} coordinates exact": coords == 21 and got == ASL_EXPECTED,
        f"{elapsed * 1e3:.3f} ms < 1 ms": elapsed < 1e-3,
    })


def test_2_moment_oracle(capsys):
    rng = np.random.default_rng(2024)
    series = [random_series(rng) for _ in range(1000)]
    t = time.perf_counter()
    got = [moments(s) for s in series]
    elapsed = time.perf_counter() - t
    worst = 0.0
    for s, m in zip(series, got):
        want = moments_oracle(s)
        worst = max([worst] + [rel_err(a, b) for a, b in zip((m.mean, m.std, m.skewness, m.kurtosis_excess), want)])
    verdict(capsys, 2, "moment oracle", {
        f"max rel err {worst:.2e} <= 1e-12": worst <= 1e-12,
        f"{elapsed:.2f} s < 5 s": elapsed < 5,
    })


def test_3_physics(capsys):
    k = AcousticConstants()
    const_zero = bool(np.all(westervelt_residual(np.full(9, 0.37), k) == 0))
    ramp = westervelt_residual(np.arange(12, dtype=float), k)
    want = 2 * k.beta / (k.rho0 * k.c0 ** 4)
    ramp_ok = bool(np.allclose(ramp, want, rtol=1e-12, atol=0))
    rng = np.random.default_rng(33)
    t = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        T, D, Hd = int(rng.integers(3, 13)), int(rng.integers(1, 6)), int(rng.integers(1, 7))
        kc = AcousticConstants(c0=rng.uniform(0.5, 2), rho0=rng.uniform(0.5, 2),
                               beta=rng.uniform(0, 3), dt=rng.uniform(0.5, 2))
        op = PressureOperator.init(D, Hd, rng)
        worst = max(worst, finite_diff_check(rng.normal(size=(T, D)), op, kc, 1e-5))
    elapsed = time.perf_counter() - t
    verdict(capsys, 3, "physics correctness", {
        "constant p gives 0": const_zero,
        f"unit ramp gives {want}": ramp_ok,
        f"finite-diff max rel err {worst:.2e} < 1e-5": worst < 1e-5,
        f"{elapsed:.2f} s < 10 s": elapsed < 10,
    })


def test_4_regulariser_effect(capsys):
    t = time.perf_counter()
    train_set, test_set = make_dataset(200, seed=0), make_dataset(140, seed=1)
    wins, deltas, reductions = 0, [], []
    for s in range(10):
        stats = {}
        for lam in (0.0, 0.01):
            model, rep = train(train_set, TrainHyper(lam=lam, seed=s))
            stats[lam] = (rep.final.l_phys, evaluate(model, test_set).accuracy)
        wins += stats[0.01][0] < stats[0.0][0]
        reductions.append(stats[0.0][0] - stats[0.01][0])
        deltas.append(stats[0.01][1] - stats[0.0][1])
    elapsed = time.perf_counter() - t
    acc = float(np.mean(deltas))
    verdict(capsys, 4, "regulariser effect", {
        f"L_phys lower in {wins}/10 pairs (mean reduction {np.mean(reductions):.4f})": wins >= 9,
        f"held-out accuracy delta {100 * acc:+.2f} pp >= -5": acc >= -0.05,
        f"{elapsed:.0f} s < 300 s": elapsed < 300,
    })


def test_5_gbt_oracle(capsys):
    t = time.perf_counter()
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    hp = GbtHyperparams(learning_rate=1.0, max_depth=1, subsample=1.0, colsample=1.0, n_estimators=1,
                        l2_leaf=0.0, min_child_weight=0.0)
    ens = fit(X, y, hp, feature_names=["x"])
    cut, lm, rm = exhaustive_stump(X[:, 0], y)
    stump_ok = (ens.trees[0].threshold[0] == cut
                and np.array_equal(ens.predict_matrix(X), [lm, lm, rm, rm])
                and gain_importance(ens) == {"x": 1.0})
    monotone = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n, F = int(rng.integers(30, 300)), int(rng.integers(1, 10))
        Xr = rng.normal(size=(n, F))
        Xr[rng.random(Xr.shape) < 0.1] = np.nan
        yr = rng.normal(size=n) + np.nan_to_num(Xr[:, 0])
        hist = fit(Xr, yr, GbtHyperparams(subsample=1.0, seed=seed)).history["train_rmse"]
        monotone &= all(b <= a for a, b in zip(hist, hist[1:]))
    elapsed = time.perf_counter() - t
    verdict(capsys, 5, "GBT oracle", {
        "4-point stump matches enumeration": bool(stump_ok),
        "training RMSE non-increasing on 10 datasets": bool(monotone),
        f"{elapsed:.2f} s < 10 s": elapsed < 10,
    })


def test_6_table7_qualitative(capsys, planted_matrix):
    t = time.perf_counter()
    table = run_ablation(planted_matrix, iterations=50)
    elapsed = time.perf_counter() - t
    mm = [table.value("realized_vol", "multimodal", h) for h in (1, 7, 30)]
    fo = table.value("realized_vol", "factors_only", 30)
    car = [table.value("car", "multimodal", h) for h in (1, 7, 30)]
    verdict(capsys, 6, "qualitative ablation", {
        f"multimodal {mm[2]:.3f} - factors {fo:.3f} >= 0.10": mm[2] - fo >= 0.10,
        "multimodal R2 rises over 1/7/30 days ({:.3f} < {:.3f} < {:.3f})".format(*mm): mm[0] < mm[1] < mm[2],
        "CAR R2 in [-0.05, 0.05] ({})".format(", ".join(f"{c:.3f}" for c in car)):
            all(-0.05 <= c <= 0.05 for c in car),
        f"{elapsed:.0f} s < 600 s": elapsed < 600,
    })


def test_7_importance_recovery(capsys, planted_matrix):
    t = time.perf_counter()
    y = planted_matrix.target(30, "realized_vol")
    rep = bootstrap_importance(planted_matrix, y, GbtHyperparams(n_estimators=50), iterations=100)
    elapsed = time.perf_counter() - t
    freq = rep.top_k_frequency(5)
    summary = {r["feature"]: r for r in rep.importance_summary()}
    uniform = 1.0 / len(planted_matrix.schema)
    checks = {}
    for name in PLANTED:
        checks[f"{name} top-5 in {freq[name]:.0%}"] = freq[name] >= 0.8
        checks[f"{name} CI low {summary[name]['ci_low']:.4f} > {uniform:.4f}"] = summary[name]["ci_low"] > uniform
    checks[f"{elapsed:.0f} s < 600 s"] = elapsed < 600
    verdict(capsys, 7, "importance recovery", checks)


def test_8_determinism(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": {"n_calls": 300}, "eval": {"iterations": 3}}))
    primary = ["corpus.jsonl", "truth.json", "features.csv", "features_meta.json",
               "ablation.txt", "ablation.json", "ablation_samples.jsonl"]
    for run, threads in (("a", 1), ("b", 1), ("c", 2)):
        out = tmp_path / run
        assert main(["synth", "--config", str(cfg), "--seed", "7", "--out", str(out)]) == 0
        corpus = str(out / "corpus.jsonl")
        assert main(["features", "--config", str(cfg), "--seed", "7", "--corpus", corpus, "--out", str(out)]) == 0
        # same corpus path in every run so the recorded input hashes line up
        assert main(["ablate", "--config", str(cfg), "--seed", "7", "--corpus", corpus,
                     "--threads", str(threads), "--out", str(out)]) == 0

    def same(x, y):
        return all((tmp_path / x / f).read_bytes() == (tmp_path / y / f).read_bytes() for f in primary)

    verdict(capsys, 8, "determinism", {
        f"{len(primary)} primary outputs identical across two runs": same("a", "b"),
        "identical with 1 vs 2 worker processes": same("a", "c"),
    })


def test_9_concordance_calibration(capsys):
    n = 10 ** 5
    rng = np.random.default_rng(9)
    acoustic = rng.integers(0, 7, n)
    text = np.full(n, EmotionLabel.NEUTRAL.index)
    conc = concordance_from_pairs(acoustic, text)
    p_o, kappa_ref = monte_carlo_concordance(n, 9, fixed=EmotionLabel.NEUTRAL.index)
    verdict(capsys, 9, "concordance calibration", {
        f"agreement {conc.agreement:.4f} = 1/7 +- 0.01": abs(conc.agreement - 1 / 7) <= 0.01,
        f"kappa {conc.kappa:.4f} = 0 +- 0.02": abs(conc.kappa) <= 0.02,
        "matches direct computation": conc.agreement == pytest.approx(p_o, abs=1e-15)
        and conc.kappa == pytest.approx(kappa_ref, abs=1e-12),
    })
