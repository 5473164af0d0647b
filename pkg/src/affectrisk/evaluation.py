"""Out-of-sample evaluation: R^2, splits, bootstrap validation, bootstrap
importance and the four-variant modality ablation."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateTarget, MissingTargets, TooFewCalls
from .features import CONTROL, FeatureMatrix, feature_modality
from .gbt import GbtHyperparams, fit, gain_importance
from .ingest import HORIZONS

VARIANTS = ("factors_only", "acoustic_only", "text_only", "multimodal")
VARIANT_LABELS = {
    "factors_only": "Factors-Only",
    "acoustic_only": "Acoustic-Only",
    "text_only": "Text-Only",
    "multimodal": "Multimodal",
}


def r2_oos(predictions, actuals, baseline_mean: float) -> float:
    """1 - SSE / sum((y - baseline_mean)^2); the baseline is the training mean."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(actuals, dtype=np.float64)
    if p.shape != y.shape or y.size == 0:
        raise ValueError("predictions and actuals must have equal non-zero length")
    denom = float(np.sum((y - baseline_mean) ** 2))
    if denom == 0.0:
        raise DegenerateTarget("actuals all equal the baseline mean")
    return 1.0 - float(np.sum((y - p) ** 2)) / denom


@dataclass(frozen=True)
class SplitPolicy:
    mode: str = "chronological"
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("chronological", "random"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")


def split_indices(n: int, policy: SplitPolicy = SplitPolicy(), order=None) -> tuple[np.ndarray, np.ndarray]:
    """Train/test row indices.  Test size is ``floor(n * test_fraction)``,
    clamped to [1, n-1].  Chronological mode puts the latest rows (by
    ``order``, default row position) in the test set."""
    if n < 2:
        raise TooFewCalls("need at least 2 calls to split")
    n_test = min(max(int(math.floor(n * policy.test_fraction + 1e-9)), 1), n - 1)
    if policy.mode == "chronological":
        ranked = np.arange(n) if order is None else np.argsort(np.asarray(order), kind="stable")
        test = np.sort(ranked[n - n_test:])
    else:
        perm = np.random.default_rng(policy.seed).permutation(n)
        test = np.sort(perm[:n_test])
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def split(calls: Sequence, policy: SplitPolicy = SplitPolicy(), order=None):
    train, test = split_indices(len(calls), policy, order)
    return [calls[i] for i in train], [calls[i] for i in test]


def _percentile_ci(samples, level=0.95) -> tuple[float, float]:
    a = np.asarray(samples, dtype=np.float64)
    lo, hi = np.percentile(a, [50 * (1 - level), 100 - 50 * (1 - level)])
    return float(lo), float(hi)


@dataclass
class BootstrapReport:
    r2: list = field(default_factory=list)
    n_trees: list = field(default_factory=list)
    importance: dict = field(default_factory=dict)  # feature -> per-iteration samples

    @property
    def iterations(self) -> int:
        return max(len(self.r2), len(next(iter(self.importance.values()), [])))

    @property
    def mean(self) -> float:
        return float(np.mean(self.r2))

    @property
    def ci(self) -> tuple[float, float]:
        return _percentile_ci(self.r2)

    def importance_summary(self) -> list[dict]:
        """Features ranked by mean importance, with 95% percentile CIs."""
        rows = []
        for name, s in self.importance.items():
            lo, hi = _percentile_ci(s)
            rows.append({
                "feature": name,
                "mean": float(np.mean(s)),
                "median": float(np.median(s)),
                "q1": float(np.percentile(s, 25)),
                "q3": float(np.percentile(s, 75)),
                "ci_low": lo,
                "ci_high": hi,
            })
        rows.sort(key=lambda r: (-r["mean"], r["feature"]))
        return rows

    def top_k_frequency(self, k: int = 5) -> dict[str, float]:
        """Fraction of iterations in which each feature ranks in the top k."""
        names = list(self.importance)
        mat = np.array([self.importance[n] for n in names])  # features x iterations
        counts = np.zeros(len(names))
        for it in range(mat.shape[1]):
            order = sorted(range(len(names)), key=lambda j: (-mat[j, it], j))
            counts[order[:k]] += 1
        return {n: float(c / mat.shape[1]) for n, c in zip(names, counts)}

    def summary(self) -> dict:
        out = {"iterations": self.iterations}
        if self.r2:
            lo, hi = self.ci
            out.update({"r2_mean": self.mean, "r2_ci_low": lo, "r2_ci_high": hi})
        if self.importance:
            out["importance"] = self.importance_summary()
        return out

    def iteration_lines(self) -> list[str]:
        names = list(self.importance)
        lines = []
        for i in range(self.iterations):
            rec = {"iteration": i}
            if self.r2:
                rec["r2"] = self.r2[i]
                rec["n_trees"] = self.n_trees[i]
            if names:
                rec["importance"] = {n: self.importance[n][i] for n in names}
            lines.append(json.dumps(rec))
        return lines


# -- bootstrap workers ------------------------------------------------------

def _iteration_rng(seed: int, i: int):
    return np.random.default_rng([seed, i])


def _validate_iteration(args):
    X_tr, y_tr, X_te, y_te, hp, seed, i, names = args
    rng = _iteration_rng(seed, i)
    n = y_tr.size
    boot = rng.integers(0, n, n)
    oob = np.setdiff1d(np.arange(n), boot)
    hp_i = hp.replace(seed=int(rng.integers(2 ** 31)))
    valid = (X_tr[oob], y_tr[oob]) if oob.size else None
    ens = fit(X_tr[boot], y_tr[boot], hp_i, feature_names=names, valid=valid)
    pred = ens.predict_matrix(X_te)
    try:
        r2 = r2_oos(pred, y_te, ens.base_score)
    except DegenerateTarget:
        if np.any(pred != y_te):
            raise
        r2 = 0.0  # constant target reproduced exactly by the baseline
    return r2, len(ens.trees)


def _importance_iteration(args):
    X, y, hp, seed, i, names = args
    rng = _iteration_rng(seed, i)
    n = y.size
    boot = rng.integers(0, n, n)
    hp_i = hp.replace(seed=int(rng.integers(2 ** 31)))
    ens = fit(X[boot], y[boot], hp_i, feature_names=names)
    imp = gain_importance(ens)
    return [imp[n] for n in names]


def _map(func, jobs, n_jobs):
    if n_jobs <= 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, jobs))


def _xy(matrix, target, columns):
    if isinstance(matrix, FeatureMatrix):
        cols = list(matrix.schema if columns is None else columns)
        return matrix.to_array(cols), np.asarray(target, dtype=np.float64), cols
    X = np.ascontiguousarray(matrix, dtype=np.float64)
    cols = list(columns) if columns is not None else [f"f{i}" for i in range(X.shape[1])]
    return X, np.asarray(target, dtype=np.float64), cols


def bootstrap_validate(
    matrix,
    target,
    hp: GbtHyperparams = GbtHyperparams(),
    policy: SplitPolicy = SplitPolicy(),
    iterations: int = 50,
    seed: int = 0,
    columns: Sequence[str] | None = None,
    n_jobs: int = 1,
    order=None,
) -> BootstrapReport:
    """Refit on bootstrap resamples of the training rows, score on a fixed test set.

    Out-of-bag training rows act as the early-stopping holdout of each
    iteration.  Iteration ``i`` draws from ``default_rng([seed, i])``, so the
    report is identical for any ``n_jobs``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    X, y, names = _xy(matrix, target, columns)
    train, test = split_indices(len(y), policy, order)
    X_tr, y_tr, X_te, y_te = X[train], y[train], X[test], y[test]
    jobs = [(X_tr, y_tr, X_te, y_te, hp, seed, i, names) for i in range(iterations)]
    results = _map(_validate_iteration, jobs, n_jobs)
    return BootstrapReport(r2=[r for r, _ in results], n_trees=[t for _, t in results])


def bootstrap_importance(
    matrix,
    target,
    hp: GbtHyperparams = GbtHyperparams(n_estimators=50),
    iterations: int = 100,
    seed: int = 0,
    columns: Sequence[str] | None = None,
    n_jobs: int = 1,
) -> BootstrapReport:
    """Gain-importance distributions over bootstrap refits with a fixed number
    of trees (no early stopping)."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    X, y, names = _xy(matrix, target, columns)
    jobs = [(X, y, hp, seed, i, names) for i in range(iterations)]
    results = _map(_importance_iteration, jobs, n_jobs)
    imp = {n: [r[j] for r in results] for j, n in enumerate(names)}
    return BootstrapReport(importance=imp)


# -- ablation ----------------------------------------------------------------

def variant_columns(schema: Sequence[str], variant: str) -> list[str]:
    if variant == "factors_only":
        return [CONTROL]
    if variant == "multimodal":
        return list(schema)
    if variant in ("acoustic_only", "text_only"):
        m = variant.split("_")[0]
        return [c for c in schema if feature_modality(c) == m]
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class AblationTable:
    horizons: list
    cells: dict = field(default_factory=dict)  # (target_kind, variant, horizon) -> BootstrapReport

    def value(self, kind: str, variant: str, horizon: int) -> float:
        return self.cells[kind, variant, horizon].mean

    def to_json(self) -> dict:
        return {
            "horizons": list(self.horizons),
            "cells": [
                {"target": k, "variant": v, "horizon": h, **rep.summary()}
                for (k, v, h), rep in self.cells.items()
            ],
        }

    def render(self) -> str:
        cols = [("car", "multimodal")] + [("realized_vol", v) for v in VARIANTS]
        head1 = ["", "CAR R2"] + ["Volatility R2"] + [""] * (len(VARIANTS) - 1)
        head2 = ["Horizon"] + [VARIANT_LABELS[v] for _, v in cols]
        rows = [head1, head2]
        for h in self.horizons:
            label = f"t+{h} day" + ("s" if h > 1 else "")
            cells = [label]
            for k, v in cols:
                rep = self.cells.get((k, v, h))
                cells.append("" if rep is None else f"{rep.mean:.3f}")
            rows.append(cells)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head2))]
        return "\n".join(
            "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
            for r in rows
        ) + "\n"


def run_ablation(
    matrix: FeatureMatrix,
    horizons: Sequence[int] = HORIZONS,
    policy: SplitPolicy = SplitPolicy(),
    hp: GbtHyperparams = GbtHyperparams(),
    iterations: int = 50,
    seed: int = 0,
    n_jobs: int = 1,
) -> AblationTable:
    """Bootstrap R^2 for CAR (multimodal) and realized volatility (all four
    variants) at every requested horizon.  All cells share the same bootstrap
    resamples, so variant differences are paired."""
    for h in horizons:
        if h not in HORIZONS:
            raise ValueError(f"unsupported horizon {h}")
    table = AblationTable(list(horizons))
    for h in horizons:
        for kind in ("car", "realized_vol"):
            y = matrix.target(h, kind)
            if np.isnan(y).any():
                raise MissingTargets(f"{int(np.isnan(y).sum())} call(s) lack {kind} at horizon {h}")
            variants = ("multimodal",) if kind == "car" else VARIANTS
            for v in variants:
                table.cells[kind, v, h] = bootstrap_validate(
                    matrix, y, hp, policy, iterations, seed,
                    columns=variant_columns(matrix.schema, v), n_jobs=n_jobs,
                )
    return table
