"""Command-line entry point: ``affectrisk <command> [options]``.

Exit codes: 0 success, 1 failed check or bad data, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import copy
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .asl import ASL_TABLE, load_asl_override
from .errors import AffectRiskError, AslOverrideRejected, ConfigError, CorpusError, InvalidSpec
from .evaluation import SplitPolicy, bootstrap_importance, r2_oos, run_ablation, split_indices
from .features import (
    build_matrix,
    default_interaction_spec,
    matrix_metadata,
    modality_concordance,
    sha256_file,
    write_feature_matrix,
)
from .gbt import GbtHyperparams, fit, gain_importance
from .ingest import HORIZONS, ParseStats, dumps_corpus, parse_corpus_file, validate_call
from .physics import AcousticConstants, PressureOperator, finite_diff_check
from .synthgen import PlantSpec, dumps_truth, generate_corpus

TARGET_KINDS = ("car", "realized_vol")


def default_config() -> dict:
    hp = GbtHyperparams()
    return {
        "seed": 0,
        "paths": {"corpus": None, "out": "out"},
        "features": {"interactions": [list(p) for p in default_interaction_spec()]},
        "gbt": {k: getattr(hp, k) for k in hp.__dataclass_fields__ if k != "seed"},
        "eval": {
            "policy": "chronological",
            "test_fraction": 0.2,
            "iterations": 50,
            "horizons": list(HORIZONS),
            "importance_iterations": 100,
            "importance_estimators": 50,
            "top_k": 15,
            "target": "realized_vol",
            "target_horizon": 30,
        },
        "physics": {"c0": 1.0, "rho0": 1.0, "beta": 1.2, "dt": 1.0},
        "piam": {
            "seeds": 10,
            "lambda": 0.01,
            "epochs": 30,
            "lr": 0.05,
            "batch": 20,
            "momentum": 0.9,
            "n_train": 200,
            "n_test": 140,
            "duration": 0.5,
            "sample_rate": 8000,
            "clip_level": 0.8,
        },
        "synth": PlantSpec().to_json(),
    }


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        # the synth block and interaction list are replaced wholesale below their top level
        if isinstance(base[key], dict) and key not in ("coefficients", "roles_present", "horizon_noise_mult"):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where}{key} must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_horizons(text: str) -> list[int]:
    try:
        hs = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad horizon list {text!r}") from None
    return hs


def resolve_config(args) -> dict:
    cfg = default_config()
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["paths"]["out"] = args.out
    if getattr(args, "corpus", None) is not None:
        cfg["paths"]["corpus"] = args.corpus
    if getattr(args, "horizons", None) is not None:
        cfg["eval"]["horizons"] = _parse_horizons(args.horizons)
    if getattr(args, "top_k", None) is not None:
        cfg["eval"]["top_k"] = args.top_k
    if getattr(args, "iterations", None) is not None:
        key = "importance_iterations" if args.command == "importance" else "iterations"
        cfg["eval"][key] = args.iterations
    if getattr(args, "seeds", None) is not None:
        cfg["piam"]["seeds"] = args.seeds
    if getattr(args, "n_calls", None) is not None:
        cfg["synth"]["n_calls"] = args.n_calls
    _check_config(cfg)
    return cfg


def _check_config(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    ev = cfg["eval"]
    bad = [h for h in ev["horizons"] if h not in HORIZONS]
    if bad or not ev["horizons"]:
        raise ConfigError(f"unsupported horizon(s) {bad}; choose from {list(HORIZONS)}")
    if ev["target_horizon"] not in HORIZONS or ev["target"] not in TARGET_KINDS:
        raise ConfigError("eval.target must be car|realized_vol at a supported horizon")
    for key in ("iterations", "importance_iterations", "importance_estimators", "top_k"):
        if not isinstance(ev[key], int) or ev[key] < 1:
            raise ConfigError(f"eval.{key} must be a positive integer")
    if ev["policy"] not in ("random", "chronological"):
        raise ConfigError("eval.policy must be random or chronological")
    if not 0 < ev["test_fraction"] < 1:
        raise ConfigError("eval.test_fraction must lie in (0, 1)")
    pm = cfg["piam"]
    if not isinstance(pm["seeds"], int) or pm["seeds"] < 1:
        raise ConfigError("piam.seeds must be a positive integer")
    try:
        _hyper(cfg)
        _constants(cfg)
        PlantSpec.from_json(cfg["synth"]).validate()
    except (ValueError, TypeError, InvalidSpec) as exc:
        raise ConfigError(str(exc)) from None


def _hyper(cfg) -> GbtHyperparams:
    return GbtHyperparams(**cfg["gbt"], seed=cfg["seed"])


def _constants(cfg) -> AcousticConstants:
    return AcousticConstants(**cfg["physics"])


def _policy(cfg) -> SplitPolicy:
    ev = cfg["eval"]
    return SplitPolicy(ev["policy"], ev["test_fraction"], cfg["seed"])


# -- output --------------------------------------------------------------------

class _Outputs:
    def __init__(self, out_dir: str, command: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.inputs: dict[str, str] = {}
        self.written: dict[str, str] = {}

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        if name != "manifest.json":
            self.written[name] = sha256_file(path)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def finish(self, cfg: dict) -> None:
        self.write_json("effective_config.json", cfg)
        self.write_json("manifest.json", {
            "command": self.command,
            "version": __version__,
            "inputs": self.inputs,
            "outputs": dict(sorted(self.written.items())),
        })


def _load_corpus(cfg, outs: _Outputs, stats: ParseStats | None = None):
    path = cfg["paths"]["corpus"]
    if not path:
        raise ConfigError("no corpus given (use --corpus or paths.corpus)")
    if not os.path.isfile(path):
        raise ConfigError(f"corpus not found: {path}")
    outs.inputs[str(path)] = sha256_file(path)
    return parse_corpus_file(path, stats=stats)


def _asl_table(args, outs: _Outputs):
    if not args.asl_override:
        return ASL_TABLE
    if not os.path.isfile(args.asl_override):
        raise ConfigError(f"override file not found: {args.asl_override}")
    outs.inputs[args.asl_override] = sha256_file(args.asl_override)
    return load_asl_override(args.asl_override, unsafe=args.unsafe_asl_override)


def _matrix(cfg, args, outs):
    calls = _load_corpus(cfg, outs)
    table = _asl_table(args, outs)
    inter = [tuple(p) for p in cfg["features"]["interactions"]]
    return build_matrix(calls, inter, table)


# -- commands ------------------------------------------------------------------

def cmd_synth(cfg, args, outs) -> int:
    spec = PlantSpec.from_json(cfg["synth"])
    calls, truth = generate_corpus(spec, cfg["seed"], with_truth=True)
    outs.write("corpus.jsonl", dumps_corpus(calls))
    outs.write("truth.json", dumps_truth(truth) + "\n")
    print(f"wrote {len(calls)} calls to {outs.dir / 'corpus.jsonl'}")
    return 0


def cmd_ingest_check(cfg, args, outs) -> int:
    stats = ParseStats()
    calls = _load_corpus(cfg, outs, stats)
    per_call = {}
    for c in calls:
        issues = validate_call(c)
        if issues:
            per_call[c.call_id] = [str(i) for i in issues]
    report = {
        "calls": len(calls),
        "lines": stats.lines,
        "unknown_fields": stats.unknown_fields,
        "dropped_utterances": stats.dropped_utterances,
        "segmented_calls": stats.segmented_calls,
        "no_qa_detected": stats.no_qa_detected,
        "calls_with_issues": len(per_call),
        "issues": per_call,
    }
    outs.write_json("ingest_report.json", report)
    print(f"{len(calls)} calls parsed; {len(per_call)} with issues")
    for cid, issues in list(per_call.items())[:20]:
        print(f"  {cid}: {', '.join(issues)}")
    return 0


def cmd_features(cfg, args, outs) -> int:
    m = _matrix(cfg, args, outs)
    buf = io.StringIO()
    write_feature_matrix(m, buf)
    outs.write("features.csv", buf.getvalue())
    corpus_hash = next(iter(outs.inputs.values()))
    outs.write_json("features_meta.json", matrix_metadata(m, corpus_hash))
    print(f"{len(m)} rows x {len(m.schema)} features")
    return 0


def cmd_train(cfg, args, outs) -> int:
    m = _matrix(cfg, args, outs)
    ev = cfg["eval"]
    y = m.target(ev["target_horizon"], ev["target"])
    if np.isnan(y).any():
        raise CorpusError(f"{int(np.isnan(y).sum())} call(s) lack the requested target")
    X = m.to_array()
    train, test = split_indices(len(y), _policy(cfg))
    # early-stopping holdout carved from the training rows
    rng = np.random.default_rng([cfg["seed"], 1])
    perm = rng.permutation(train)
    n_val = max(1, len(perm) // 5)
    val, fit_rows = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    hp = _hyper(cfg)
    ens = fit(X[fit_rows], y[fit_rows], hp, m.schema, valid=(X[val], y[val]))
    pred = ens.predict_matrix(X[test])
    r2 = r2_oos(pred, y[test], float(np.mean(y[fit_rows])))
    imp = sorted(gain_importance(ens).items(), key=lambda kv: (-kv[1], kv[0]))
    outs.write("model.json", ens.dumps() + "\n")
    outs.write_json("train_report.json", {
        "target": ev["target"],
        "horizon": ev["target_horizon"],
        "n_fit": int(len(fit_rows)),
        "n_valid": int(len(val)),
        "n_test": int(len(test)),
        "n_trees": len(ens.trees),
        "test_r2": r2,
        "history": ens.history,
        "top_importance": [{"feature": k, "importance": v} for k, v in imp[: ev["top_k"]]],
    })
    print(f"{len(ens.trees)} trees; test R2 = {r2:.4f}")
    return 0


def cmd_ablate(cfg, args, outs) -> int:
    m = _matrix(cfg, args, outs)
    ev = cfg["eval"]
    table = run_ablation(m, ev["horizons"], _policy(cfg), _hyper(cfg), ev["iterations"], cfg["seed"], args.threads)
    text = table.render()
    outs.write("ablation.txt", text)
    outs.write_json("ablation.json", table.to_json())
    lines = []
    for (k, v, h), rep in table.cells.items():
        for i, r in enumerate(rep.r2):
            lines.append(json.dumps({"target": k, "variant": v, "horizon": h, "iteration": i, "r2": r}))
    outs.write("ablation_samples.jsonl", "".join(line + "\n" for line in lines))
    print(text, end="")
    return 0


def render_importance(summary: list[dict], freq: dict, top_k: int) -> str:
    shown = summary[:top_k]
    w = max([len("feature")] + [len(r["feature"]) for r in shown])
    rows = [f"{'rank':>4}  {'feature':<{w}} {'mean':>8} {'median':>8} {'ci_low':>8} {'ci_high':>8} {'top5':>5}"]
    for i, r in enumerate(shown, 1):
        rows.append(
            f"{i:>4}  {r['feature']:<{w}} {r['mean']:8.4f} {r['median']:8.4f} "
            f"{r['ci_low']:8.4f} {r['ci_high']:8.4f} {freq[r['feature']]:5.2f}"
        )
    return "\n".join(rows) + "\n"


def cmd_importance(cfg, args, outs) -> int:
    m = _matrix(cfg, args, outs)
    ev = cfg["eval"]
    y = m.target(ev["target_horizon"], ev["target"])
    if np.isnan(y).any():
        raise CorpusError(f"{int(np.isnan(y).sum())} call(s) lack the requested target")
    hp = _hyper(cfg).replace(n_estimators=ev["importance_estimators"])
    rep = bootstrap_importance(m, y, hp, ev["importance_iterations"], cfg["seed"], n_jobs=args.threads)
    summary = rep.importance_summary()
    freq = rep.top_k_frequency(5)
    text = render_importance(summary, freq, ev["top_k"])
    outs.write("importance.txt", text)
    outs.write_json("importance.json", {
        "iterations": rep.iterations,
        "uniform_share": 1.0 / len(m.schema),
        "features": [dict(r, top5_frequency=freq[r["feature"]]) for r in summary],
    })
    outs.write("importance_samples.jsonl", "".join(line + "\n" for line in rep.iteration_lines()))
    print(text, end="")
    return 0


def cmd_concordance(cfg, args, outs) -> int:
    calls = _load_corpus(cfg, outs)
    res = modality_concordance(calls)
    outs.write_json("concordance.json", {k: v.to_json() for k, v in res.items()})
    lines = [f"{'role':<5} {'n':>8} {'agreement':>10} {'kappa':>8}"]
    for k, v in res.items():
        lines.append(f"{k:<5} {v.n:>8} {v.agreement:10.4f} {v.kappa:8.4f}")
    text = "\n".join(lines) + "\n"
    outs.write("concordance.txt", text)
    print(text, end="")
    return 0


def _gradcheck(cfg) -> float:
    from .piam import gradient_check
    k = _constants(cfg)
    worst = 0.0
    for s in range(5):
        rng = np.random.default_rng([cfg["seed"], s])
        op = PressureOperator.init(4, 4, rng)
        worst = max(worst, finite_diff_check(rng.normal(0, 1, (5, 4)), op, k))
        worst = max(worst, gradient_check(seed=cfg["seed"] * 1000 + s, T=5, D=4, k=k))
    return worst


def cmd_piam_demo(cfg, args, outs) -> int:
    from .piam import TrainHyper, WaveConfig, evaluate, make_dataset, train
    k = _constants(cfg)
    if args.gradcheck:
        err = _gradcheck(cfg)
        ok = err < 1e-5
        outs.write_json("gradcheck.json", {"max_relative_error": err, "tolerance": 1e-5, "passed": ok})
        print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'})")
        return 0 if ok else 1
    pm = cfg["piam"]
    wave = WaveConfig(duration=pm["duration"], sample_rate=pm["sample_rate"], clip_level=pm["clip_level"])
    train_set = make_dataset(pm["n_train"], cfg["seed"] * 2, wave)
    test_set = make_dataset(pm["n_test"], cfg["seed"] * 2 + 1, wave)
    lam = pm["lambda"]
    pairs = []
    for s in range(pm["seeds"]):
        row = {"seed": s}
        for tag, lv in (("baseline", 0.0), ("regularized", lam)):
            hyper = TrainHyper(lam=lv, epochs=pm["epochs"], lr=pm["lr"], batch=pm["batch"],
                               seed=cfg["seed"] * 1000 + s, momentum=pm["momentum"])
            model, rep = train(train_set, hyper, k)
            held = evaluate(model, test_set, lv, k)
            outs.write(f"piam_{tag}_seed{s}.jsonl", rep.to_jsonl())
            final = rep.final
            row[tag] = {
                "l_phys": final.l_phys if final else None,
                "train_accuracy": final.accuracy if final else None,
                "test_accuracy": held.accuracy,
                "diverged": rep.diverged,
            }
        pairs.append(row)
    if pm["epochs"] == 0:
        print("epochs = 0: nothing trained")
        outs.write_json("piam_summary.json", {"pairs": pairs})
        return 0
    wins = sum(p["regularized"]["l_phys"] < p["baseline"]["l_phys"] for p in pairs)
    base_phys = float(np.mean([p["baseline"]["l_phys"] for p in pairs]))
    reg_phys = float(np.mean([p["regularized"]["l_phys"] for p in pairs]))
    acc_delta = float(np.mean([p["regularized"]["test_accuracy"] - p["baseline"]["test_accuracy"] for p in pairs]))
    need = int(np.ceil(0.9 * len(pairs)))
    passed = wins >= need and acc_delta >= -0.05
    summary = {
        "lambda": lam,
        "pairs": pairs,
        "wins": wins,
        "mean_l_phys_baseline": base_phys,
        "mean_l_phys_regularized": reg_phys,
        "mean_l_phys_reduction": base_phys - reg_phys,
        "mean_test_accuracy_delta": acc_delta,
        "passed": passed,
    }
    outs.write_json("piam_summary.json", summary)
    print(f"lambda={lam}: L_phys lower in {wins}/{len(pairs)} seeds; "
          f"mean L_phys {base_phys:.5f} -> {reg_phys:.5f} (reduction {base_phys - reg_phys:.5f}); "
          f"mean held-out accuracy delta {100 * acc_delta:+.2f} pp; verdict: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


COMMANDS = {
    "synth": cmd_synth,
    "ingest-check": cmd_ingest_check,
    "features": cmd_features,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "importance": cmd_importance,
    "concordance": cmd_concordance,
    "piam-demo": cmd_piam_demo,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    corpus = argparse.ArgumentParser(add_help=False)
    corpus.add_argument("--corpus", help="corpus JSONL file")
    corpus.add_argument("--asl-override", help="JSON file replacing the emotion-to-ASL table")
    corpus.add_argument("--unsafe-asl-override", action="store_true", help="allow --asl-override")
    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")

    p = _Parser(prog="affectrisk", description="Affective risk features and volatility models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("synth", parents=[common], help="generate a planted synthetic corpus")
    s.add_argument("--n-calls", type=int, dest="n_calls")
    sub.add_parser("ingest-check", parents=[common, corpus], help="parse and validate a corpus")
    sub.add_parser("features", parents=[common, corpus], help="write the feature matrix")
    t = sub.add_parser("train", parents=[common, corpus], help="fit one model and score the test split")
    t.add_argument("--top-k", type=int)
    a = sub.add_parser("ablate", parents=[common, corpus, threads], help="modality ablation table")
    a.add_argument("--horizons", help="comma-separated horizons, e.g. 1,7,30")
    a.add_argument("--iterations", type=int)
    i = sub.add_parser("importance", parents=[common, corpus, threads], help="bootstrap gain importance")
    i.add_argument("--top-k", type=int)
    i.add_argument("--iterations", type=int)
    sub.add_parser("concordance", parents=[common, corpus], help="acoustic-vs-text agreement")
    d = sub.add_parser("piam-demo", parents=[common], help="paired toy trainings with and without the physics term")
    d.add_argument("--seeds", type=int)
    d.add_argument("--gradcheck", action="store_true", help="only run finite-difference gradient checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = resolve_config(args)
        outs = _Outputs(cfg["paths"]["out"], args.command)
        code = COMMANDS[args.command](cfg, args, outs)
        outs.finish(cfg)
        return code
    except (ConfigError, AslOverrideRejected, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (AffectRiskError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
