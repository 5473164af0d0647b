"""Compare the compiled split kernel with the numpy fallback.

    python3 benchmarks/bench_split.py [--rows 1436] [--cols 187] [--repeat 5] [--json out.json]

Times one level-wise split search (four active nodes) and a full boosted fit
on a random matrix with 10% missing values, and checks that both backends
return identical results.
"""
import argparse
import json
import sys
import time

import numpy as np

from affectrisk.gbt import GbtHyperparams, fit
from affectrisk.gbt._backend import compiled_available, get_kernels
from affectrisk.gbt.model import _presort


def _best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1436)
    ap.add_argument("--cols", type=int, default=187)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--trees", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if not compiled_available():
        print("compiled core not built; nothing to compare", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.rows, args.cols))
    X[rng.random(X.shape) < 0.1] = np.nan
    y = np.nan_to_num(X[:, 0]) + 0.5 * np.nan_to_num(X[:, 1]) ** 2 + rng.normal(0, 0.5, args.rows)
    sidx, svals, nvalid = _presort(X)
    g = -(y - y.mean())
    h = np.ones_like(g)
    node_of = rng.integers(0, 4, args.rows).astype(np.int64)
    cols = np.arange(args.cols, dtype=np.intp)
    G = np.bincount(node_of, weights=g, minlength=4)
    H = np.bincount(node_of, weights=h, minlength=4)

    results = {"rows": args.rows, "cols": args.cols}
    outs = {}
    for name in ("numpy", "compiled"):
        k = get_kernels(name)
        t, out = _best_of(lambda: k.find_splits(svals, sidx, nvalid, g, h, node_of, 4, cols, G, H, 1.0, 1.0),
                          args.repeat)
        outs[name] = out
        results[f"split_{name}_s"] = t
    same_split = all(np.array_equal(a, b) for a, b in zip(outs["numpy"], outs["compiled"]))

    hp = GbtHyperparams(n_estimators=args.trees, subsample=1.0, colsample=1.0)
    fits = {}
    for name in ("numpy", "compiled"):
        t, ens = _best_of(lambda: fit(X, y, hp, backend=name), max(1, args.repeat // 2))
        fits[name] = ens
        results[f"fit_{name}_s"] = t
    same_fit = np.array_equal(fits["numpy"].predict_matrix(X), fits["compiled"].predict_matrix(X))

    results["split_speedup"] = results["split_numpy_s"] / results["split_compiled_s"]
    results["fit_speedup"] = results["fit_numpy_s"] / results["fit_compiled_s"]
    results["identical"] = bool(same_split and same_fit)

    print(f"matrix {args.rows} x {args.cols}, 10% missing")
    print(f"{'':24}{'numpy':>12}{'compiled':>12}{'speedup':>10}")
    print(f"{'split search (4 nodes)':24}{results['split_numpy_s'] * 1e3:10.2f}ms"
          f"{results['split_compiled_s'] * 1e3:10.2f}ms{results['split_speedup']:9.1f}x")
    print(f"{f'fit ({args.trees} trees)':24}{results['fit_numpy_s']:11.3f}s"
          f"{results['fit_compiled_s']:11.3f}s{results['fit_speedup']:9.1f}x")
    print(f"identical results: {results['identical']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return 0 if results["identical"] else 1


if __name__ == "__main__":
    sys.exit(main())
