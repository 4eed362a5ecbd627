"""Batch command line: simulate, estimate, reconstruct, evaluate, benchmark.

Exit codes: 0 success, 2 invalid arguments, 3 reconstruction failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import distmat, evolve, hgt, treecore

EXIT_OK, EXIT_USAGE, EXIT_FAILURE, EXIT_IO = 0, 2, 3, 4


class ValidationError(ValueError):
    pass


class InputFormatError(Exception):
    """An input file exists but cannot be parsed; reported as an I/O error."""


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def trial_seed(seed: int, trial: int) -> int:
    """Independent per-trial seed derived from ``(seed, trial)``."""
    return int(np.random.SeedSequence(seed, spawn_key=(trial,)).generate_state(1, np.uint64)[0] >> 1)


def _model(args) -> evolve.EvoModel:
    try:
        return evolve.EvoModel(args.m, args.f, args.g)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _delta_min(args, m=None, f=None) -> float:
    m = m if m is not None else args.m
    f = f if f is not None else args.f
    if args.delta_min is not None:
        if args.delta_min <= 0:
            raise ValidationError("--delta-min must be positive")
        if f is not None and args.delta_min >= -math.log1p(-(m / (m - 1)) * f) / 2:
            raise ValidationError("--delta-min must be below -ln(1 - alpha f)/2")
        return args.delta_min
    if f is None:
        raise ValidationError("give --delta-min, or --f (with optional --c)")
    try:
        return hgt.default_delta_min(m, f, args.c)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _check_n(n):
    if n is None or n < 3:
        raise ValidationError("--n must be at least 3")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ---------------------------------------------------------------------------
# library-level harness pieces
# ---------------------------------------------------------------------------


def evaluate_trees(truth: treecore.WeightedTopology, recon: treecore.WeightedTopology, delta_min=None) -> dict:
    rf = treecore.rf_distance(truth, recon)
    err = treecore.max_length_error(truth, recon)
    row = {"match": rf == 0, "rf": rf, "max_length_error": err}
    if delta_min is not None:
        row["delta_min"] = delta_min
        row["length_ok"] = err < 2 * delta_min
    return row


def run_trial(
    n, model, shape, seed, delta_min, *, ell=None, exact=False, patterns=False, delta=None
) -> dict:
    """One simulate -> estimate -> reconstruct -> compare round."""
    t = evolve.gen_tree(n, shape, model, seed=seed)
    truth = treecore.suppress_root(t)
    row = {"seed": seed, "g_depth": treecore.g_depth(t)}
    if exact:
        dm = evolve.exact_distance_matrix(t)
    else:
        if ell is None:
            ell = hgt.sample_length(n, delta, model.m, model.f, model.g, row["g_depth"], delta_min)
        row["ell"] = int(ell)
        if patterns:
            pats, counts = evolve.simulate_site_patterns(t, ell, seed)
            agree = evolve.count_pattern_agreement(pats, counts)
            dm = distmat.DistanceMatrix(t.names, distmat.closeness_from_agreement(agree, ell, model.m))
        else:
            dm = distmat.distance_matrix_from_sequences(evolve.evolve_sequences(t, ell, seed))
    try:
        recon = hgt.fast_hgt(dm, delta_min)
    except hgt.HgtFailure as exc:
        row.update(match=False, rf=None, max_length_error=None, failure=exc.line, iteration=exc.iteration)
        return row
    row.update(evaluate_trees(truth, recon.to_topology(), delta_min))
    row["failure"] = None
    return row


def aggregate(rows: list[dict]) -> dict:
    k = sum(1 for r in rows if r["match"])
    total = len(rows)
    rate = k / total if total else float("nan")
    lo, hi = _wilson(k, total)
    return {"trials": total, "recovered": k, "recovery_rate": rate, "ci95": [lo, hi]}


def _wilson(k, n, z=1.959963984540054):
    if n == 0:
        return (float("nan"), float("nan"))
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, mid - half), min(1.0, mid + half))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HGT_THREADS", "1")))
    except ValueError:
        return 1


def run_bench(sizes, *, seed=0, shape="uniform", model=None, c=0.25, repeats=1, log=None) -> dict:
    """Time and count work for exact-distance reconstructions over ``sizes``.

    Each size gets an untimed warm-up run; the reported time is the minimum
    over ``repeats`` timed runs.  Slopes are least-squares fits in log-log
    space.
    """
    model = model or evolve.EvoModel(4, 0.05, 0.1)
    delta_min = hgt.default_delta_min(model.m, model.f, c)
    rows = []
    for i, n in enumerate(sizes):
        t = evolve.gen_tree(n, shape, model, seed=trial_seed(seed, i))
        dm = evolve.exact_distance_matrix(t)
        hgt.fast_hgt(dm, delta_min)  # warm-up
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            recon = hgt.fast_hgt(dm, delta_min)
            best = min(best, time.perf_counter() - t0)
        s = recon.stats
        row = {
            "n": n,
            "seconds": best,
            "split_edge_calls": s.split_edge_calls,
            "peak_live_tuples": s.peak_live_tuples,
            "peak_nodes": s.peak_nodes,
            "rf": treecore.rf_distance(treecore.suppress_root(t), recon.to_topology()),
        }
        rows.append(row)
        if log:
            log(row)
    logn = np.log([r["n"] for r in rows])
    out = {"rows": rows}
    if len(rows) >= 2:
        out["count_slope"] = float(np.polyfit(logn, np.log([r["split_edge_calls"] for r in rows]), 1)[0])
        out["time_slope"] = float(np.polyfit(logn, np.log([r["seconds"] for r in rows]), 1)[0])
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    _check_n(args.n)
    if args.ell is None or args.ell < 1:
        raise ValidationError("--ell must be at least 1")
    model = _model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = evolve.gen_tree(args.n, args.shape, model, seed=args.seed)
    seqs = evolve.evolve_sequences(t, args.ell, seed=args.seed)
    (out / "tree.nwk").write_text(treecore.serialize_newick(t) + "\n")
    with open(out / "seqs.fasta", "w") as fh:
        evolve.write_fasta(seqs, fh)
    config = {"command": "simulate", "n": args.n, "m": args.m, "f": args.f, "g": args.g,
              "ell": args.ell, "shape": args.shape, "seed": args.seed}
    _write_json(out / "params.json", {**config, "config_hash": config_hash(config)})
    return EXIT_OK


def _read_tree(path):
    try:
        return treecore.parse_newick(Path(path).read_text())
    except treecore.NewickError as exc:
        raise InputFormatError(f"{path}: {exc}") from None


def _read_fasta(path):
    with open(path) as fh:
        try:
            return evolve.read_fasta(fh)
        except ValueError as exc:
            raise InputFormatError(f"{path}: {exc}") from None


def _read_phylip(path):
    with open(path) as fh:
        try:
            return distmat.read_phylip(fh)
        except ValueError as exc:
            raise InputFormatError(f"{path}: {exc}") from None


def cmd_distances(args) -> int:
    if not args.input:
        raise ValidationError("--in is required")
    if args.exact:
        t = _read_tree(args.input)
        if not isinstance(t, treecore.RootedEvoTree):
            raise ValidationError("--exact needs a [&metric=prob] rooted tree")
        dm = evolve.exact_distance_matrix(t)
    else:
        seqs = _read_fasta(args.input)
        dm = distmat.distance_matrix_from_sequences(seqs, args.m if args.m_given else seqs.m)
    with open(args.out, "w") as fh:
        distmat.write_phylip(dm, fh)
    return EXIT_OK


def _load_matrix(path, m):
    text = Path(path).read_text()
    if text.lstrip().startswith(">"):
        return distmat.distance_matrix_from_sequences(_read_fasta(path), m)
    return _read_phylip(path)


def cmd_reconstruct(args) -> int:
    if not args.input:
        raise ValidationError("--in is required")
    delta_min = _delta_min(args)
    dm = _load_matrix(args.input, args.m)
    config = {"command": "reconstruct", "in": str(args.input), "delta_min": delta_min}
    report = {"config": config, "config_hash": config_hash(config), "n": dm.n}
    out = Path(args.out)
    try:
        recon = hgt.fast_hgt(dm, delta_min)
    except hgt.HgtFailure as exc:
        report.update(status="failure", failure_line=exc.line, iteration=exc.iteration,
                      inserted=exc.inserted, reason=exc.reason)
        _write_json(out.with_suffix(out.suffix + ".json"), report)
        print(str(exc), file=sys.stderr)
        return EXIT_FAILURE
    out.write_text(treecore.serialize_newick(recon.to_topology()) + "\n")
    report.update(status="ok", **asdict(recon.stats))
    _write_json(out.with_suffix(out.suffix + ".json"), report)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.trials:
        return _evaluate_trials(args)
    if not args.input or not args.truth:
        raise ValidationError("--in and --truth are required (or use --trials)")
    recon = _read_tree(args.input)
    truth = _read_tree(args.truth)
    if isinstance(truth, treecore.RootedEvoTree):
        truth = treecore.suppress_root(truth)
    if isinstance(recon, treecore.RootedEvoTree):
        recon = treecore.suppress_root(recon)
    try:
        row = evaluate_trees(truth, recon, args.delta_min)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    text = json.dumps(row, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _evaluate_trials(args) -> int:
    _check_n(args.n)
    model = _model(args)
    delta_min = _delta_min(args)
    if not args.exact and args.ell is None and args.delta is None:
        raise ValidationError("give --ell, --delta (analytic length) or --exact")
    if args.delta is not None and not 0 < args.delta < 1:
        raise ValidationError("--delta must lie in (0, 1)")
    config = {"command": "evaluate", "n": args.n, "m": args.m, "f": args.f, "g": args.g,
              "ell": args.ell, "delta": args.delta, "delta_min": delta_min, "shape": args.shape,
              "seed": args.seed, "trials": args.trials, "exact": args.exact, "patterns": args.patterns}
    seeds = [trial_seed(args.seed, i) for i in range(args.trials)]

    def one(i):
        row = run_trial(args.n, model, args.shape, seeds[i], delta_min, ell=args.ell,
                        exact=args.exact, patterns=args.patterns, delta=args.delta)
        return {"trial": i, **row}

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(one, range(args.trials)))
    report = {"config": config, "config_hash": config_hash(config), **aggregate(rows)}
    out = Path(args.out) if args.out else None
    if out:
        _write_json(out, report)
        with open(out.with_suffix(".rows.ndjson"), "w") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True, default=_jsonable) + "\n")
    else:
        print(json.dumps(report, sort_keys=True, default=_jsonable))
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    if any(s < 3 for s in sizes):
        raise ValidationError("bench sizes must be at least 3")
    model = _model(args)
    result = run_bench(sizes, seed=args.seed, shape=args.shape, model=model, c=args.c,
                       repeats=args.repeats, log=lambda r: print(json.dumps(r), file=sys.stderr))
    config = {"command": "bench", "sizes": sizes, "seed": args.seed, "shape": args.shape,
              "m": args.m, "f": args.f, "g": args.g, "c": args.c, "repeats": args.repeats}
    report = {"config": config, "config_hash": config_hash(config), **result}
    if args.out:
        _write_json(args.out, report)
    else:
        print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_sample_size(args) -> int:
    _check_n(args.n)
    if args.delta is None:
        raise ValidationError("--delta is required")
    model = _model(args)
    d = args.depth
    if d is None:
        d = treecore.g_depth(evolve.gen_tree(args.n, args.shape, model, seed=args.seed))
    delta_min = _delta_min(args)
    try:
        res = hgt.sample_length_terms(args.n, args.delta, model.m, model.f, model.g, d, delta_min)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    print(json.dumps({"ell": res.ell, "ell_g": res.ell_g, "ell_c": res.ell_c, "c_lg": res.c_lg,
                      "c": res.c, "d": res.d, "delta_min": delta_min}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int)
    common.add_argument("--m", type=int, default=4)
    common.add_argument("--f", type=float, default=0.05)
    common.add_argument("--g", type=float, default=0.1)
    common.add_argument("--ell", type=int)
    common.add_argument("--delta", type=float)
    common.add_argument("--delta-min", dest="delta_min", type=float)
    common.add_argument("--c", type=float, default=0.25)
    common.add_argument("--shape", default="uniform", choices=[s.value for s in evolve.TreeShape])
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=0)
    common.add_argument("--in", dest="input")
    common.add_argument("--out")
    common.add_argument("--exact", action="store_true")

    p = argparse.ArgumentParser(prog="fasthgt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common]).set_defaults(func=cmd_simulate)
    sub.add_parser("distances", parents=[common]).set_defaults(func=cmd_distances)
    sub.add_parser("reconstruct", parents=[common]).set_defaults(func=cmd_reconstruct)
    ev = sub.add_parser("evaluate", parents=[common])
    ev.add_argument("--truth")
    ev.add_argument("--patterns", action="store_true",
                    help="sample site-pattern counts instead of sequences (small n only)")
    ev.set_defaults(func=cmd_evaluate)
    b = sub.add_parser("bench", parents=[common])
    b.add_argument("--sizes", default="200,400,800,1600,3200")
    b.add_argument("--repeats", type=int, default=1)
    b.set_defaults(func=cmd_bench)
    ss = sub.add_parser("sample-size", parents=[common])
    ss.add_argument("--depth", type=int, help="g-depth; default: that of a generated tree")
    ss.set_defaults(func=cmd_sample_size)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    argv_list = sys.argv[1:] if argv is None else list(argv)
    args.m_given = "--m" in argv_list
    if args.command in ("simulate", "distances", "reconstruct") and args.out is None:
        print("error: --out is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, InputFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
