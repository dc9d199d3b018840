"""Command-line entry point: ``decompopt {solve,sfm,bench,inner-ball}``."""
from __future__ import annotations

import os

# numerical thread pools read these at import time
_threads = os.environ.get("DECOMPOPT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import harness  # noqa: E402
from .geometry import NonConvergenceError  # noqa: E402
from .initialization import find_inner_ball  # noqa: E402
from .oracles import Box, known_body_oracle  # noqa: E402
from .problems import ProblemSpec  # noqa: E402
from .sfm import SubmodularInstance  # noqa: E402
from .solver import SolverConfig  # noqa: E402


def _fail(reason: str, message: str, code: int = 2) -> int:
    print(json.dumps({"error": reason, "message": message}), file=sys.stderr)
    return code


def _config(args, seed: int) -> SolverConfig:
    kw = {"seed": seed, "eta": args.eta, "noise_slack": args.noise_slack}
    if args.samples:
        kw["outer_samples"] = kw["polar_samples"] = args.samples
    return SolverConfig(**kw)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise harness.HarnessError("bad_input", f"cannot read {path}: {exc}") from exc


def _finish(outcome: harness.RunOutcome, out) -> int:
    if out:
        harness.write_run(outcome, out)
    print(harness.summary_json(outcome.summary), end="")
    return 0 if outcome.ok else 1


def cmd_solve(args) -> int:
    obj = _load_json(args.problem)
    if "ground_set" in obj:
        obj = {"kind": "sfm", "params": {"instance": obj}}
    try:
        spec = ProblemSpec(**{**obj, **({"epsilon": args.epsilon} if args.epsilon else {}),
                              **({"seed": args.seed} if args.seed is not None else {})})
    except (TypeError, ValueError) as exc:
        return _fail("bad_problem", str(exc))
    return _finish(harness.run_spec(spec, _config(args, spec.seed), args.init), args.out)


def cmd_sfm(args) -> int:
    obj = _load_json(args.instance)
    try:
        SubmodularInstance.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        return _fail("bad_instance", str(exc))
    seed = 0 if args.seed is None else args.seed
    spec = ProblemSpec("sfm", {"instance": obj}, seed, args.epsilon or 0.02)
    outcome = harness.run_spec(spec, _config(args, seed), args.init,
                               brute_force_check=args.brute_force_check)
    return _finish(outcome, args.out)


def cmd_bench(args) -> int:
    if args.suite != "desk":
        return _fail("unknown_suite", f"no suite named {args.suite!r}")
    base = 0 if args.seed is None else args.seed
    specs = harness.desk_specs(range(base, base + args.seeds))

    def progress(row):
        print(f"{row['kind']:16s} n={row['n']} eps={row['epsilon']} seed={row['seed']} "
              f"sep={row['sep_calls']} bound={row['bound']:.0f} ratio={row['ratio']:.3f} "
              f"gap={row['gap']:.4g} tol={row['tolerance']:.4g}", file=sys.stderr)

    rows, comparison = harness.bench(specs, lambda s: _config(args, s.seed),
                                     baselines=args.baselines, progress=progress)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    harness.write_rows(rows, harness.BENCH_COLUMNS, out / "bench.csv")
    if comparison:
        harness.write_rows(comparison, harness.COMPARISON_COLUMNS, out / "comparison.csv")
    worst = max(r["ratio"] for r in rows)
    bad = [r for r in rows if r["ratio"] > 1 or (r["gap"] is not None and r["gap"] > r["tolerance"])]
    print(json.dumps({"runs": len(rows), "max_ratio": worst, "failures": len(bad)}))
    return 0 if not bad else 1


def cmd_inner_ball(args) -> int:
    lo, hi = (float(v) for v in args.box.split(","))
    d = args.dim
    oracle = known_body_oracle(Box(np.full(d, lo), np.full(d, hi)))
    r = args.r if args.r else (hi - lo) / 2
    try:
        res = find_inner_ball(oracle, d, args.R, r, seed=args.seed or 0)
    except NonConvergenceError as exc:
        return _fail("budget_exceeded", str(exc), 1)
    out = {"center": res.center.tolist(), "radius": res.radius,
           "oracle_calls": res.oracle_calls, "iterations": res.iterations}
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decompopt",
                                description="Decomposable convex optimization with "
                                            "separation oracles.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, eps_default=None):
        sp.add_argument("--epsilon", type=float, default=eps_default)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--samples", type=int, default=None,
                        help="samples per moment estimate (outer and polar)")
        sp.add_argument("--eta", type=float, default=0.25)
        sp.add_argument("--noise-slack", type=float, default=3.0)
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--init", choices=("analytic", "search"), default="analytic")

    sp = sub.add_parser("solve", help="solve a problem spec (JSON)")
    sp.add_argument("--problem", required=True)
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sfm", help="minimize a decomposable submodular instance (JSON)")
    sp.add_argument("--instance", required=True)
    sp.add_argument("--brute-force-check", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_sfm)

    sp = sub.add_parser("bench", help="run a benchmark suite")
    sp.add_argument("--suite", default="desk")
    sp.add_argument("--seeds", type=int, default=1)
    sp.add_argument("--baselines", action="store_true",
                    help="also run the subgradient and centroid baselines")
    common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("inner-ball", help="find a ball inside a cube [lo, hi]^d")
    sp.add_argument("--box", default="0.2,0.8")
    sp.add_argument("--dim", type=int, default=3)
    sp.add_argument("--R", type=float, default=2.0)
    sp.add_argument("--r", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_inner_ball)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except harness.HarnessError as exc:
        return _fail(exc.reason, str(exc))
    except ValueError as exc:
        return _fail("invalid_argument", str(exc))


if __name__ == "__main__":
    sys.exit(main())
