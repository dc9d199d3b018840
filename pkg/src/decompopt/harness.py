"""Runs, traces, summaries, baselines and the desk benchmark suite."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import AffineSubspace, Ball, Halfspace, OuterBody, cut_outer
from .initialization import _centroid
from .oracles import CountingSubgradient, OracleCounter
from .problems import EpigraphProblem, ProblemSpec, generate, solve_problem
from .sampling import OuterChainSampler
from .sfm import (SubmodularInstance, brute_force_min, lovasz_lipschitz,
                  lovasz_value_and_subgradient, minimize_decomposable)
from .solver import TRACE_COLUMNS, SolverConfig

BOUND_CONSTANT = 200.0
DESK_EPSILONS = (0.02, 0.05)
COMPARISON_COLUMNS = ("kind", "n", "epsilon", "seed", "m", "method", "sep_calls",
                      "subgradient_calls", "eval_calls", "value", "optimum", "gap")
BENCH_COLUMNS = ("kind", "n", "epsilon", "seed", "m", "sep_calls", "eval_calls",
                 "bound", "ratio", "value", "optimum", "gap", "tolerance", "status")


class HarnessError(RuntimeError):
    """Failure with a machine-readable ``reason`` code."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


def write_trace(events, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        for ev in events:
            w.writerow(ev.trace_row())


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def config_hash(spec: ProblemSpec, cfg: SolverConfig, init: str) -> str:
    blob = json.dumps({"spec": json.loads(spec.to_json()), "config": dataclasses.asdict(cfg),
                       "init": init}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def summary_json(summary: dict) -> str:
    """Canonical text of a summary; two identical runs give identical bytes."""
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def bound(m: int, epsilon: float, C: float = BOUND_CONSTANT) -> float:
    return C * m * math.log(m / epsilon)


@dataclass
class RunOutcome:
    summary: dict
    events: list
    ok: bool


def run_spec(spec: ProblemSpec, cfg: SolverConfig | None = None, init: str = "analytic",
             brute_force_check: bool = True) -> RunOutcome:
    """Solve the instance generated from ``spec``; exact gaps when the optimum is known."""
    cfg = cfg or SolverConfig(seed=spec.seed)
    counter = OracleCounter()
    problem = generate(spec)
    if spec.kind == "sfm":
        res = minimize_decomposable(problem, spec.epsilon, cfg, spec.seed, init, counter=counter)
        optimum = None
        if brute_force_check:
            optimum = brute_force_min(problem, problem.ground_set)[1]
        value, tolerance, m = res.value, spec.epsilon, len(problem.terms)
        events = res.solve.events if res.solve is not None else []
        status = res.solve.status if res.solve is not None else "converged"
    else:
        run = solve_problem(problem, spec.epsilon, cfg, spec.seed, init, counter)
        optimum, value, tolerance = run.optimum, run.value, run.target_gap
        m, events, status = len(problem.blocks), run.result.events, run.result.status
    gap = None if optimum is None else value - optimum
    summary = {
        "kind": spec.kind,
        "final_value": value,
        "optimum_if_known": optimum,
        "gap": gap,
        "tolerance": tolerance,
        "status": status,
        "m": m,
        "sep_calls": counter.separation_calls,
        "eval_calls": counter.evaluation_calls,
        "subgradient_calls": counter.subgradient_calls,
        "seed": spec.seed,
        "config_hash": config_hash(spec, cfg, init),
    }
    ok = gap is None or gap <= tolerance
    return RunOutcome(summary, events, ok)


def write_run(outcome: RunOutcome, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(outcome.events, out / "trace.csv")
    (out / "summary.json").write_text(summary_json(outcome.summary))


# ---- baselines -------------------------------------------------------

@dataclass
class SeparableObjective:
    """``sum_i f_i(theta[V_i])`` over a box, each ``f_i`` a subgradient oracle."""

    n_vars: int
    supports: list
    terms: list
    lower: np.ndarray
    upper: np.ndarray
    lipschitz: float
    optimum: float | None = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)

    @property
    def radius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.upper - self.lower))

    def counted(self, counter: OracleCounter) -> "SeparableObjective":
        return dataclasses.replace(self, terms=[CountingSubgradient(f, counter)
                                                for f in self.terms])

    def value_and_subgradient(self, theta) -> tuple[float, np.ndarray]:
        total, g = 0.0, np.zeros(self.n_vars)
        for f, sup in zip(self.terms, self.supports):
            idx = list(sup)
            v, gi = f(theta[idx])
            total += v
            g[idx] += gi
        return total, g

    def project(self, theta) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)


def objective_from_epigraph(problem: EpigraphProblem) -> SeparableObjective:
    return SeparableObjective(problem.n_vars, list(problem.supports),
                              [b.subgradient for b in problem.blocks],
                              np.zeros(problem.n_vars), np.ones(problem.n_vars),
                              problem.lipschitz * len(problem.blocks), problem.optimum)


def objective_from_sfm(instance: SubmodularInstance) -> SeparableObjective:
    """Lovász extension of each term; evaluation calls go to the term counters."""
    terms, lips = [], []
    for term in instance.terms:
        terms.append(lambda x, term=term: lovasz_value_and_subgradient(term, x))
        lips.append(lovasz_lipschitz(term, term.size))
    n = instance.ground_set
    return SeparableObjective(n, [t.support for t in instance.terms], terms,
                              np.zeros(n), np.ones(n), max(sum(lips), 1e-12))


def baseline_subgradient(obj: SeparableObjective, iters: int,
                         counter: OracleCounter | None = None, start=None) -> dict:
    """Projected subgradient with step ``R / (L sqrt(k))``; tracks the best value."""
    counter = counter if counter is not None else OracleCounter()
    f = obj.counted(counter)
    theta = obj.project(0.5 * (obj.lower + obj.upper) if start is None
                        else np.asarray(start, dtype=float))
    values, best, best_theta = [], math.inf, theta
    for k in range(1, iters + 1):
        v, g = f.value_and_subgradient(theta)
        if v < best:
            best, best_theta = v, theta.copy()
        values.append(best)
        gn = float(np.linalg.norm(g))
        if gn == 0:
            break
        theta = obj.project(theta - obj.radius / (obj.lipschitz * math.sqrt(k)) * g)
    return {"values": values, "value": best, "theta": best_theta,
            "counter": counter, "iterations": len(values)}


def baseline_cpm(obj: SeparableObjective, epsilon: float, counter: OracleCounter | None = None,
                 seed: int = 0, samples: int = 1000, chains: int = 20,
                 max_iterations: int | None = None) -> dict:
    """Centroid cutting planes over the box, querying every term at each centroid."""
    counter = counter if counter is not None else OracleCounter()
    f = obj.counted(counter)
    d = obj.n_vars
    if max_iterations is None:
        max_iterations = int(math.ceil(3 * d * math.log(1.0 / epsilon))) + 1
    center = 0.5 * (obj.lower + obj.upper)
    eye = np.eye(d)
    cuts = tuple(Halfspace(eye[i], obj.upper[i]) for i in range(d)) + \
        tuple(Halfspace(-eye[i], -obj.lower[i]) for i in range(d))
    body = OuterBody(Ball(center, obj.radius * (1 + 1e-9)), cuts)
    sampler = OuterChainSampler([body], [slice(0, d)],
                                AffineSubspace.from_constraints(np.zeros((0, d)), np.zeros(0)),
                                np.random.default_rng(seed), chains=chains)
    sampler.start_from(center[None, :])
    v = _centroid(sampler, body, samples, 20 * d)
    values, calls_per_iter = [], []
    best, best_theta = math.inf, v
    for _ in range(max_iterations):
        before = counter.subgradient_calls
        val, g = f.value_and_subgradient(v)
        calls_per_iter.append(counter.subgradient_calls - before)
        if val < best:
            best, best_theta = val, v.copy()
        values.append(best)
        if not np.any(g):
            break
        body = cut_outer(body, Halfspace(g, float(g @ v)))
        v = _centroid(sampler, body, samples, 5 * d)
    return {"values": values, "value": best, "theta": best_theta, "counter": counter,
            "iterations": len(values), "calls_per_iteration": calls_per_iter}


# ---- desk suite ------------------------------------------------------

def desk_specs(seeds) -> list[ProblemSpec]:
    specs = []
    for seed in seeds:
        for eps in DESK_EPSILONS:
            for n in (2, 3, 4):
                specs.append(ProblemSpec("sfm", {"n": n, "sizes": [2, 4]}, seed, eps))
            for n in (4, 6):
                specs.append(ProblemSpec("chain_quadratic", {"n": n}, seed, eps))
    return specs


def bench(specs, cfg_for=None, baselines: bool = False, progress=None):
    """Run each spec; returns bench rows and (optionally) baseline comparison rows."""
    rows, comparison = [], []
    for spec in specs:
        cfg = cfg_for(spec) if cfg_for else SolverConfig(seed=spec.seed)
        out = run_spec(spec, cfg)
        s = out.summary
        b = bound(s["m"], spec.epsilon)
        n = int(spec.params.get("n", 0))
        rows.append({"kind": spec.kind, "n": n, "epsilon": spec.epsilon, "seed": spec.seed,
                     "m": s["m"], "sep_calls": s["sep_calls"], "eval_calls": s["eval_calls"],
                     "bound": b, "ratio": s["sep_calls"] / b, "value": s["final_value"],
                     "optimum": s["optimum_if_known"], "gap": s["gap"],
                     "tolerance": s["tolerance"], "status": s["status"]})
        if progress:
            progress(rows[-1])
        if baselines:
            comparison.append(_comparison_row(spec, s, "decomposed", s["sep_calls"],
                                              s["subgradient_calls"], s["eval_calls"],
                                              s["final_value"]))
            comparison.extend(_baseline_rows(spec, s))
    return rows, comparison


def _comparison_row(spec, s, method, sep, sub, ev, value):
    opt = s["optimum_if_known"]
    return {"kind": spec.kind, "n": int(spec.params.get("n", 0)), "epsilon": spec.epsilon,
            "seed": spec.seed, "m": s["m"], "method": method, "sep_calls": sep,
            "subgradient_calls": sub, "eval_calls": ev, "value": value,
            "optimum": opt, "gap": None if opt is None else value - opt}


def _baseline_rows(spec, s):
    problem = generate(spec)
    rows = []
    for method in ("subgradient", "cpm"):
        counter = OracleCounter()
        if spec.kind == "sfm":
            problem.attach_counter(counter)
            obj = objective_from_sfm(problem)
            counter.evaluation_calls = 0
        else:
            obj = objective_from_epigraph(problem)
        if method == "subgradient":
            res = baseline_subgradient(obj, 1000, counter)
        else:
            res = baseline_cpm(obj, spec.epsilon, counter, seed=spec.seed)
        if spec.kind == "sfm":
            problem.attach_counter(None)
        rows.append(_comparison_row(spec, s, method, 0, counter.subgradient_calls,
                                    counter.evaluation_calls, res["value"]))
    return rows


def write_rows(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow(row)
