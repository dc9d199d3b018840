"""Problem specifications, generators and the epigraph-problem driver."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog

from .initialization import build_epigraph_program, coupling_from_supports
from .oracles import EpigraphBlock, OracleCounter
from .sfm import SubmodularInstance, Term, brute_force_min
from .solver import SolveResult, SolverConfig, solve

KINDS = ("sfm", "chain_quadratic", "piecewise_linear", "custom_epigraph")


@dataclass
class ProblemSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    epsilon: float = 0.05
    R: float | None = None
    r: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        return cls(**json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class EpigraphProblem:
    """``min sum_i f_i(theta[V_i])`` with one epigraph block per term."""

    name: str
    n_vars: int
    supports: list
    blocks: list
    objective: object
    optimum: float | None
    lipschitz: float
    radius: float
    minimizer: np.ndarray | None = None

    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [b.dim for b in self.blocks])

    def coupling(self) -> np.ndarray:
        return coupling_from_supports(self.supports, self.offsets())

    def extract(self, x) -> np.ndarray:
        """Shared variable vector read from the first block holding each coordinate."""
        theta = np.zeros(self.n_vars)
        seen = np.zeros(self.n_vars, dtype=bool)
        for sup, off in zip(self.supports, self.offsets()[:-1]):
            for j, k in enumerate(sup):
                if not seen[k]:
                    theta[k], seen[k] = x[off + j], True
        return theta

    def target_gap(self, epsilon: float) -> float:
        return epsilon * self.lipschitz * self.radius


def _epigraph_block(fn, x0, lipschitz, radius, lower=None, upper=None, name=""):
    z0 = fn(x0)[0] / lipschitz
    return EpigraphBlock(fn, lipschitz, x0, z0, radius, lower, upper, name)


def chain_quadratic(n: int) -> EpigraphProblem:
    """``(x_1 - 1)^2 + sum (x_i - x_{i+1})^2 + x_n^2`` split into n + 1 terms."""
    if n < 2:
        raise ValueError("chain needs n >= 2")
    R = math.sqrt(n) / 2.0
    L = max(4.0 * R, 1.0 + 2.0 * R)
    supports = [(0,)] + [(i, i + 1) for i in range(n - 1)] + [(n - 1,)]

    def first(x):
        return (x[0] - 1.0) ** 2, np.array([2.0 * (x[0] - 1.0)])

    def link(x):
        d = x[0] - x[1]
        return d * d, np.array([2.0 * d, -2.0 * d])

    def last(x):
        return x[0] ** 2, np.array([2.0 * x[0]])

    fns = [first] + [link] * (n - 1) + [last]
    blocks = [_epigraph_block(f, np.full(len(s), 0.5), L, R, name=f"term{s}")
              for f, s in zip(fns, supports)]

    def objective(theta):
        theta = np.asarray(theta, dtype=float)
        return float((theta[0] - 1) ** 2 + np.sum(np.diff(theta) ** 2) + theta[-1] ** 2)

    # stationarity: tridiagonal system (2I - shift - shift^T) theta = e_1
    T = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    rhs = np.zeros(n)
    rhs[0] = 1.0
    theta = np.linalg.solve(T, rhs)
    return EpigraphProblem(f"chain{n}", n, supports, blocks, objective,
                           objective(theta), L, R, theta)


def piecewise_linear(n: int, terms: int, pieces: int, seed: int,
                     support_size: int = 2) -> EpigraphProblem:
    """Random max-affine terms on ``[0, 1]^n``; optimum by linear programming."""
    rng = np.random.default_rng(seed)
    support_size = min(support_size, n)
    supports, data = [], []
    for _ in range(terms):
        sup = tuple(sorted(rng.choice(n, size=support_size, replace=False).tolist()))
        a = rng.uniform(-1, 1, size=(pieces, support_size))
        beta = rng.uniform(-0.5, 0.5, size=pieces)
        supports.append(sup)
        data.append((a, beta))
    L = max(float(np.max(np.linalg.norm(a, axis=1))) for a, _ in data)
    L = max(L, 1e-3)
    R = math.sqrt(support_size) / 2.0

    def make(a, beta):
        def fn(x):
            vals = a @ x + beta
            j = int(np.argmax(vals))
            return float(vals[j]), a[j].copy()
        return fn

    blocks = [_epigraph_block(make(a, beta), np.full(support_size, 0.5), L, R,
                              np.zeros(support_size), np.ones(support_size), f"term{s}")
              for (a, beta), s in zip(data, supports)]

    def objective(theta):
        theta = np.asarray(theta, dtype=float)
        return float(sum(np.max(a @ theta[list(s)] + beta) for (a, beta), s in zip(data, supports)))

    # LP over (theta, s): min sum s_i, s_i >= a_j . theta_{V_i} + beta_j
    nv = n + terms
    A_ub, b_ub = [], []
    for i, ((a, beta), s) in enumerate(zip(data, supports)):
        for j in range(pieces):
            row = np.zeros(nv)
            row[list(s)] = a[j]
            row[n + i] = -1.0
            A_ub.append(row)
            b_ub.append(-beta[j])
    cost = np.concatenate([np.zeros(n), np.ones(terms)])
    lp = linprog(cost, A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                 bounds=[(0, 1)] * n + [(None, None)] * terms, method="highs")
    return EpigraphProblem(f"pwl{n}x{terms}", n, supports, blocks, objective,
                           float(lp.fun), L, R, lp.x[:n])


def _random_submodular_table(k: int, rng: np.random.Generator) -> np.ndarray:
    """Modular part plus a concave function of a nonnegative weighted count."""
    w = rng.uniform(-1, 1, size=k)
    a = rng.uniform(0, 1, size=k)
    alpha = rng.uniform(0, 1)
    vals = np.zeros(2 ** k)
    for code in range(2 ** k):
        mask = (code >> np.arange(k)) & 1
        vals[code] = w @ mask + alpha * math.sqrt(a @ mask)
    return vals - vals[0]


def random_sfm(n: int, seed: int, terms: int | None = None,
               sizes=(2, 4)) -> SubmodularInstance:
    """Random decomposable instance on ``n`` elements, total range in ``[-1, 1]``."""
    rng = np.random.default_rng(seed)
    lo, hi = sizes
    lo, hi = min(lo, n), min(hi, n)
    if terms is None:
        terms = int(rng.integers(2, 4))
    raw = []
    for _ in range(terms):
        k = int(rng.integers(lo, hi + 1))
        sup = sorted(rng.choice(n, size=k, replace=False).tolist())
        kind = rng.choice(["cut", "modular", "table"], p=[0.3, 0.2, 0.5])
        if kind == "cut":
            edges = [[sup[i], sup[j], float(rng.uniform(0, 1))]
                     for i, j in itertools.combinations(range(k), 2)
                     if rng.random() < 0.7]
            if not edges:
                edges = [[sup[0], sup[1], float(rng.uniform(0, 1))]]
            raw.append((sup, "cut", edges))
        elif kind == "modular":
            raw.append((sup, "modular", rng.uniform(-1, 1, size=k).tolist()))
        else:
            raw.append((sup, "table", _random_submodular_table(k, rng).tolist()))
    inst = SubmodularInstance(n, [Term(s, kd, d) for s, kd, d in raw])
    bits = 1 << np.arange(n)
    scale = max(abs(inst((code & bits) > 0)) for code in range(2 ** n))
    if scale > 0:
        scaled = []
        for s, kd, d in raw:
            if kd == "cut":
                d = [[u, v, w / scale] for u, v, w in d]
            else:
                d = (np.asarray(d) / scale).tolist()
            scaled.append(Term(s, kd, d))
        inst = SubmodularInstance(n, scaled)
    return inst


def generate(spec: ProblemSpec):
    """Deterministic instance for ``spec``."""
    p = spec.params
    if spec.kind == "sfm":
        if "instance" in p:
            return SubmodularInstance.from_json(p["instance"])
        return random_sfm(int(p.get("n", 4)), spec.seed, p.get("terms"),
                          tuple(p.get("sizes", (2, 4))))
    if spec.kind == "chain_quadratic":
        return chain_quadratic(int(p.get("n", 6)))
    if spec.kind == "piecewise_linear":
        return piecewise_linear(int(p.get("n", 3)), int(p.get("terms", 2)),
                                int(p.get("pieces", 3)), spec.seed,
                                int(p.get("support_size", 2)))
    raise ValueError(f"kind {spec.kind!r} has no generator; build the problem directly")


@dataclass
class ProblemRun:
    theta: np.ndarray
    value: float
    optimum: float | None
    gap: float | None
    result: SolveResult
    counter: OracleCounter
    target_gap: float


def solve_problem(problem: EpigraphProblem, epsilon: float, cfg: SolverConfig | None = None,
                  seed: int = 0, init: str = "analytic",
                  counter: OracleCounter | None = None) -> ProblemRun:
    """Solve an epigraph problem to value gap ``epsilon * L * R``."""
    counter = counter if counter is not None else OracleCounter()
    A = problem.coupling()
    program = build_epigraph_program(problem.blocks, A, np.zeros(A.shape[0]),
                                     method=init, seed=seed, counter=counter)
    gap = problem.target_gap(epsilon)
    R = max(o.bounding_ball.radius for o in program.outer)
    base = cfg or SolverConfig(seed=seed)
    eps_internal = min(gap / (float(np.linalg.norm(program.c)) * R), 0.49)
    cfg = SolverConfig(**{**base.__dict__, "epsilon": eps_internal, "R": R})
    res = solve(program, cfg, counter)
    theta = problem.extract(res.x)
    value = problem.objective(theta)
    opt = problem.optimum
    return ProblemRun(theta, value, opt, None if opt is None else value - opt,
                      res, counter, gap)


def sfm_optimum(instance: SubmodularInstance) -> float:
    return brute_force_min(instance, instance.ground_set)[1]
