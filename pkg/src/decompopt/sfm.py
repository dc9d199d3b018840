"""Decomposable submodular minimization through the Lovász extension.

Each term ``F_i`` acts on a small support ``V_i``; its Lovász extension
becomes one epigraph block and shared ground-set elements are tied together
by equality constraints. The fractional minimizer is rounded by the best
prefix of its descending order.

Term types
----------
``cut``      data is a list of ``[u, v, w]`` edges (ground-set ids, ``w >= 0``)
``modular``  data is a weight per support element
``table``    data holds all ``2^|V_i|`` values, bit ``j`` of the index standing
             for ``support[j]``; entry 0 must be 0
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .initialization import build_epigraph_program, coupling_from_supports
from .oracles import EpigraphBlock, OracleCounter
from .solver import SolveResult, SolverConfig, solve

SUBMODULAR_TOL = 1e-12
BRUTE_FORCE_LIMIT = 20


@dataclass
class Term:
    support: tuple
    kind: str
    data: object
    counter: OracleCounter | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.support = tuple(int(k) for k in self.support)
        if len(set(self.support)) != len(self.support):
            raise ValueError("term support has repeated elements")
        k = len(self.support)
        if self.kind == "table":
            vals = np.asarray(self.data, dtype=float)
            if vals.shape != (2 ** k,):
                raise ValueError(f"table term needs {2 ** k} values")
            if abs(vals[0]) > 0:
                raise ValueError("table term must have F(empty) = 0")
            self._table = vals
        elif self.kind == "modular":
            w = np.asarray(self.data, dtype=float)
            if w.shape != (k,):
                raise ValueError("modular term needs one weight per support element")
            self._weights = w
        elif self.kind == "cut":
            pos = {e: j for j, e in enumerate(self.support)}
            edges = []
            for u, v, w in self.data:
                if u not in pos or v not in pos:
                    raise ValueError("cut edge endpoint outside the term support")
                edges.append((pos[u], pos[v], float(w)))
            self._edges = edges
        else:
            raise ValueError(f"unknown term type {self.kind!r}")

    @property
    def size(self) -> int:
        return len(self.support)

    def __call__(self, mask) -> float:
        """``F_i`` on a boolean mask over the support (one evaluation call)."""
        mask = np.asarray(mask, dtype=bool)
        if self.counter is not None:
            self.counter.evaluation_calls += 1
        if self.kind == "table":
            return float(self._table[int(np.dot(mask, 1 << np.arange(self.size)))])
        if self.kind == "modular":
            return float(self._weights[mask].sum())
        return float(sum(w for u, v, w in self._edges if mask[u] != mask[v]))

    def to_json(self) -> dict:
        data = self.data
        if isinstance(data, np.ndarray):
            data = data.tolist()
        return {"support": list(self.support), "type": self.kind, "data": data}


@dataclass
class SubmodularInstance:
    ground_set: int
    terms: list

    def __post_init__(self):
        for term in self.terms:
            if any(k < 0 or k >= self.ground_set for k in term.support):
                raise ValueError("term support outside the ground set")

    def attach_counter(self, counter: OracleCounter | None):
        for term in self.terms:
            term.counter = counter

    def __call__(self, mask) -> float:
        mask = np.asarray(mask, dtype=bool)
        return float(sum(term(mask[list(term.support)]) for term in self.terms))

    def to_json(self) -> dict:
        return {"ground_set": self.ground_set, "terms": [t.to_json() for t in self.terms]}

    @classmethod
    def from_json(cls, obj: dict) -> "SubmodularInstance":
        terms = [Term(t["support"], t["type"], t["data"]) for t in obj["terms"]]
        return cls(int(obj["ground_set"]), terms)


def check_submodular(F, n: int, trials: int = 200, seed: int = 0,
                     tol: float = SUBMODULAR_TOL) -> bool:
    """Spot-check diminishing returns on random ``S in T``, ``i notin T``."""
    rng = np.random.default_rng(seed)
    if n < 1:
        return True
    for _ in range(trials):
        T = rng.random(n) < 0.5
        outside = np.flatnonzero(~T)
        if outside.size == 0:
            continue
        i = rng.choice(outside)
        S = T & (rng.random(n) < 0.5)
        Ti, Si = T.copy(), S.copy()
        Ti[i] = Si[i] = True
        if F(Ti) - F(T) > F(Si) - F(S) + tol:
            return False
    return True


def _descending_order(x) -> np.ndarray:
    return np.argsort(-np.asarray(x, dtype=float), kind="stable")


def lovasz_value_and_subgradient(F, x) -> tuple[float, np.ndarray]:
    """Lovász extension value and subgradient from one sweep of prefix values."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    order = _descending_order(x)
    mask = np.zeros(x.size, dtype=bool)
    g = np.empty(x.size)
    prev = 0.0
    for j in order:
        mask[j] = True
        cur = F(mask)
        g[j] = cur - prev
        prev = cur
    return float(g @ x), g


def lovasz_value(F, x) -> float:
    return lovasz_value_and_subgradient(F, x)[0]


def lovasz_subgradient(F, x) -> np.ndarray:
    return lovasz_value_and_subgradient(F, x)[1]


def lovasz_lipschitz(F, k: int) -> float:
    """Exact Euclidean Lipschitz constant: the largest subgradient over all orders."""
    best = 0.0
    for perm in itertools.permutations(range(k)):
        x = np.empty(k)
        x[list(perm)] = np.arange(k, 0, -1)
        best = max(best, float(np.linalg.norm(lovasz_subgradient(F, x / k))))
    return best


def round_to_set(F, x) -> tuple[tuple, float]:
    """Best prefix set (including the empty set) of the descending order of ``x``."""
    x = np.asarray(x, dtype=float)
    order = _descending_order(x)
    mask = np.zeros(x.size, dtype=bool)
    best_set, best = (), 0.0
    for j_count, j in enumerate(order, start=1):
        mask[j] = True
        val = F(mask)
        if val < best:
            best, best_set = val, tuple(sorted(int(i) for i in order[:j_count]))
    return best_set, best


def brute_force_min(F, n: int) -> tuple[tuple, float]:
    """Exhaustive minimum; ties go to the first set in binary-counter order."""
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to |V| <= {BRUTE_FORCE_LIMIT}")
    best_set, best = (), F(np.zeros(n, dtype=bool))
    bits = 1 << np.arange(n)
    for code in range(1, 2 ** n):
        mask = (code & bits) > 0
        val = F(mask)
        if val < best:
            best, best_set = val, tuple(int(i) for i in np.flatnonzero(mask))
    return best_set, best


def _term_block(term: Term, lipschitz: float) -> EpigraphBlock:
    k = term.size
    x0 = np.full(k, 0.5)
    z0 = lovasz_value(term, x0) / lipschitz

    def oracle(x, term=term):
        return lovasz_value_and_subgradient(term, x)

    return EpigraphBlock(oracle, lipschitz, x0, z0, math.sqrt(k) / 2.0,
                         lower=np.zeros(k), upper=np.ones(k),
                         name=f"term{term.support}")


@dataclass
class SFMResult:
    set: tuple
    value: float
    fractional: np.ndarray
    relaxed_value: float
    counter: OracleCounter
    solve: SolveResult | None
    lipschitz: list


def minimize_decomposable(instance: SubmodularInstance, epsilon: float = 0.02,
                          cfg: SolverConfig | None = None, seed: int = 0,
                          init: str = "analytic", min_lipschitz: float = 2.0,
                          counter: OracleCounter | None = None) -> SFMResult:
    """Minimize ``sum_i F_i(S & V_i)`` to within ``epsilon`` in value."""
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    counter = counter if counter is not None else OracleCounter()
    instance.attach_counter(counter)
    try:
        n = instance.ground_set
        if not instance.terms:
            return SFMResult((), 0.0, np.zeros(n), 0.0, counter, None, [])
        lips = [max(min_lipschitz, lovasz_lipschitz(t, t.size)) for t in instance.terms]
        blocks = [_term_block(t, L) for t, L in zip(instance.terms, lips)]
        offsets = np.cumsum([0] + [b.dim for b in blocks])
        A = coupling_from_supports([t.support for t in instance.terms], offsets)
        program = build_epigraph_program(blocks, A, np.zeros(A.shape[0]), method=init,
                                         seed=seed, counter=counter)
        R = max(o.bounding_ball.radius for o in program.outer)
        base = cfg or SolverConfig(seed=seed)
        eps_internal = epsilon / (float(np.linalg.norm(program.c)) * R)
        cfg = SolverConfig(**{**base.__dict__, "epsilon": eps_internal, "R": R})
        res = solve(program, cfg, counter)
        theta = np.zeros(n)
        seen = np.zeros(n, dtype=bool)
        for term, off in zip(instance.terms, offsets[:-1]):
            for j, k in enumerate(term.support):
                if not seen[k]:
                    theta[k] = res.x[off + j]
                    seen[k] = True
        theta = np.clip(theta, 0.0, 1.0)
        S, value = round_to_set(instance, theta)
        relaxed = lovasz_value(instance, theta)
        return SFMResult(S, value, theta, relaxed, counter, res, lips)
    finally:
        instance.attach_counter(None)
