"""Separation oracles, the epigraph reduction and call accounting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Ball, Halfspace, OuterBody

STRICT_TOL = 1e-12


@dataclass(frozen=True)
class SeparationResult:
    member: bool
    halfspace: Halfspace | None = None

    @classmethod
    def inside(cls):
        return cls(True, None)

    @classmethod
    def separated(cls, h: Halfspace):
        return cls(False, h)

    def __repr__(self):
        if self.member:
            return "SeparationResult(member)"
        return f"SeparationResult(separated {self.halfspace})"


@dataclass
class OracleCounter:
    separation_calls: int = 0
    subgradient_calls: int = 0
    evaluation_calls: int = 0

    def as_dict(self) -> dict:
        return {"separation_calls": self.separation_calls,
                "subgradient_calls": self.subgradient_calls,
                "evaluation_calls": self.evaluation_calls}


class CountingOracle:
    """Transparent wrapper that counts every separation call."""

    def __init__(self, oracle, counter: OracleCounter | None = None):
        self.oracle = oracle
        self.counter = counter if counter is not None else OracleCounter()

    def __call__(self, q) -> SeparationResult:
        self.counter.separation_calls += 1
        return self.oracle(q)

    def __getattr__(self, name):
        return getattr(self.oracle, name)


def wrap_counting(oracle, counter: OracleCounter | None = None) -> CountingOracle:
    return CountingOracle(oracle, counter)


class CountingSubgradient:
    """Wrap ``f(x) -> (value, subgradient)`` and count calls."""

    def __init__(self, fn, counter: OracleCounter):
        self.fn = fn
        self.counter = counter

    def __call__(self, x):
        self.counter.subgradient_calls += 1
        return self.fn(x)


def _ball_facet(center, radius, q) -> Halfspace:
    """Tangent halfspace of ``B(center, radius)`` where the ray to ``q`` exits."""
    u = q - center
    u = u / np.linalg.norm(u)
    return Halfspace(u, float(u @ center + radius))


@dataclass
class EpigraphBlock:
    """Separation oracle for ``{(x, z): f(x) <= L z}`` within a trust box.

    The box is ``||x - x0|| <= R`` and ``z0 - 2R <= z <= z0 + 2R``. Optional
    ``lower``/``upper`` bounds restrict ``x`` to the domain of ``f``.
    ``subgradient(x)`` returns ``(f(x), g)``.
    """

    subgradient: object
    lipschitz: float
    x0: np.ndarray
    z0: float
    radius: float
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.lower is not None:
            self.lower = np.asarray(self.lower, dtype=float)
        if self.upper is not None:
            self.upper = np.asarray(self.upper, dtype=float)

    @property
    def var_dim(self) -> int:
        return self.x0.shape[0]

    @property
    def dim(self) -> int:
        return self.var_dim + 1

    def _facet(self, normal_x, normal_z, offset):
        return Halfspace(np.append(normal_x, normal_z), offset)

    def box_violation(self, q) -> Halfspace | None:
        x, z = q[:-1], q[-1]
        d = self.var_dim
        if np.linalg.norm(x - self.x0) > self.radius:
            h = _ball_facet(self.x0, self.radius, x)
            return self._facet(h.normal, 0.0, h.offset)
        if z > self.z0 + 2 * self.radius:
            return self._facet(np.zeros(d), 1.0, self.z0 + 2 * self.radius)
        if z < self.z0 - 2 * self.radius:
            return self._facet(np.zeros(d), -1.0, -(self.z0 - 2 * self.radius))
        if self.lower is not None:
            i = int(np.argmax(self.lower - x))
            if x[i] < self.lower[i]:
                e = np.zeros(d)
                e[i] = -1.0
                return self._facet(e, 0.0, -self.lower[i])
        if self.upper is not None:
            i = int(np.argmax(x - self.upper))
            if x[i] > self.upper[i]:
                e = np.zeros(d)
                e[i] = 1.0
                return self._facet(e, 0.0, self.upper[i])
        return None

    def __call__(self, q) -> SeparationResult:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise ValueError(f"query has shape {q.shape}, block expects ({self.dim},)")
        h = self.box_violation(q)
        if h is not None:
            return SeparationResult.separated(h)
        x, z = q[:-1], q[-1]
        fx, g = self.subgradient(x)
        if fx <= self.lipschitz * z:
            return SeparationResult.inside()
        g = np.asarray(g, dtype=float)
        return SeparationResult.separated(
            self._facet(g, -self.lipschitz, float(g @ x - fx)))

    def is_member(self, q, tol: float = 0.0) -> bool:
        """Ground-truth membership (no counting, used by checks)."""
        q = np.asarray(q, dtype=float)
        x, z = q[:-1], q[-1]
        if np.linalg.norm(x - self.x0) > self.radius + tol:
            return False
        if abs(z - self.z0) > 2 * self.radius + tol:
            return False
        if self.lower is not None and np.any(x < self.lower - tol):
            return False
        if self.upper is not None and np.any(x > self.upper + tol):
            return False
        return self.subgradient(x)[0] <= self.lipschitz * z + tol


def epigraph_separate(block: EpigraphBlock, q) -> SeparationResult:
    return block(q)


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class Polytope:
    """``{y : G y <= h}``; rows need not be normalized."""

    G: np.ndarray
    h: np.ndarray


@dataclass
class KnownBodyOracle:
    """Exact separation for a body given analytically."""

    body: object
    _G: np.ndarray = field(init=False, repr=False, default=None)
    _h: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        b = self.body
        if isinstance(b, Box):
            lo, hi = np.asarray(b.lower, float), np.asarray(b.upper, float)
            eye = np.eye(lo.size)
            self._G, self._h = np.vstack([eye, -eye]), np.concatenate([hi, -lo])
        elif isinstance(b, Polytope):
            G = np.asarray(b.G, float)
            norms = np.linalg.norm(G, axis=1)
            self._G, self._h = G / norms[:, None], np.asarray(b.h, float) / norms
        elif isinstance(b, OuterBody):
            self._G, self._h = b.cut_matrix()
        elif not isinstance(b, Ball):
            raise TypeError(f"unsupported body type {type(b).__name__}")

    def __call__(self, q) -> SeparationResult:
        q = np.asarray(q, dtype=float)
        ball = self.body if isinstance(self.body, Ball) else getattr(
            self.body, "bounding_ball", None)
        if ball is not None and np.linalg.norm(q - ball.center) > ball.radius:
            return SeparationResult.separated(_ball_facet(ball.center, ball.radius, q))
        if self._G is not None and self._G.shape[0]:
            viol = self._G @ q - self._h
            j = int(np.argmax(viol))
            if viol[j] > 0:
                return SeparationResult.separated(Halfspace(self._G[j], float(self._h[j])))
        return SeparationResult.inside()

    def is_member(self, q, tol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        ball = self.body if isinstance(self.body, Ball) else getattr(
            self.body, "bounding_ball", None)
        if ball is not None and np.linalg.norm(q - ball.center) > ball.radius + tol:
            return False
        if self._G is not None and self._G.shape[0]:
            return bool(np.all(self._G @ q <= self._h + tol))
        return True


def known_body_oracle(body) -> KnownBodyOracle:
    return KnownBodyOracle(body)
