"""Starting points: inner-ball finding, Phase-I and the epigraph builder.

``find_inner_ball`` certifies a small ball inside a body known only through a
separation oracle by a randomized centroid cutting-plane loop.
``phase1_initialize`` turns per-block inner balls whose centers violate the
coupling constraints into a feasible, inner-body start by solving an
auxiliary program with penalized slack variables.
``build_epigraph_program`` is the direct route for epigraph blocks, whose
inner balls are known in closed form.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import (AffineSubspace, Ball, GeometryError, InnerBody,
                       NonConvergenceError, OuterBody, RANK_TOL, affine_project,
                       cut_outer, inner_membership, strictly_interior)
from .oracles import Box, CountingOracle, EpigraphBlock, OracleCounter, known_body_oracle
from .sampling import OuterChainSampler, estimate_moments
from .solver import ConvexProgram, SolverConfig, SolverState


@dataclass
class InnerBallResult:
    center: np.ndarray
    radius: float
    oracle_calls: int
    iterations: int
    outer: OuterBody

    @property
    def ball(self) -> Ball:
        return Ball(self.center, self.radius)


def _centroid(sampler: OuterChainSampler, body: OuterBody, n_samples: int, burn: int):
    sampler.set_bodies([body])
    try:
        sampler.restrict_to_members()
    except GeometryError as exc:
        # a cut through the centroid keeps a constant fraction, so losing every
        # chain means the body is far thinner than promised
        raise NonConvergenceError(
            "outer body collapsed; the inner-radius assumption may be violated") from exc
    per_chain = -(-n_samples // sampler.chains)
    Y = sampler.run(None, burn, per_chain, max(1, body.dim))
    return estimate_moments(Y.reshape(-1, body.dim), sampler.chains).mean


def find_inner_ball(oracle, d: int, R: float, r: float, seed: int = 0,
                    centroid_samples: int = 2000, chains: int = 40,
                    max_redraws: int = 3, budget: int | None = None) -> InnerBallResult:
    """Find a ball of radius ``r / (6 d^3.5)`` inside a body with ``B(z, r) in K in B(0, R)``.

    Each round estimates the centroid ``v`` of the current outer body and
    queries a random point near it. A non-member yields a cut. A member
    triggers a test of the cross-polytope ``v +- r/(6 d^3) e_i``; if all its
    vertices are members the inscribed ball is returned, otherwise the query
    point is redrawn. After ``max_redraws`` failed cross-polytope tests at the
    same centroid the failing vertex's halfspace is used as a cut.
    """
    if not 0 < r <= R:
        raise ValueError("need 0 < r <= R")
    counter = OracleCounter()
    oracle = CountingOracle(oracle, counter)
    if budget is None:
        budget = int(math.ceil(200 * d * math.log(max(R / r, math.e))))
    rng = np.random.default_rng(seed)
    sampler = OuterChainSampler([OuterBody(Ball(np.zeros(d), R), ())], [slice(0, d)],
                                AffineSubspace.from_constraints(np.zeros((0, d)), np.zeros(0)),
                                rng, chains=chains)
    sampler.start_from(np.zeros((1, d)))
    body = OuterBody(Ball(np.zeros(d), R), ())
    delta = r / (6.0 * d ** 3)
    probe_radius = r / (6.0 * d)
    burn = 50 * d
    v = _centroid(sampler, body, centroid_samples, burn)
    iterations, redraws = 0, 0
    while True:
        iterations += 1
        if counter.separation_calls >= budget:
            raise NonConvergenceError(
                f"inner-ball search exceeded {budget} oracle calls; "
                "the inner-radius assumption may be violated")
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        u = v + probe_radius * rng.random() ** (1.0 / d) * direction
        res = oracle(u)
        if not res.member:
            body = cut_outer(body, res.halfspace)
            v = _centroid(sampler, body, centroid_samples, 5 * d)
            redraws = 0
            continue
        failed = None
        for i in range(d):
            for sign in (1.0, -1.0):
                p = v.copy()
                p[i] += sign * delta
                pr = oracle(p)
                if not pr.member:
                    failed = pr
                    break
            if failed is not None:
                break
        if failed is None:
            return InnerBallResult(v, delta / math.sqrt(d), counter.separation_calls,
                                   iterations, body)
        redraws += 1
        if redraws > max_redraws:
            body = cut_outer(body, failed.halfspace)
            v = _centroid(sampler, body, centroid_samples, 5 * d)
            redraws = 0


def min_norm_solve(A, rhs, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Minimum-norm solution of ``A y = rhs`` via SVD; raises if inconsistent."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    rhs = np.asarray(rhs, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(A.shape[1])
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    keep = sv > rank_tol * max(sv.max(initial=0.0), 1.0)
    y = Vt[keep].T @ ((U[:, keep].T @ rhs) / sv[keep])
    if np.linalg.norm(A @ y - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
        raise GeometryError("linear system is inconsistent; the problem is infeasible")
    return y


@dataclass
class ModifiedProgram:
    """The auxiliary program over ``(x1, x2, x3)`` with penalized slacks."""

    program: ConvexProgram
    s: float
    slack_bound: float
    m: int
    initial_split: tuple


def default_penalty(m: int, R: float, r: float, epsilon: float) -> float:
    return 2.0 ** 16 * m ** 2.5 * R / (r * epsilon)


def build_modified_program(oracles, balls, outers, A, b, c, s: float,
                           margin: float = 1e-3) -> ModifiedProgram:
    """Assemble the slack program from per-block inner balls."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    z = np.concatenate([ball.center for ball in balls])
    M = z.size
    y = min_norm_solve(A, b - A @ z)
    x2 = np.maximum(y, 0.0)
    x3 = np.maximum(-y, 0.0)
    bound = 2.0 * float(np.max(np.abs(y), initial=0.0)) + 1.0
    tau = margin * bound
    slack_body = Box(np.zeros(1), np.array([bound]))
    slack_oracle = known_body_oracle(slack_body)
    half = Ball(np.array([bound / 2]), bound / 2)
    oracles = list(oracles) + [slack_oracle] * (2 * M)
    inner = [InnerBody(ball, ()) for ball in balls] + [InnerBody(half, ())] * (2 * M)
    outer = list(outers) + [OuterBody(half, ())] * (2 * M)
    penalty = s * float(np.linalg.norm(c)) / math.sqrt(M)
    c_bar = np.concatenate([c, np.full(2 * M, penalty)])
    A_bar = np.hstack([A, A, -A])
    x0 = np.concatenate([z, x2 + tau, x3 + tau])
    program = ConvexProgram(oracles, inner, outer, A_bar, b, c_bar, x0)
    return ModifiedProgram(program, s, bound, M, (z, x2, x3))


def phase1_initialize(oracles, balls, outers, A, b, c, s: float | None = None,
                      epsilon: float = 0.05, cfg: SolverConfig | None = None,
                      counter: OracleCounter | None = None, margin: float = 1e-6):
    """Feasible start ``x_in`` with ``A x_in = b`` inside the inner bodies.

    Returns ``(x_in, inner_bodies, outer_bodies, info)``. When the ball
    centers already satisfy the coupling constraints they are returned as is.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    z = np.concatenate([ball.center for ball in balls])
    y = min_norm_solve(A, b - A @ z)
    inner = [InnerBody(ball, ()) for ball in balls]
    if np.linalg.norm(y) <= 1e-12:
        return z, inner, list(outers), {"solver_events": 0, "y_norm": 0.0}
    M = z.size
    R = max(o.bounding_ball.radius for o in outers)
    r = min(ball.radius for ball in balls)
    if s is None:
        s = default_penalty(M, R, r, epsilon)
    mod = build_modified_program(oracles, balls, outers, A, b, c, s)
    blocks = mod.program.blocks
    nb = len(balls)
    sl1 = slice(0, M)
    sl2 = slice(M, 2 * M)
    sl3 = slice(2 * M, 3 * M)
    found = {}

    def x_in_of(x):
        return x[sl1] + x[sl2] - x[sl3]

    def inside(state, x):
        pos = 0
        for i in range(nb):
            d = balls[i].dim
            if not strictly_interior(state.inner[i], x[pos:pos + d], margin=margin):
                return False
            pos += d
        return True

    def certified(state):
        # x_in itself, or x1 pulled back onto A x = b (usually the smaller move)
        x1 = state.x[sl1]
        for cand in (x_in_of(state.x), x1 + min_norm_solve(A, b - A @ x1)):
            if inside(state, cand):
                found["x"] = cand
                return True
        return False

    if cfg is None:
        # the slack total must fall well below r; the penalty cancels out of this ratio
        R_bar = max(R, 0.5 * mod.slack_bound)
        cfg = SolverConfig(epsilon=min(epsilon, 0.49, 0.1 * r / (math.sqrt(2 * M) * R_bar)))
    state = SolverState(mod.program, cfg, counter)
    if certified(state):
        res = None
    else:
        res = state.run(stop_check=certified)
    if "x" not in found:
        raise NonConvergenceError("Phase-I did not certify an inner-body start")
    x_in = found["x"]
    # restore A x_in = b to round-off
    x_in = x_in + min_norm_solve(A, b - A @ x_in) if A.shape[0] else x_in
    info = {"solver_events": 0 if res is None else len(res.events),
            "y_norm": float(np.linalg.norm(y)), "s": s}
    return x_in, state.inner[:nb], state.outer[:nb], info


def coupling_from_supports(supports, offsets) -> np.ndarray:
    """Equality rows tying shared coordinates, ordered by (i < j, ascending k)."""
    rows = []
    width = int(offsets[-1])
    for i, j in itertools.combinations(range(len(supports)), 2):
        si, sj = list(supports[i]), list(supports[j])
        for k in sorted(set(si) & set(sj)):
            row = np.zeros(width)
            row[offsets[i] + si.index(k)] = 1.0
            row[offsets[j] + sj.index(k)] = -1.0
            rows.append(row)
    return np.array(rows) if rows else np.zeros((0, width))


def epigraph_seed_ball(block: EpigraphBlock) -> Ball:
    """Closed-form ball inside the epigraph block (valid for L-Lipschitz f)."""
    R = block.radius
    rho = min(R, 2.0 * R / (1.0 + math.sqrt(2.0)))
    if block.lower is not None:
        rho = min(rho, float(np.min(block.x0 - block.lower)))
    if block.upper is not None:
        rho = min(rho, float(np.min(block.upper - block.x0)))
    if rho <= 0:
        raise GeometryError("box center lies on the domain boundary")
    rho *= 1.0 - 1e-9
    center = np.append(block.x0, block.z0 + math.sqrt(2.0) * rho)
    return Ball(center, rho)


def epigraph_outer_ball(block: EpigraphBlock) -> Ball:
    return Ball(np.append(block.x0, block.z0), math.sqrt(5.0) * block.radius)


def build_epigraph_program(blocks, A, b, method: str = "analytic", seed: int = 0,
                           counter: OracleCounter | None = None,
                           phase1_cfg: SolverConfig | None = None,
                           epsilon: float = 0.05) -> ConvexProgram:
    """Program ``min sum L_i z_i`` over epigraph blocks coupled by ``A x = b``.

    ``method='analytic'`` uses the closed-form seed balls; ``'search'`` finds
    each block's inner ball with the oracle and then runs Phase-I.
    """
    blocks = list(blocks)
    c = np.concatenate([np.append(np.zeros(bl.var_dim), bl.lipschitz) for bl in blocks])
    outers = [OuterBody(epigraph_outer_ball(bl), ()) for bl in blocks]
    A = np.asarray(A, dtype=float).reshape(-1, c.size)
    b = np.asarray(b, dtype=float).reshape(-1)
    if method == "analytic":
        balls = [epigraph_seed_ball(bl) for bl in blocks]
    elif method == "search":
        balls = []
        for i, bl in enumerate(blocks):
            center = outers[i].bounding_ball.center
            R = outers[i].bounding_ball.radius
            guess = epigraph_seed_ball(bl).radius

            def shifted(q, bl=bl, center=center):
                res = bl(np.asarray(q) + center)
                if res.member:
                    return res
                h = res.halfspace
                return type(res).separated(type(h)(h.normal, h.offset - h.normal @ center))

            found = find_inner_ball(shifted, bl.dim, R, guess,
                                    seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
            if counter is not None:
                counter.separation_calls += found.oracle_calls
            balls.append(Ball(found.center + center, found.radius))
    else:
        raise ValueError(f"unknown initialization method {method!r}")
    z = np.concatenate([ball.center for ball in balls])
    if A.shape[0] == 0 or np.linalg.norm(A @ z - b) <= 1e-12:
        inner = [InnerBody(ball, ()) for ball in balls]
        return ConvexProgram(list(blocks), inner, outers, A, b, c, z)
    x_in, inner, outer, _ = phase1_initialize(list(blocks), balls, outers, A, b, c,
                                              epsilon=epsilon, cfg=phase1_cfg,
                                              counter=counter)
    return ConvexProgram(list(blocks), inner, outer, A, b, c, x_in)
