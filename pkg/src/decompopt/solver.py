"""Hybrid cutting-plane / interior-point method for block-structured programs.

The program is ``min c.x`` subject to ``x_i in K_i`` for each block and
``A x = b``, where each ``K_i`` is known only through a separation oracle.
Each block keeps an inner body (grown from oracle-certified points) and an
outer body (shrunk by oracle cuts). The iterate ``x`` lives in the inner
bodies and follows the path of the universal barrier of the inner bodies
towards ``x*_out``, the tilted centroid of the outer bodies. An oracle is
queried for block ``i`` only when ``x*_out`` has moved far from ``x`` in the
local norm of that block.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .barriers import LocalMetric, local_norm, metric_from_moments
from .geometry import (AffineSubspace, GeometryError, InnerBody,
                       NonConvergenceError, OuterBody, PolarBody, affine_embed,
                       affine_project, cut_outer, grow_inner, inner_membership)
from .oracles import CountingOracle, OracleCounter
from .sampling import (OuterChainSampler, PolarChainSampler, UnboundedChordError,
                       estimate_moments, move_polar_states, polar_member_mask,
                       rounding_transform, weighted_moments)

AFFINE_TOL = 1e-9
TRACE_COLUMNS = ("iter", "event_kind", "block", "t", "objective", "sep_calls",
                 "eval_calls", "wall_ms")


class StepFailure(RuntimeError):
    """An x-step left the inner body even after re-estimating the metrics."""


class OracleContractError(RuntimeError):
    """A separation oracle returned a halfspace that does not exclude the query."""


@dataclass
class ConvexProgram:
    """Blocks given by separation oracles plus linear coupling.

    ``inner``/``outer`` are the initial inner and outer bodies; ``x0`` is a
    feasible start inside every inner body with ``A x0 = b``.
    """

    oracles: list
    inner: list
    outer: list
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    x0: np.ndarray
    names: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.c.size)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if not (len(self.oracles) == len(self.inner) == len(self.outer)):
            raise ValueError("oracles, inner and outer bodies must align")
        if sum(self.dims) != self.c.size or self.x0.size != self.c.size:
            raise ValueError("block dimensions do not add up to the cost vector")

    @property
    def dims(self) -> list[int]:
        return [body.dim for body in self.inner]

    @property
    def blocks(self) -> list[slice]:
        out, pos = [], 0
        for d in self.dims:
            out.append(slice(pos, pos + d))
            pos += d
        return out

    @property
    def m(self) -> int:
        return int(sum(self.dims))


@dataclass
class SolverConfig:
    """Solver knobs. ``None`` sampler fields scale with the dimension."""

    epsilon: float = 0.05
    eta: float = 0.25
    R: float | None = None
    r: float | None = None
    noise_slack: float = 3.0
    seed: int = 0
    max_iterations: int | None = None
    outer_chains: int = 64
    outer_samples: int = 1024
    outer_burn: int | None = None
    outer_warm_burn: int | None = None
    outer_thinning: int | None = None
    polar_chains: int = 64
    polar_samples: int = 1024
    polar_burn: int | None = None
    polar_warm_burn: int | None = None
    polar_thinning: int | None = None
    reweight_ess: float = 0.5
    finalize_steps: int = 50

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 1/2)")
        if not 0 < self.eta <= 0.25:
            raise ValueError("eta must lie in (0, 1/4]")
        if self.noise_slack < 0:
            raise ValueError("noise_slack must be nonnegative")


@dataclass
class Event:
    iter: int
    kind: str
    block: int
    t: float
    objective: float
    center_objective: float
    sep_calls: int
    eval_calls: int
    wall_ms: float
    detail: float | None = None

    def trace_row(self) -> dict:
        return {"iter": self.iter, "event_kind": self.kind, "block": self.block,
                "t": self.t, "objective": self.objective,
                "sep_calls": self.sep_calls, "eval_calls": self.eval_calls,
                "wall_ms": self.wall_ms}


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    status: str
    events: list
    counter: OracleCounter
    t: float
    t_end: float
    inner: list
    outer: list
    message: str = ""
    max_iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def condition1_test(cx: float, c_center: float, m: int, t: float, slack: float = 0.0) -> bool:
    """True when there is room for progress: ``c.x > c.x*_out + 4m/t + slack``."""
    return cx > c_center + 4.0 * m / t + slack


def condition2_test(metric: LocalMetric, v, eta: float, block_dim: int,
                    slack: float = 0.0) -> bool:
    """True when ``<grad, v> + eta ||v||_x >= 4 D - slack`` (query the oracle)."""
    v = np.asarray(v, dtype=float)
    lhs = float(metric.grad @ v) + eta * local_norm(metric, v)
    return lhs >= 4.0 * block_dim - slack


def normalized_step(metrics, blocks, v, eta: float) -> np.ndarray:
    """``(eta/2) v / sum_i ||v_i||_{x_i}`` (so the step has block-sum norm eta/2)."""
    total = sum(local_norm(mt, v[sl]) for mt, sl in zip(metrics, blocks))
    if total <= 0:
        return np.zeros_like(v)
    return 0.5 * eta * v / total


class SolverState:
    """The main loop as an explicit state machine."""

    def __init__(self, program: ConvexProgram, cfg: SolverConfig | None = None,
                 counter: OracleCounter | None = None):
        self.program = program
        self.cfg = cfg = cfg or SolverConfig()
        self.counter = counter if counter is not None else OracleCounter()
        self.oracles = [o if isinstance(o, CountingOracle) and o.counter is self.counter
                        else CountingOracle(o, self.counter) for o in program.oracles]
        self.inner = list(program.inner)
        self.outer = list(program.outer)
        self.blocks = program.blocks
        self.dims = program.dims
        self.m = program.m
        self.nb = len(self.blocks)
        self.c = program.c
        self.sub = AffineSubspace.from_constraints(program.A, program.b, anchor=program.x0)
        if self.sub.residual(program.x0) > AFFINE_TOL:
            raise GeometryError("initial point violates the affine constraints")
        for i, sl in enumerate(self.blocks):
            if not inner_membership(self.inner[i], program.x0[sl]):
                raise GeometryError(f"initial point is not in inner body {i}")
        self.y = affine_project(self.sub, program.x0)
        self.x = affine_embed(self.sub, self.y)
        self.k = self.sub.dim

        self.R = cfg.R or max(b.bounding_ball.radius for b in self.outer)
        self.r = cfg.r or min(b.seed_ball.radius for b in self.inner)
        cnorm = float(np.linalg.norm(self.c))
        if cnorm <= 0:
            raise ValueError("cost vector must be nonzero")
        m = self.m
        self.t_init = m * math.log(max(m, 2)) / (math.sqrt(self.nb) * cnorm * self.R)
        self.t_end = 8.0 * m / (cfg.epsilon * cnorm * self.R)
        self.t = self.t_init
        self.factor = 1.0 + cfg.eta / (4.0 * m)
        self.max_iterations = cfg.max_iterations or int(math.ceil(
            50 * m * math.log(m * self.R / (cfg.epsilon * self.r))))
        # every point of the outer bodies has c.x at least this much
        self.c_lower = sum(float(self.c[sl] @ o.bounding_ball.center)
                           - float(np.linalg.norm(self.c[sl])) * o.bounding_ball.radius
                           for o, sl in zip(self.outer, self.blocks))

        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        k = max(self.k, 1)
        self.outer_burn = cfg.outer_burn if cfg.outer_burn is not None else 20 * k
        self.outer_warm_burn = (cfg.outer_warm_burn if cfg.outer_warm_burn is not None
                                else 2 * k)
        self.outer_thin = cfg.outer_thinning or max(1, k // 2)
        self.outer_per_chain = -(-cfg.outer_samples // cfg.outer_chains)
        self.outer_sampler = None
        if self.k > 0:
            self.outer_sampler = OuterChainSampler(
                self.outer, self.blocks, self.sub, np.random.default_rng(seeds[0]),
                chains=cfg.outer_chains)
            self.outer_sampler.start_from(self.y[None, :])
        self.outer_cold = True
        self.outer_transform = None

        D = max(self.dims)
        self.polar_burn = cfg.polar_burn if cfg.polar_burn is not None else 30 * D
        self.polar_warm_burn = (cfg.polar_warm_burn if cfg.polar_warm_burn is not None
                                else 2 * D)
        self.polar_thin = cfg.polar_thinning or D
        self.polar_per_chain = -(-cfg.polar_samples // cfg.polar_chains)
        self.polar = PolarChainSampler(np.random.default_rng(seeds[1]),
                                       chains=cfg.polar_chains)
        self.polar_states = [None] * self.nb
        self.polar_anchor = [None] * self.nb
        self.metrics = [None] * self.nb

        self.center = None
        self.center_se = None
        self.center_se_c = 0.0
        self.center_samples = None
        self.center_cvals = None
        self.center_logw = None
        self.sample_t = None
        self.samples_valid = False
        self.center_stale = True
        self.suppressed: set[int] = set()
        self.events: list[Event] = []
        self.iter = 0
        self.start = time.perf_counter()
        self.refresh_metrics(range(self.nb))

    # ---- bookkeeping -------------------------------------------------
    @property
    def objective(self) -> float:
        return float(self.c @ self.x)

    def log(self, kind: str, block: int = -1, detail=None, count: bool = True):
        if count:
            self.iter += 1
        c_center = float(self.c @ self.center) if self.center is not None else float("nan")
        self.events.append(Event(
            self.iter, kind, block, self.t, self.objective, c_center,
            self.counter.separation_calls, self.counter.evaluation_calls,
            1000.0 * (time.perf_counter() - self.start), detail))

    # ---- barrier estimates -------------------------------------------
    def refresh_metrics(self, which, boost: int = 1, cold: bool = False):
        which = list(which)
        bodies, starts, warm = [], [], True
        for i in which:
            anchor = self.x[self.blocks[i]].copy()
            body = PolarBody(self.inner[i], anchor)
            st = None if cold else self.polar_states[i]
            if st is not None:
                if not np.array_equal(self.polar_anchor[i], anchor):
                    st = move_polar_states(st, self.polar_anchor[i], anchor)
                ok = np.isfinite(st).all(axis=1)
                ok[ok] = polar_member_mask(body, st[ok])
                if ok.any():
                    good = np.flatnonzero(ok)
                    bad = np.flatnonzero(~ok)
                    st = st.copy()
                    st[bad] = st[good[np.arange(bad.size) % good.size]]
                else:
                    st = None
            if st is None:
                warm = False
            bodies.append(body)
            starts.append(st)
        burn = self.polar_warm_burn if warm else self.polar_burn
        samples, finals = self.polar.run(bodies, starts, burn,
                                         self.polar_per_chain * boost, self.polar_thin)
        for j, i in enumerate(which):
            d = self.dims[i]
            mom = estimate_moments(samples[j].reshape(-1, d), self.cfg.polar_chains)
            self.metrics[i] = metric_from_moments(mom)
            self.polar_states[i] = finals[j]
            self.polar_anchor[i] = bodies[j].anchor

    def ensure_center(self):
        """Fresh estimate of ``x*_out`` at the current ``t``.

        Samples drawn at an earlier ``t`` on the same outer bodies are reused
        with importance weights ``exp(-(t - t_s) c.x)`` while their effective
        sample size stays above ``reweight_ess`` of the sample count.
        """
        if not self.center_stale:
            return
        if self.k == 0:
            self.center = self.x.copy()
            self.center_se = np.zeros_like(self.x)
            self.center_se_c = 0.0
            self.center_samples = self.x[None, :]
            self.center_logw = np.zeros(1)
            self.center_stale = False
            return
        chains = self.cfg.outer_chains
        if self.samples_valid:
            logw = -(self.t - self.sample_t) * self.center_cvals
            mom, ess = weighted_moments(self.center_samples, logw, chains)
            if ess >= self.cfg.reweight_ess * self.center_samples.shape[0]:
                self._set_center(mom, weighted_moments(self.center_cvals, logw, chains)[0],
                                 logw)
                return
        burn = self.outer_burn if self.outer_cold else self.outer_warm_burn
        Y = self.outer_sampler.run(-self.t * self.c, burn, self.outer_per_chain,
                                   self.outer_thin, transform=self.outer_transform)
        Y = Y.reshape(-1, self.k)
        X = self.outer_sampler.embed(Y)
        T = rounding_transform(Y)
        if T is not None:
            self.outer_transform = T
        self.center_samples = X
        self.center_cvals = X @ self.c
        self.sample_t = self.t
        self.samples_valid = True
        self.outer_cold = False
        self._set_center(estimate_moments(X, chains),
                         estimate_moments(self.center_cvals, chains), np.zeros(X.shape[0]))

    def _set_center(self, mom, cmom, logw):
        self.center = mom.mean
        self.center_se = mom.stderr
        self.center_se_c = float(cmom.stderr[0])
        self.center_logw = logw
        self.center_stale = False

    # ---- the two conditions ------------------------------------------
    def condition1_holds(self) -> bool:
        cx = self.objective
        if cx <= self.c_lower + 4.0 * self.m / self.t:
            return False
        self.ensure_center()
        return condition1_test(cx, float(self.c @ self.center), self.m, self.t,
                               self.cfg.noise_slack * self.center_se_c)

    def condition2_violated(self, i: int) -> bool:
        self.ensure_center()
        sl = self.blocks[i]
        metric = self.metrics[i]
        v = self.center[sl] - self.x[sl]
        se = math.sqrt(float(np.sum((metric.grad_stderr * v) ** 2))
                       + float(np.sum((metric.grad * self.center_se[sl]) ** 2)))
        return condition2_test(metric, v, self.cfg.eta, self.dims[i],
                               self.cfg.noise_slack * se)

    def first_violated_block(self):
        for i in range(self.nb):
            if i not in self.suppressed and self.condition2_violated(i):
                return i
        return None

    # ---- actions -------------------------------------------------------
    def update_t(self):
        self.t *= self.factor
        self.center_stale = True
        self.suppressed.clear()
        self.log("t_update")

    def process_block(self, i: int):
        sl = self.blocks[i]
        q = self.center[sl].copy()
        res = self.oracles[i](q)
        if res.member:
            if inner_membership(self.inner[i], q):
                # sampling noise flagged a point the inner body already holds
                self.suppressed.add(i)
                self.log("kin_noop", i)
                return
            self.inner[i] = grow_inner(self.inner[i], q)
            self.refresh_metrics([i])
            self.center_stale = True
            self.suppressed.clear()
            self.log("kin_grow", i)
            return
        h = res.halfspace
        if h.violation(q) < 0:
            raise OracleContractError(f"block {i}: returned halfspace contains the query")
        self.outer[i] = cut_outer(self.outer[i], h, self.x[sl])
        w = np.exp(self.center_logw - self.center_logw.max())
        inside = self.center_samples[:, sl] @ h.normal <= h.offset
        survival = float(w @ inside / w.sum())
        if self.outer_sampler is not None:
            self.outer_sampler.set_bodies(self.outer)
            try:
                self.outer_sampler.restrict_to_members()
            except GeometryError:
                self.outer_sampler.start_from(self.y[None, :])
        self.outer_cold = True
        self.samples_valid = False
        self.center_stale = True
        self.suppressed.clear()
        self.log("kout_cut", i, detail=survival)

    def _inner_ok(self, x) -> bool:
        return all(inner_membership(self.inner[i], x[sl])
                   for i, sl in enumerate(self.blocks))

    def step_x(self):
        for attempt in range(2):
            v = self.center - self.x
            step = normalized_step(self.metrics, self.blocks, v, self.cfg.eta)
            y_new = affine_project(self.sub, self.x + step)
            x_new = affine_embed(self.sub, y_new)
            if self._inner_ok(x_new):
                old = (self.y, self.x)
                self.y, self.x = y_new, x_new
                try:
                    self.refresh_metrics(range(self.nb))
                except UnboundedChordError:
                    self.y, self.x = old
                    if attempt == 0:
                        self.refresh_metrics(range(self.nb), boost=4)
                        continue
                    raise StepFailure("step landed on the inner-body boundary")
                self.suppressed.clear()
                self.log("x_step")
                return
            if attempt == 0:
                self.refresh_metrics(range(self.nb), boost=4)
        raise StepFailure("x-step left the inner body after re-estimating the metrics")

    def finalize(self) -> np.ndarray:
        """Damped descent on the barrier surrogate; returns the best feasible point."""
        best_x, best = self.x.copy(), self.objective
        N = self.sub.nullspace_basis
        for _ in range(self.cfg.finalize_steps if self.k > 0 else 0):
            g = self.t * self.c + np.concatenate([mt.grad for mt in self.metrics])
            g_red = N.T @ g
            direction = -(N @ g_red)
            step = normalized_step(self.metrics, self.blocks, direction, self.cfg.eta)
            if not np.any(step):
                break
            y_new = affine_project(self.sub, self.x + step)
            x_new = affine_embed(self.sub, y_new)
            if not self._inner_ok(x_new):
                break
            old = (self.y, self.x, list(self.metrics), list(self.polar_states),
                   list(self.polar_anchor))
            self.y, self.x = y_new, x_new
            try:
                self.refresh_metrics(range(self.nb))
            except UnboundedChordError:
                self.y, self.x, self.metrics, self.polar_states, self.polar_anchor = old
                break
            g_new = self.t * self.c + np.concatenate([mt.grad for mt in self.metrics])
            if g_new @ (x_new - old[1]) > 0:
                # convexity cannot certify a decrease of the surrogate
                self.y, self.x, self.metrics, self.polar_states, self.polar_anchor = old
                break
            self.log("finalize", count=False)
            if self.objective < best:
                best_x, best = self.x.copy(), self.objective
        return best_x

    # ---- main loop ---------------------------------------------------
    def run(self, stop_check=None) -> SolveResult:
        """Run to termination. ``stop_check(state)`` may end the loop early."""
        status, message = "converged", ""
        best_x, best = self.x.copy(), self.objective
        try:
            while True:
                if self.iter >= self.max_iterations:
                    status = "max_iterations"
                    message = f"stopped after {self.iter} iterations"
                    break
                if not self.condition1_holds():
                    if self.t >= self.t_end:
                        self.log("terminate", count=False)
                        break
                    self.update_t()
                    continue
                i = self.first_violated_block()
                if i is not None:
                    self.process_block(i)
                else:
                    self.step_x()
                if self.objective < best:
                    best_x, best = self.x.copy(), self.objective
                if stop_check is not None and stop_check(self):
                    status = "stopped"
                    break
        except (StepFailure, NonConvergenceError, UnboundedChordError) as exc:
            status, message = "aborted", str(exc)
        if status == "converged":
            x = self.finalize()
            if float(self.c @ x) > best:
                x = best_x
        elif status == "stopped":
            x = self.x.copy()
        else:
            x = best_x
        return SolveResult(x, float(self.c @ x), status, self.events, self.counter,
                           self.t, self.t_end, self.inner, self.outer, message,
                           self.max_iterations)


def solve(program: ConvexProgram, cfg: SolverConfig | None = None,
          counter: OracleCounter | None = None, stop_check=None) -> SolveResult:
    return SolverState(program, cfg, counter).run(stop_check)
