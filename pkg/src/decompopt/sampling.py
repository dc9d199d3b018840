"""Hit-and-run sampling over convex bodies.

Two layers live here. The generic :func:`hit_and_run_sample` works from any
membership predicate (chords by doubling and bisection) and is what the small
verification checks use. The solver instead drives :class:`OuterChainSampler`
and :class:`PolarChainSampler`, which advance many chains in lockstep with
closed-form chords and keep their state between calls for warm starts.

Along every chord the conditional law is sampled exactly: uniform for the
uniform density and by inverse CDF for an exponential tilt.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (AffineSubspace, GeometryError, OuterBody, PolarBody,
                       affine_embed)

CHORD_TOL = 1e-9


class DegenerateChordError(RuntimeError):
    """Too many consecutive zero-length chords: the body is lower dimensional."""


class UnboundedChordError(GeometryError):
    """A chord is unbounded, e.g. the polar of a body about a boundary point."""


def sampler_threads() -> int:
    """Thread cap from ``DECOMPOPT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DECOMPOPT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Density:
    """Uniform (zero tilt) or exponential ``exp(tilt . x)`` density."""

    kind: str = "uniform"
    tilt: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "exponential"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "uniform" and self.tilt is not None and np.any(self.tilt):
            raise ValueError("uniform density must have zero tilt")
        if self.kind == "exponential" and self.tilt is None:
            raise ValueError("exponential density needs a tilt vector")

    @classmethod
    def exponential(cls, tilt):
        tilt = np.atleast_1d(np.asarray(tilt, dtype=float))
        if not np.any(tilt):
            return cls("uniform", None)
        return cls("exponential", tilt)

    def rate(self, direction: np.ndarray):
        if self.tilt is None:
            return 0.0 if direction.ndim == 1 else np.zeros(direction.shape[0])
        return direction @ self.tilt


@dataclass(frozen=True)
class ChainConfig:
    """Markov chain settings. ``None`` fields take dimension-based defaults."""

    burn_in: int | None = None
    n_samples: int = 4000
    thinning: int | None = None
    seed: int = 0
    chains: int = 4

    def resolved(self, dim: int) -> "ChainConfig":
        burn_in = 200 * dim if self.burn_in is None else self.burn_in
        thinning = dim if self.thinning is None else self.thinning
        cfg = replace(self, burn_in=burn_in, thinning=thinning)
        if cfg.chains < 1 or cfg.n_samples < 1 or cfg.thinning < 1 or cfg.burn_in < 0:
            raise ValueError(f"invalid chain configuration {cfg}")
        return cfg

    @property
    def per_chain(self) -> int:
        return -(-self.n_samples // self.chains)


@dataclass
class MomentEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    n: int
    stderr: np.ndarray


def estimate_moments(samples, chains: int = 1, min_batches: int = 20) -> MomentEstimate:
    """Sample mean and covariance with batch-means standard errors.

    ``samples`` are ordered chain by chain. Each chain is split into contiguous
    batches so that at least ``min_batches`` batches contribute.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two samples to estimate moments")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    chains = max(1, min(chains, n))
    per_chain = n // chains
    sub = max(1, min(per_chain, -(-min_batches // chains)))
    batch = per_chain // sub
    if batch >= 1 and chains * sub >= 2:
        usable = X[: chains * per_chain].reshape(chains, per_chain, -1)
        usable = usable[:, : sub * batch].reshape(chains * sub, batch, -1)
        means = usable.mean(axis=1)
        stderr = means.std(axis=0, ddof=1) / math.sqrt(means.shape[0])
    else:
        stderr = np.sqrt(np.diag(cov) / n)
    return MomentEstimate(mean, cov, n, stderr)


def weighted_moments(samples, log_weights, chains: int = 1,
                     min_batches: int = 20) -> tuple[MomentEstimate, float]:
    """Self-normalized importance-weighted moments and the effective sample size.

    Standard errors come from weighted batch means, batches laid out as in
    :func:`estimate_moments`.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    ess = 1.0 / float(np.sum(w * w))
    mean = w @ X
    D = X - mean
    cov = (D * w[:, None]).T @ D / max(1.0 - float(np.sum(w * w)), 1e-300)
    cov = 0.5 * (cov + cov.T)
    chains = max(1, min(chains, n))
    per_chain = n // chains
    sub = max(1, min(per_chain, -(-min_batches // chains)))
    batch = per_chain // sub
    nb = chains * sub
    if batch >= 1 and nb >= 2:
        idx = np.arange(chains * per_chain).reshape(chains, per_chain)[:, : sub * batch]
        idx = idx.reshape(nb, batch)
        wb = w[idx]
        tot = wb.sum(axis=1)
        ok = tot > 0
        means = np.einsum("bi,bij->bj", wb[ok], X[idx[ok]]) / tot[ok, None]
        # batch weights enter through the effective number of batches
        pb = tot[ok] / tot[ok].sum()
        spread = np.sqrt(pb @ (means - mean) ** 2)
        neff = 1.0 / float(np.sum(pb * pb))
        stderr = spread / math.sqrt(max(neff - 1.0, 1.0))
    else:
        stderr = np.sqrt(np.diag(cov) / ess)
    return MomentEstimate(mean, cov, int(round(ess)), stderr), ess


def random_directions(rng: np.random.Generator, shape) -> np.ndarray:
    U = rng.standard_normal(shape)
    U /= np.linalg.norm(U, axis=-1, keepdims=True)
    return U


def truncated_exponential(rate, lo, hi, u):
    """Inverse-CDF draw from density proportional to ``exp(rate * s)`` on ``[lo, hi]``."""
    rate = np.asarray(rate, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    length = hi - lo
    mu = np.abs(rate)
    small = mu * length < 1e-10
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        v = -np.log1p(u * np.expm1(-mu * length)) / mu
        tilted = np.where(rate > 0, hi - v, lo + v)
    out = np.where(small, lo + u * length, tilted)
    return np.clip(out, lo, hi)


def chord(membership, point, direction, tol: float = CHORD_TOL,
          max_doublings: int = 60) -> tuple[float, float]:
    """Chord of a convex body through ``point`` by doubling and bisection."""
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if not membership(point):
        raise GeometryError("chord start point is not a member")

    def extent(sign):
        inside, step = 0.0, 1.0
        for _ in range(max_doublings):
            if membership(point + sign * step * direction):
                inside = step
                step *= 2.0
            else:
                break
        else:
            raise UnboundedChordError("chord length exceeds the doubling cap")
        outside = step
        while outside - inside > tol:
            mid = 0.5 * (inside + outside)
            if membership(point + sign * mid * direction):
                inside = mid
            else:
                outside = mid
        return inside

    return -extent(-1.0), extent(1.0)


def _linear_limits(slack, rate, lo, hi):
    """Intersect ``[lo, hi]`` with ``{s : rate * s <= slack}`` (``slack >= 0``, rows)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = rate / np.maximum(slack, 1e-300)
        rmax = ratio.max(axis=-1)
        rmin = ratio.min(axis=-1)
        hi = np.minimum(hi, np.where(rmax > 0, 1.0 / rmax, np.inf))
        lo = np.maximum(lo, np.where(rmin < 0, 1.0 / rmin, -np.inf))
    return lo, hi


def _quadratic_limits(qa, qb, qc):
    """Roots of ``qa s^2 + qb s + qc`` with ``qc <= 0``: the interval where it is <= 0."""
    disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
    sq = np.sqrt(disc)
    q = -0.5 * (qb + np.where(qb >= 0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = q / qa
        r2 = qc / q
    r2 = np.where(np.isnan(r2), r1, r2)
    flat = qa <= 1e-300
    lo = np.where(flat, -np.inf, np.minimum(r1, r2))
    hi = np.where(flat, np.inf, np.maximum(r1, r2))
    lo = np.where(np.isnan(lo), -np.inf, np.minimum(lo, 0.0))
    hi = np.where(np.isnan(hi), np.inf, np.maximum(hi, 0.0))
    return lo, hi


def outer_chord(body: OuterBody, point, direction) -> tuple[float, float]:
    """Closed-form chord of an outer body (ball quadratic, cuts linear)."""
    x = np.asarray(point, dtype=float)
    w = np.asarray(direction, dtype=float)
    if not body.bounding_ball.contains(x, tol=1e-9):
        raise GeometryError("chord start point is not a member")
    xc = x - body.bounding_ball.center
    lo, hi = _quadratic_limits(np.array(w @ w), np.array(2.0 * xc @ w),
                               np.array(xc @ xc - body.bounding_ball.radius ** 2))
    G, h = body.cut_matrix()
    if G.shape[0]:
        lo, hi = _linear_limits(h - G @ x, G @ w, lo, hi)
    return float(lo), float(hi)


def polar_chord(body: PolarBody, point, direction) -> tuple[float, float]:
    """Closed-form chord of a polar body."""
    H, a, rb = body.constraint_data()
    lo, hi = _polar_limits(np.asarray(point, dtype=float)[None, None, :],
                           np.asarray(direction, dtype=float)[None, None, :],
                           H[None], a[None], np.array([rb]))
    return float(lo[0, 0]), float(hi[0, 0])


def _polar_limits(Y, U, H, a, rb):
    """Chord limits for batched polar bodies.

    Shapes: ``Y, U`` are ``(B, C, D)``, ``H`` is ``(B, P, D)``, ``a`` is
    ``(B, D)`` and ``rb`` is ``(B,)``.
    """
    B, C, _ = Y.shape
    lo = np.full((B, C), -np.inf)
    hi = np.full((B, C), np.inf)
    if H.shape[1]:
        HY = np.einsum("bcd,bpd->bcp", Y, H)
        HU = np.einsum("bcd,bpd->bcp", U, H)
        lo, hi = _linear_limits(1.0 - HY, HU, lo, hi)
    # second-order cone piece: a.(y+su) + rb ||y+su|| <= 1
    alpha = 1.0 - np.einsum("bcd,bd->bc", Y, a)
    beta = np.einsum("bcd,bd->bc", U, a)
    yu = np.einsum("bcd,bcd->bc", Y, U)
    yy = np.einsum("bcd,bcd->bc", Y, Y)
    r2 = (rb * rb)[:, None]
    soc_lo, soc_hi = _soc_limits(alpha, beta, yu, yy, r2, r2 - beta * beta)
    lo = np.maximum(lo, soc_lo)
    hi = np.minimum(hi, soc_hi)
    return np.minimum(lo, 0.0), np.maximum(hi, 0.0)


def _soc_limits(alpha, beta, yu, yy, r2, qa):
    """Step limits for ``rb ||y + s u|| <= alpha - s beta`` with ``||u|| = 1``.

    Squaring gives ``qa s^2 + qb s + qc <= 0``. When ``qa > 0`` (always the
    case for anchors inside the seed ball) the limits are the two roots;
    otherwise roots are kept only where the right-hand side stays
    nonnegative.
    """
    qb = 2.0 * (r2 * yu + alpha * beta)
    qc = np.minimum(r2 * yy - alpha * alpha, 0.0)
    disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
    sq = np.sqrt(disc)
    fast = qa > 1e-14 * r2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 0.5 / qa
        soc_lo = (-qb - sq) * inv
        soc_hi = (-qb + sq) * inv
    if fast.all():
        return soc_lo, soc_hi
    slow = ~fast
    a_, b_, qa_, qb_, qc_, sq_ = (alpha[slow], beta[slow], qa[slow], qb[slow],
                                  qc[slow], sq[slow])
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = np.abs(qa_) <= 1e-14 * np.broadcast_to(r2, qa.shape)[slow]
        r1 = np.where(lin, -qc_ / qb_, (-qb_ - sq_) / (2.0 * qa_))
        r2_ = np.where(lin, np.nan, (-qb_ + sq_) / (2.0 * qa_))
        # with no crossing the square constraint always holds; only the sign one binds
        r3 = np.where(b_ != 0, a_ / b_, np.nan)
    tol = -1e-12 * (1 + np.abs(a_))
    hi_ = np.full(a_.shape, np.inf)
    lo_ = np.full(a_.shape, -np.inf)
    for r in (r1, r2_):
        valid = np.isfinite(r) & (a_ - b_ * r >= tol)
        hi_ = np.where(valid & (r > 0), np.minimum(hi_, r), hi_)
        lo_ = np.where(valid & (r < 0), np.maximum(lo_, r), lo_)
    hi_ = np.where(np.isfinite(r3) & (r3 > 0), np.minimum(hi_, r3), hi_)
    lo_ = np.where(np.isfinite(r3) & (r3 < 0), np.maximum(lo_, r3), lo_)
    soc_lo = soc_lo.copy()
    soc_hi = soc_hi.copy()
    soc_lo[slow] = lo_
    soc_hi[slow] = hi_
    return soc_lo, soc_hi


def hit_and_run_sample(membership, density: Density, start, cfg: ChainConfig,
                       chord_fn=None, max_degenerate: int = 50) -> np.ndarray:
    """Run ``cfg.chains`` independent hit-and-run chains from ``start``.

    Returns an array of shape ``(chains * per_chain, dim)`` ordered chain by
    chain. ``chord_fn(point, direction)`` overrides the bisection chord.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    dim = start.shape[0]
    cfg = cfg.resolved(dim)
    if not membership(start):
        raise GeometryError("hit-and-run start point is not a member")
    if chord_fn is None:
        def chord_fn(p, u):
            return chord(membership, p, u)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    out = np.empty((cfg.chains, cfg.per_chain, dim))
    for ci, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        x = start.copy()
        degenerate = 0
        total = cfg.burn_in + cfg.per_chain * cfg.thinning
        k = 0
        for step in range(1, total + 1):
            u = random_directions(rng, dim)
            lo, hi = chord_fn(x, u)
            if hi - lo < 1e-12:
                degenerate += 1
                if degenerate > max_degenerate:
                    raise DegenerateChordError(
                        "repeated zero-length chords; body is not full dimensional")
            else:
                degenerate = 0
                span = 1e-12 * (hi - lo)
                s = truncated_exponential(density.rate(u), lo + span, hi - span,
                                          rng.random())
                x = x + float(s) * u
            if step > cfg.burn_in and (step - cfg.burn_in) % cfg.thinning == 0:
                out[ci, k] = x
                k += 1
    return out.reshape(-1, dim)


class OuterChainSampler:
    """Lockstep hit-and-run over ``prod_i K_out,i  intersect  {A x = b}``.

    Chains live in the reduced coordinates of ``sub``. Each block body
    contributes a ball (quadratic in the step) and its cuts (linear).
    """

    def __init__(self, bodies, blocks, sub: AffineSubspace, rng: np.random.Generator,
                 chains: int = 128):
        self.sub = sub
        self.blocks = list(blocks)
        self.rng = rng
        self.chains = chains
        self.N = sub.nullspace_basis
        self.xp = sub.particular_solution
        M = self.N.shape[0]
        self.block_matrix = np.zeros((M, len(self.blocks)))
        for i, sl in enumerate(self.blocks):
            self.block_matrix[sl, i] = 1.0
        self.Y = None
        self.set_bodies(bodies)

    def set_bodies(self, bodies):
        self.bodies = list(bodies)
        M = self.N.shape[0]
        centers = np.zeros(M)
        radii = np.zeros(len(self.bodies))
        rows, offs = [], []
        for i, (body, sl) in enumerate(zip(self.bodies, self.blocks)):
            centers[sl] = body.bounding_ball.center
            radii[i] = body.bounding_ball.radius
            G, h = body.cut_matrix()
            for g, o in zip(G, h):
                row = np.zeros(M)
                row[sl] = g
                rows.append(row)
                offs.append(o)
        self.centers = centers
        self.radii2 = radii ** 2
        G = np.array(rows) if rows else np.zeros((0, M))
        h = np.array(offs)
        self.Gr = G @ self.N
        self.g0 = h - G @ self.xp if rows else np.zeros(0)
        self.offset = self.xp - centers

    def member_mask(self, Y, tol: float = 1e-9) -> np.ndarray:
        Xc = self.offset + Y @ self.N.T
        ok = ((Xc * Xc) @ self.block_matrix <= self.radii2 * (1 + tol) + tol).all(axis=1)
        if self.Gr.shape[0]:
            ok &= (Y @ self.Gr.T <= self.g0 + tol).all(axis=1)
        return ok

    def start_from(self, points):
        """Reset chain states from reduced-coordinate points (cycled to fill)."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.arange(self.chains) % P.shape[0]
        self.Y = P[idx].copy()

    def restrict_to_members(self):
        """Replace chains that left the body (after a cut) by surviving chains."""
        ok = self.member_mask(self.Y)
        if not ok.any():
            raise GeometryError("no chain survives; body has no sampled interior")
        if not ok.all():
            good = np.flatnonzero(ok)
            bad = np.flatnonzero(~ok)
            self.Y[bad] = self.Y[self.rng.choice(good, size=bad.size)]
        return ok.mean()

    def run(self, tilt_full, burn_in: int, per_chain: int, thinning: int,
            chunk: int = 64, transform=None) -> np.ndarray:
        """Advance all chains; return samples of shape ``(chains, per_chain, k)``.

        ``transform`` (a ``k x k`` matrix ``T``) draws directions ``T g`` with
        ``g`` uniform on the sphere, which rounds an anisotropic target when
        ``T T^T`` tracks its covariance. Everything that depends only on the
        random directions is computed a chunk of steps at a time.
        """
        if self.Y is None:
            raise RuntimeError("sampler has no start state")
        k = self.N.shape[1]
        C = self.Y.shape[0]
        Y = self.Y.copy()
        Xc = self.offset + Y @ self.N.T
        J = self.Gr.shape[0]
        Gy = Y @ self.Gr.T if J else None
        tilt_red = self.N.T @ tilt_full if tilt_full is not None else None
        Bm = self.block_matrix
        out = np.empty((C, per_chain, k))
        total = burn_in + per_chain * thinning
        step, taken = 0, 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            while step < total:
                n = min(chunk, total - step)
                U = random_directions(self.rng, (n, C, k))
                if transform is not None:
                    U = U @ transform.T
                uni = self.rng.random((n, C))
                W = U @ self.N.T
                inv2qa = 0.5 / np.maximum((W * W) @ Bm, 1e-300)
                rate = U @ tilt_red if tilt_red is not None else None
                GU = U @ self.Gr.T if J else None
                for j in range(n):
                    w = W[j]
                    qb = 2.0 * ((Xc * w) @ Bm)
                    qc = np.minimum((Xc * Xc) @ Bm - self.radii2, 0.0)
                    sq = np.sqrt(qb * qb - 4.0 * qc / (2.0 * inv2qa[j]))
                    lo = ((-qb - sq) * inv2qa[j]).max(axis=1)
                    hi = ((-qb + sq) * inv2qa[j]).min(axis=1)
                    if J:
                        gu = GU[j]
                        bound = np.maximum(self.g0 - Gy, 0.0) / gu
                        hi = np.minimum(hi, np.where(gu > 0, bound, np.inf).min(axis=1))
                        lo = np.maximum(lo, np.where(gu < 0, bound, -np.inf).max(axis=1))
                    lo = np.minimum(lo, 0.0)
                    hi = np.maximum(hi, 0.0)
                    if rate is None:
                        t = lo + uni[j] * (hi - lo)
                    else:
                        t = truncated_exponential(rate[j], lo, hi, uni[j])
                    Y += t[:, None] * U[j]
                    Xc += t[:, None] * w
                    if J:
                        Gy += t[:, None] * gu
                    step += 1
                    if step > burn_in and (step - burn_in) % thinning == 0:
                        out[:, taken] = Y
                        taken += 1
        if not np.isfinite(Y).all():
            raise UnboundedChordError("outer body chord is unbounded")
        self.Y = Y
        return out

    def embed(self, Y) -> np.ndarray:
        return affine_embed(self.sub, Y)


class PolarChainSampler:
    """Lockstep uniform hit-and-run over several polar bodies at once.

    Bodies of different dimension are padded; padded coordinates are frozen
    at zero by masking the directions.
    """

    def __init__(self, rng: np.random.Generator, chains: int = 128):
        self.rng = rng
        self.chains = chains

    def run(self, bodies, starts, burn_in: int, per_chain: int, thinning: int,
            chunk: int = 64):
        """Sample each polar body; ``starts[b]`` is ``(chains, d_b)`` or ``None``.

        Returns ``(samples, final_states)`` where ``samples[b]`` has shape
        ``(chains, per_chain, d_b)``.
        """
        B = len(bodies)
        dims = [p.dim for p in bodies]
        D = max(dims)
        data = [p.constraint_data() for p in bodies]
        P = max(d[0].shape[0] for d in data)
        H = np.zeros((B, P, D))
        a = np.zeros((B, D))
        rb = np.zeros(B)
        mask = np.zeros((B, D))
        Y = np.zeros((B, self.chains, D))
        for b, ((Hb, ab, rbb), d) in enumerate(zip(data, dims)):
            H[b, : Hb.shape[0], :d] = Hb
            a[b, :d] = ab
            rb[b] = rbb
            mask[b, :d] = 1.0
            if starts is not None and starts[b] is not None:
                Y[b, :, :d] = starts[b]
        C = self.chains
        out = np.empty((B, C, per_chain, D))
        total = burn_in + per_chain * thinning
        r2 = (rb * rb)[:, None]
        HY = np.einsum("bcd,bpd->bcp", Y, H)
        alpha = 1.0 - np.einsum("bcd,bd->bc", Y, a)
        yy = np.einsum("bcd,bcd->bc", Y, Y)
        step, taken = 0, 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            while step < total:
                n = min(chunk, total - step)
                U = self.rng.standard_normal((n, B, C, D)) * mask[None, :, None, :]
                U /= np.linalg.norm(U, axis=-1, keepdims=True)
                uni = self.rng.random((n, B, C))
                HU = np.einsum("nbcd,bpd->nbcp", U, H)
                beta = np.einsum("nbcd,bd->nbc", U, a)
                qa = r2 - beta * beta
                for j in range(n):
                    u = U[j]
                    yu = np.einsum("bcd,bcd->bc", Y, u)
                    lo, hi = _linear_limits(1.0 - HY, HU[j], -np.inf, np.inf) if P else (
                        np.full((B, C), -np.inf), np.full((B, C), np.inf))
                    slo, shi = _soc_limits(alpha, beta[j], yu, yy, r2, qa[j])
                    lo = np.minimum(np.maximum(lo, slo), 0.0)
                    hi = np.maximum(np.minimum(hi, shi), 0.0)
                    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
                        raise UnboundedChordError(
                            "polar chord is unbounded; the anchor is not strictly interior")
                    t = lo + uni[j] * (hi - lo)
                    Y += t[..., None] * u
                    HY += t[..., None] * HU[j]
                    alpha -= t * beta[j]
                    yy += 2.0 * t * yu + t * t
                    step += 1
                    if step > burn_in and (step - burn_in) % thinning == 0:
                        out[:, :, taken] = Y
                        taken += 1
        samples = [out[b, :, :, :d] for b, d in enumerate(dims)]
        finals = [Y[b, :, :d].copy() for b, d in enumerate(dims)]
        return samples, finals


def rounding_transform(samples, floor: float = 1e-12) -> np.ndarray | None:
    """Cholesky factor of the sample covariance, scaled to unit mean variance."""
    Y = np.asarray(samples, dtype=float)
    if Y.ndim != 2 or Y.shape[0] <= Y.shape[1]:
        return None
    cov = np.cov(Y, rowvar=False).reshape(Y.shape[1], Y.shape[1])
    scale = np.trace(cov) / cov.shape[0]
    if not np.isfinite(scale) or scale <= 0:
        return None
    cov = cov / scale + floor * np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None


def polar_member_mask(body: PolarBody, Y, tol: float = 1e-9) -> np.ndarray:
    """Vectorized polar membership for the rows of ``Y``."""
    H, a, rb = body.constraint_data()
    Y = np.atleast_2d(Y)
    ok = Y @ a + rb * np.linalg.norm(Y, axis=1) <= 1.0 + tol
    if H.shape[0]:
        ok &= (Y @ H.T <= 1.0 + tol).all(axis=1)
    return ok


def move_polar_states(Y, old_anchor, new_anchor) -> np.ndarray:
    """Map polar points about ``old_anchor`` to the polar about ``new_anchor``.

    ``y -> y / (1 + y.(old - new))`` is a bijection between the two polars
    (rows with a nonpositive denominator come back as NaN).
    """
    den = 1.0 + Y @ (np.asarray(old_anchor) - np.asarray(new_anchor))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Y / den[:, None]
    out[den <= 1e-12] = np.nan
    return out
