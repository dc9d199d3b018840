"""Sampled barrier calculus.

The universal barrier of a body K at x has gradient ``(d+1) mu`` and Hessian
``(d+1)(d+2) Sigma + (d+1) mu mu^T`` where ``mu`` and ``Sigma`` are the
centroid and covariance of the polar body ``(K - x)°``. The entropic barrier
is only ever needed through its path minimizer, the mean of the density
``exp(-t c.x)`` over the outer body. Barrier values are never computed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (AffineSubspace, GeometryError, InnerBody,
                       NonConvergenceError, PolarBody, affine_embed,
                       affine_project, outer_membership, polar_membership,
                       strictly_interior)
from .sampling import (ChainConfig, Density, MomentEstimate, OuterChainSampler,
                       estimate_moments, hit_and_run_sample, polar_chord)

HESSIAN_REG = 1e-10


@dataclass
class LocalMetric:
    grad: np.ndarray
    hessian: np.ndarray
    block_dim: int
    grad_stderr: np.ndarray
    moments: MomentEstimate | None = None

    def norm(self, v) -> float:
        return local_norm(self, v)


def metric_from_moments(mom: MomentEstimate) -> LocalMetric:
    d = mom.mean.shape[0]
    mu = mom.mean
    H = (d + 1) * (d + 2) * mom.covariance + (d + 1) * np.outer(mu, mu)
    H = 0.5 * (H + H.T)
    return LocalMetric((d + 1) * mu, H, d, (d + 1) * mom.stderr, mom)


def local_norm(metric: LocalMetric, v) -> float:
    v = np.asarray(v, dtype=float)
    if v.shape != (metric.block_dim,):
        raise ValueError("vector dimension does not match the metric")
    q = v @ metric.hessian @ v + HESSIAN_REG * (v @ v)
    return float(np.sqrt(max(q, 0.0)))


def universal_metric(body: InnerBody, x, cfg: ChainConfig | None = None,
                     margin: float = 1e-6) -> LocalMetric:
    """Gradient and Hessian of the universal barrier of ``body`` at ``x``."""
    x = np.asarray(x, dtype=float)
    if not strictly_interior(body, x, margin=margin):
        raise GeometryError("point is not strictly interior; the polar is unbounded")
    polar = PolarBody(body, x)
    cfg = (cfg or ChainConfig()).resolved(body.dim)
    samples = hit_and_run_sample(lambda y: polar_membership(polar, y), Density(),
                                 np.zeros(body.dim), cfg,
                                 chord_fn=lambda p, u: polar_chord(polar, p, u))
    return metric_from_moments(estimate_moments(samples, cfg.chains))


def _interior_start(bodies, blocks, sub: AffineSubspace, start):
    candidates = []
    if start is not None:
        candidates.append(np.asarray(start, dtype=float))
    centers = np.concatenate([b.bounding_ball.center for b in bodies])
    candidates.append(affine_embed(sub, affine_project(sub, centers)))
    candidates.append(sub.particular_solution)
    for x in candidates:
        if all(outer_membership(b, x[sl]) for b, sl in zip(bodies, blocks)):
            return x
    raise NonConvergenceError("no interior start for the outer body; re-initialize")


def outer_center(bodies, sub: AffineSubspace, t: float, c, cfg: ChainConfig | None = None,
                 blocks=None, start=None) -> tuple[np.ndarray, MomentEstimate]:
    """Mean of ``exp(-t c.x)`` over the product of outer bodies on ``sub``.

    ``blocks`` are the coordinate slices of each body (consecutive by default).
    Returns the estimate in full coordinates and its moments.
    """
    c = np.asarray(c, dtype=float)
    if blocks is None:
        blocks, pos = [], 0
        for b in bodies:
            blocks.append(slice(pos, pos + b.dim))
            pos += b.dim
    k = sub.dim
    cfg = (cfg or ChainConfig()).resolved(max(k, 1))
    x0 = _interior_start(bodies, blocks, sub, start)
    if k == 0:
        mom = MomentEstimate(x0.copy(), np.zeros((x0.size, x0.size)), 1, np.zeros(x0.size))
        return x0, mom
    sampler = OuterChainSampler(bodies, blocks, sub, np.random.default_rng(cfg.seed),
                                chains=cfg.chains)
    sampler.start_from(affine_project(sub, x0)[None, :])
    Y = sampler.run(-t * c, cfg.burn_in, cfg.per_chain, cfg.thinning)
    X = sampler.embed(Y.reshape(-1, k))
    mom = estimate_moments(X, cfg.chains)
    return mom.mean, mom
