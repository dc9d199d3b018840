"""Convex bodies used by the solver.

Three representations are needed:

* :class:`OuterBody` -- a bounding ball intersected with halfspaces (H-form),
  the shrinking over-approximation of a block set.
* :class:`InnerBody` -- the convex hull of a seed ball and a list of points
  (V-form), the growing under-approximation of a block set.
* :class:`PolarBody` -- the polar of an inner body about an interior anchor,
  which has a closed-form membership test.

All bodies are immutable; ``cut_outer`` and ``grow_inner`` return new values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

MEMBERSHIP_TOL = 1e-12
DUPLICATE_TOL = 1e-10
RANK_TOL = 1e-10


class GeometryError(ValueError):
    """Raised on malformed geometric input or a broken oracle contract."""


class NonConvergenceError(RuntimeError):
    """The nearest-point iteration hit its cap without resolving the query."""


def _as_vector(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float))


@dataclass(frozen=True, eq=False)
class Halfspace:
    """The set ``{y : normal . y <= offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = _as_vector(self.normal)
        norm = np.linalg.norm(normal)
        if not np.isfinite(norm) or norm == 0.0:
            raise GeometryError("halfspace normal must be nonzero and finite")
        object.__setattr__(self, "normal", normal / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def violation(self, point) -> float:
        return float(self.normal @ _as_vector(point) - self.offset)

    def contains(self, point, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.violation(point) <= tol

    def same_as(self, other: "Halfspace") -> bool:
        return (float(self.normal @ other.normal) > 1.0 - DUPLICATE_TOL
                and abs(self.offset - other.offset) <= DUPLICATE_TOL)


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vector(self.center))
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, point, tol: float = MEMBERSHIP_TOL) -> bool:
        return float(np.linalg.norm(_as_vector(point) - self.center)) <= self.radius + tol


def _check_dim(body_dim: int, point: np.ndarray):
    if point.shape != (body_dim,):
        raise GeometryError(f"dimension mismatch: body has dim {body_dim}, "
                            f"point has shape {point.shape}")


@dataclass(frozen=True, eq=False)
class OuterBody:
    bounding_ball: Ball
    cuts: tuple = ()

    @property
    def dim(self) -> int:
        return self.bounding_ball.dim

    def cut_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked cut normals and offsets, shapes ``(J, d)`` and ``(J,)``."""
        if not self.cuts:
            return np.zeros((0, self.dim)), np.zeros(0)
        return (np.array([h.normal for h in self.cuts]),
                np.array([h.offset for h in self.cuts]))

    def __contains__(self, point) -> bool:
        return outer_membership(self, point)


def outer_membership(body: OuterBody, point) -> bool:
    point = _as_vector(point)
    _check_dim(body.dim, point)
    if not body.bounding_ball.contains(point):
        return False
    return all(h.contains(point) for h in body.cuts)


def cut_outer(body: OuterBody, h: Halfspace, witness=None) -> OuterBody:
    """Intersect ``body`` with ``h``.

    ``witness`` is a known member of the true block set; it must lie in ``h``
    or the separation oracle that produced ``h`` is broken.
    """
    if h.dim != body.dim:
        raise GeometryError("halfspace dimension does not match body")
    if witness is not None and not h.contains(_as_vector(witness), tol=1e-9):
        raise GeometryError(
            f"witness violates the new cut by {h.violation(witness):.3e}; "
            "the separation oracle returned an invalid halfspace")
    if any(h.same_as(old) for old in body.cuts):
        return body
    return OuterBody(body.bounding_ball, body.cuts + (h,))


@dataclass(frozen=True, eq=False)
class InnerBody:
    """``conv(seed_ball U hull_points)``."""

    seed_ball: Ball
    hull_points: tuple = ()

    @property
    def dim(self) -> int:
        return self.seed_ball.dim

    def points_array(self) -> np.ndarray:
        if not self.hull_points:
            return np.zeros((0, self.dim))
        return np.array(self.hull_points)

    def __contains__(self, point) -> bool:
        return inner_membership(self, point)


def grow_inner(body: InnerBody, point) -> InnerBody:
    point = _as_vector(point)
    _check_dim(body.dim, point)
    return InnerBody(body.seed_ball, body.hull_points + (point.copy(),))


@dataclass
class NearestPointResult:
    point: np.ndarray
    distance: float
    lower_bound: float
    iterations: int
    weights: np.ndarray = field(repr=False)
    atoms: np.ndarray = field(repr=False)


def _ball_support(center, radius, direction):
    """Minimizer of ``direction . y`` over the ball."""
    n = np.linalg.norm(direction)
    if n == 0.0:
        return center.copy()
    return center - radius * direction / n


def _affine_minimizer(S: np.ndarray) -> np.ndarray:
    """Barycentric weights of the min-norm point in the affine hull of rows of S."""
    k = S.shape[0]
    if k == 1:
        return np.ones(1)
    G = S @ S.T
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = G
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:k]


def nearest_point(body: InnerBody, query, tol: float = 1e-9,
                  gap_tol: float = 1e-9, max_iter: int | None = None,
                  stop_radius: float | None = None,
                  raise_on_limit: bool = True) -> NearestPointResult:
    """Wolfe's minimum-norm-point iteration for ``body - query``.

    The generators are the hull points plus support points of the seed ball,
    produced on demand by the linear minimization oracle. Stops when the
    Frank-Wolfe gap drops below ``gap_tol``. If ``stop_radius`` is given, also
    stops as soon as the distance is certified to be on one side of it.
    With ``raise_on_limit=False`` the last iterate is returned at ``max_iter``.
    """
    q = _as_vector(query)
    _check_dim(body.dim, q)
    P = body.points_array() - q
    zc = body.seed_ball.center - q
    rb = body.seed_ball.radius
    if max_iter is None:
        max_iter = 10 * (body.dim + len(body.hull_points)) ** 2 + 10

    def lmo(x):
        best = _ball_support(zc, rb, x)
        best_val = float(x @ best)
        if P.shape[0]:
            vals = P @ x
            j = int(np.argmin(vals))
            if vals[j] < best_val:
                return P[j].copy(), float(vals[j])
        return best, best_val

    # start from the seed-ball point nearest the query
    start = _ball_support(zc, rb, zc) if np.linalg.norm(zc) > rb else np.zeros_like(zc)
    if not np.any(start):
        # query inside the seed ball
        return NearestPointResult(q.copy(), 0.0, 0.0, 0, np.ones(1), q[None, :].copy())
    atoms = [start]
    lam = np.ones(1)
    x = start.copy()
    lower = 0.0
    for it in range(1, max_iter + 1):
        xn2 = float(x @ x)
        xn = np.sqrt(xn2)
        v, xv = lmo(x)
        gap = xn2 - xv
        if xn > 0:
            lower = max(lower, xv / xn)
        if xn <= tol or gap <= gap_tol:
            return NearestPointResult(x + q, xn, max(lower, 0.0), it, lam, np.array(atoms) + q)
        if stop_radius is not None and (xn <= stop_radius or lower > stop_radius):
            return NearestPointResult(x + q, xn, max(lower, 0.0), it, lam, np.array(atoms) + q)
        if any(np.array_equal(v, a) for a in atoms):
            # no new generator improves; x is optimal up to round-off
            return NearestPointResult(x + q, xn, max(lower, 0.0), it, lam, np.array(atoms) + q)
        atoms.append(v)
        lam = np.append(lam, 0.0)
        # minor cycles
        while True:
            S = np.array(atoms)
            alpha = _affine_minimizer(S)
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            mask = alpha <= 1e-14
            denom = lam[mask] - alpha[mask]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(denom > 0, lam[mask] / denom, np.inf)
            theta = float(min(1.0, np.min(ratios)))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-14
            if keep.all():
                keep[np.argmin(lam)] = False
            atoms = [a for a, k in zip(atoms, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
            if len(atoms) == 1:
                break
        x = lam @ np.array(atoms)
    if not raise_on_limit:
        return NearestPointResult(x + q, float(np.linalg.norm(x)), max(lower, 0.0),
                                  max_iter, lam, np.array(atoms) + q)
    raise NonConvergenceError(
        f"nearest-point iteration did not converge in {max_iter} iterations")


def inner_distance(body: InnerBody, point, gap_tol: float = 1e-9) -> float:
    return nearest_point(body, point, gap_tol=gap_tol).distance


def inner_membership(body: InnerBody, point, tol: float = 1e-9) -> bool:
    if not tol > 0:
        raise GeometryError("tol must be positive")
    point = _as_vector(point)
    _check_dim(body.dim, point)
    if body.seed_ball.contains(point, tol):
        return True
    P = body.points_array()
    if P.shape[0] and np.min(np.linalg.norm(P - point, axis=1)) <= tol:
        return True
    # undecided after the iteration cap means the point hugs the boundary: say no
    res = nearest_point(body, point, tol=tol, gap_tol=0.0, stop_radius=tol,
                        raise_on_limit=False)
    return res.distance <= tol


def strictly_interior(body: InnerBody, point, margin: float = 1e-6) -> bool:
    """Probe the axis-aligned points at distance ``margin`` around ``point``."""
    point = _as_vector(point)
    if not inner_membership(body, point):
        return False
    for k in range(body.dim):
        for sign in (1.0, -1.0):
            probe = point.copy()
            probe[k] += sign * margin
            if not inner_membership(body, probe, tol=1e-12):
                return False
    return True


@dataclass(frozen=True, eq=False)
class PolarBody:
    """``(K - anchor)^o`` for ``K = conv(seed ball U hull points)``."""

    base: InnerBody
    anchor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "anchor", _as_vector(self.anchor))

    @property
    def dim(self) -> int:
        return self.base.dim

    def constraint_data(self):
        """``(H, a, rb)``: rows of hull offsets, seed-center offset, seed radius.

        Membership is ``H y <= 1`` and ``a . y + rb ||y|| <= 1``.
        """
        H = self.base.points_array() - self.anchor
        a = self.base.seed_ball.center - self.anchor
        return H, a, self.base.seed_ball.radius

    def __contains__(self, y) -> bool:
        return polar_membership(self, y)


def polar_membership(body: PolarBody, y) -> bool:
    y = _as_vector(y)
    _check_dim(body.dim, y)
    H, a, rb = body.constraint_data()
    if H.shape[0] and np.max(H @ y) > 1.0 + MEMBERSHIP_TOL:
        return False
    return float(a @ y + rb * np.linalg.norm(y)) <= 1.0 + MEMBERSHIP_TOL


@dataclass(frozen=True, eq=False)
class AffineSubspace:
    """``{x : A x = b}`` parametrized as ``x_p + N y``."""

    constraint_matrix: np.ndarray
    rhs: np.ndarray
    particular_solution: np.ndarray
    nullspace_basis: np.ndarray

    @classmethod
    def from_constraints(cls, A, b, anchor=None, rank_tol: float = RANK_TOL):
        """Build the parametrization; ``embed(0)`` is the projection of ``anchor``.

        Raises :class:`GeometryError` if ``A x = b`` is inconsistent.
        """
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        dim = A.shape[1]
        if A.shape[0] == 0:
            A = np.zeros((0, dim))
            b = np.zeros(0)
        anchor = np.zeros(dim) if anchor is None else _as_vector(anchor)
        if A.shape[0] == 0:
            return cls(A, b, anchor.copy(), np.eye(dim))
        U, s, Vt = scipy.linalg.svd(A, full_matrices=True)
        rank = int(np.sum(s > rank_tol * max(1.0, s[0])))
        N = Vt[rank:].T.copy()
        # minimum-norm correction of the anchor
        resid = b - A @ anchor
        coef = (U[:, :rank].T @ resid) / s[:rank]
        xp = anchor + Vt[:rank].T @ coef
        if np.linalg.norm(A @ xp - b) > 1e-9 * max(1.0, np.linalg.norm(b)):
            raise GeometryError("linear system A x = b is inconsistent")
        return cls(A, b, xp, N)

    @property
    def dim(self) -> int:
        return self.nullspace_basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.nullspace_basis.shape[0]

    def residual(self, x) -> float:
        if self.constraint_matrix.shape[0] == 0:
            return 0.0
        return float(np.linalg.norm(self.constraint_matrix @ x - self.rhs))


def affine_embed(sub: AffineSubspace, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return sub.particular_solution + y @ sub.nullspace_basis.T


def affine_project(sub: AffineSubspace, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x - sub.particular_solution) @ sub.nullspace_basis
