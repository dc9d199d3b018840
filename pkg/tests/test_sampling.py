import numpy as np
import pytest

from decompopt.geometry import (AffineSubspace, Ball, Halfspace, InnerBody, OuterBody,
                                PolarBody, outer_membership, polar_membership)
from decompopt.oracles import Box, known_body_oracle
from decompopt.sampling import (ChainConfig, Density, chord, estimate_moments,
                                hit_and_run_sample, outer_chord, polar_chord,
                                truncated_exponential, weighted_moments)

EXP_MEAN = (1 - 2 / np.e) / (1 - 1 / np.e)


def _cube(d):
    eye = np.eye(d)
    cuts = tuple(Halfspace(eye[i], 1.0) for i in range(d)) + \
        tuple(Halfspace(-eye[i], 0.0) for i in range(d))
    return OuterBody(Ball(np.full(d, 0.5), 0.5 * np.sqrt(d) + 1e-9), cuts)


def test_exponential_mean_constant():
    from scipy.integrate import quad
    num = quad(lambda x: x * np.exp(-x), 0, 1)[0]
    den = quad(lambda x: np.exp(-x), 0, 1)[0]
    assert num / den == pytest.approx(EXP_MEAN, abs=1e-12)
    assert EXP_MEAN == pytest.approx(0.41802, abs=1e-5)


def test_chord_examples():
    cube = _cube(2)
    lo, hi = outer_chord(cube, np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert (lo, hi) == pytest.approx((-0.5, 0.5), abs=1e-9)
    ball = OuterBody(Ball(np.zeros(2), 1.0))
    u = np.array([0.6, 0.8])
    assert outer_chord(ball, np.zeros(2), u) == pytest.approx((-1.0, 1.0), abs=1e-9)
    half = OuterBody(Ball(np.zeros(2), 1.0), (Halfspace(np.array([1.0, 0.0]), 0.0),))
    p, e1 = np.array([-0.5, 0.0]), np.array([1.0, 0.0])
    assert outer_chord(half, p, e1) == pytest.approx((-0.5, 0.5), abs=1e-9)
    # direction off the axis meets the circle first
    lo, hi = outer_chord(half, p, u)
    assert outer_membership(half, p + lo * u) and outer_membership(half, p + hi * u)
    bis = chord(lambda q: outer_membership(half, q), p, u)
    assert (lo, hi) == pytest.approx(bis, abs=1e-8)


def test_polar_chord_matches_bisection():
    rng = np.random.default_rng(3)
    body = InnerBody(Ball(np.zeros(2), 0.5), (np.array([1.5, 0.2]), np.array([-0.4, 1.2])))
    polar = PolarBody(body, np.array([0.2, 0.1]))
    for _ in range(50):
        u = rng.normal(size=2)
        u /= np.linalg.norm(u)
        fast = polar_chord(polar, np.zeros(2), u)
        slow = chord(lambda y: polar_membership(polar, y), np.zeros(2), u)
        assert fast == pytest.approx(slow, abs=1e-7)


def test_truncated_exponential_inverse_cdf():
    u = np.linspace(0.01, 0.99, 50)
    s = truncated_exponential(np.full(50, -1.0), 0.0, 1.0, u)
    cdf = (1 - np.exp(-s)) / (1 - np.exp(-1))
    assert np.allclose(cdf, u)
    assert np.allclose(truncated_exponential(np.zeros(3), -1.0, 1.0, np.array([0, .5, 1])),
                       [-1, 0, 1])


def _run(body, density, start, n=20000, seed=0):
    cfg = ChainConfig(n_samples=n, seed=seed, chains=4)
    X = hit_and_run_sample(lambda q: outer_membership(body, q), density, start, cfg,
                           chord_fn=lambda p, u: outer_chord(body, p, u))
    return X, estimate_moments(X, cfg.chains)


def test_uniform_square_mean():
    X, mom = _run(_cube(2), Density(), np.full(2, 0.5))
    assert np.all(np.abs(mom.mean - 0.5) <= 4 * mom.stderr)
    assert mom.covariance[0, 0] == pytest.approx(1 / 12, abs=0.01)


def test_exponential_interval_mean():
    X, mom = _run(_cube(1), Density.exponential([-1.0]), np.array([0.5]))
    assert abs(mom.mean[0] - EXP_MEAN) <= 4 * mom.stderr[0]
    assert np.all((X >= 0) & (X <= 1))


def test_uniform_ball_radial_moment():
    ball = OuterBody(Ball(np.zeros(3), 1.0))
    X, mom = _run(ball, Density(), np.zeros(3))
    assert np.all(np.abs(mom.mean) <= 4 * mom.stderr)
    r2 = np.sum(X ** 2, axis=1)
    r2mom = estimate_moments(r2[:, None], 4)
    assert abs(r2mom.mean[0] - 0.6) <= 4 * r2mom.stderr[0]


def test_moments_of_constant_samples():
    mom = estimate_moments(np.ones((100, 2)))
    assert np.allclose(mom.covariance, 0)


def test_polar_interval_moments():
    # uniform on [-2, 2/3]
    body = OuterBody(Ball(np.array([-2 / 3]), 4 / 3))
    X, mom = _run(body, Density(), np.array([-0.5]))
    assert abs(mom.mean[0] + 2 / 3) <= 4 * mom.stderr[0]
    assert mom.covariance[0, 0] == pytest.approx(16 / 27, rel=0.05)


def test_weighted_moments_identity_weights():
    X = np.random.default_rng(0).normal(size=(400, 2))
    plain = estimate_moments(X, 4)
    weighted, ess = weighted_moments(X, np.zeros(400), 4, 20)
    assert np.allclose(plain.mean, weighted.mean)
    assert ess == pytest.approx(400)


def test_seeded_determinism():
    a, _ = _run(_cube(2), Density(), np.full(2, 0.5), n=400, seed=5)
    b, _ = _run(_cube(2), Density(), np.full(2, 0.5), n=400, seed=5)
    assert np.array_equal(a, b)


def test_affine_restricted_samples_stay_on_subspace():
    from decompopt.barriers import outer_center
    cubes = [_cube(1), _cube(1)]
    sub = AffineSubspace.from_constraints(np.array([[1.0, -1.0]]), np.zeros(1))
    x, mom = outer_center(cubes, sub, 1.0, np.array([1.0, 0.0]),
                          ChainConfig(n_samples=4000, seed=1))
    assert sub.residual(x) <= 1e-9
    assert abs(x[0] - EXP_MEAN) <= 4 * mom.stderr[0] + 1e-3


def test_known_body_box_oracle():
    box = known_body_oracle(Box(np.zeros(2), np.ones(2)))
    res = box(np.array([0.5, 2.0]))
    assert not res.member
    assert np.allclose(res.halfspace.normal, [0, 1]) and res.halfspace.offset == 1.0
