import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decompopt.oracles import OracleCounter
from decompopt.problems import random_sfm
from decompopt.sfm import (SubmodularInstance, Term, brute_force_min, check_submodular,
                           lovasz_subgradient, lovasz_value, lovasz_value_and_subgradient,
                           minimize_decomposable, round_to_set)

EDGE = Term((0, 1), "cut", [[0, 1, 1.0]])


def masks(k):
    for bits in itertools.product([False, True], repeat=k):
        yield np.array(bits)


def test_lovasz_examples():
    assert lovasz_value(EDGE, np.array([0.5, 0.25])) == pytest.approx(0.25)
    assert np.allclose(lovasz_subgradient(EDGE, np.array([0.5, 0.25])), [1, -1])
    assert lovasz_value(EDGE, np.zeros(2)) == 0.0
    mod = Term((0, 1, 2), "modular", [-0.3, 0.2, -0.1])
    rng = np.random.default_rng(0)
    for x in rng.random((10, 3)):
        assert np.allclose(lovasz_subgradient(mod, x), [-0.3, 0.2, -0.1])


def test_indicator_exactness_and_counts():
    inst = random_sfm(8, seed=11, terms=1, sizes=(8, 8))
    term = inst.terms[0]
    for m in masks(8):
        assert lovasz_value(term, m.astype(float)) == pytest.approx(term(m), abs=1e-12)
    counter = OracleCounter()
    term.counter = counter
    lovasz_value_and_subgradient(term, np.random.default_rng(0).random(8))
    assert counter.evaluation_calls == 8
    term.counter = None


def test_subgradient_validity_with_ties():
    inst = random_sfm(4, seed=3, terms=1, sizes=(4, 4))
    F = inst.terms[0]
    rng = np.random.default_rng(1)
    x = np.full(4, 0.5)
    for perm in (np.arange(4), np.arange(4)[::-1]):
        # any tie order gives a valid subgradient
        mask = np.zeros(4, dtype=bool)
        g, prev = np.empty(4), 0.0
        for j in perm:
            mask[j] = True
            cur = F(mask)
            g[j], prev = cur - prev, cur
        fx = lovasz_value(F, x)
        for y in rng.random((100, 4)):
            assert lovasz_value(F, y) >= fx + g @ (y - x) - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_instances_are_submodular(seed):
    inst = random_sfm(4, seed)
    assert check_submodular(inst, 4, seed=seed)
    vals = [inst(m) for m in masks(4)]
    assert max(abs(v) for v in vals) <= 1 + 1e-12


def test_rounding():
    x = np.array([0.5, 0.25])
    S, val = round_to_set(EDGE, x)
    assert val == 0.0 and val <= lovasz_value(EDGE, x)
    inst = random_sfm(4, seed=5)
    S_star, best = brute_force_min(inst, 4)
    ind = np.zeros(4)
    ind[list(S_star)] = 1.0
    assert round_to_set(inst, ind)[1] == pytest.approx(best)
    pos = Term((0, 1), "modular", [0.3, 0.2])
    assert round_to_set(pos, np.array([0.9, 0.1])) == ((), 0.0)


def test_brute_force_examples():
    mod = SubmodularInstance(3, [Term((0, 1, 2), "modular", [-0.3, 0.2, -0.1])])
    S, v = brute_force_min(mod, 3)
    assert S == (0, 2) and v == pytest.approx(-0.4)
    zero = SubmodularInstance(3, [Term((0, 1, 2), "modular", [0.0, 0.0, 0.0])])
    assert brute_force_min(zero, 3) == ((), 0.0)
    tri = SubmodularInstance(3, [Term((0, 1, 2), "cut", [[0, 1, 1], [1, 2, 1], [0, 2, 1]])])
    S, v = brute_force_min(tri, 3)
    assert v == 0.0 and S in ((), (0, 1, 2))


def test_instance_json_roundtrip():
    inst = random_sfm(4, seed=7)
    again = SubmodularInstance.from_json(json.loads(json.dumps(inst.to_json())))
    for m in masks(4):
        assert again(m) == inst(m)


def test_term_validation():
    with pytest.raises(ValueError):
        Term((0, 1), "table", [1.0, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        Term((0, 1), "cut", [[0, 5, 1.0]])
    with pytest.raises(ValueError):
        Term((0, 0), "modular", [1.0, 1.0])
    with pytest.raises(ValueError):
        minimize_decomposable(random_sfm(2, 0), epsilon=0.7)


def test_single_cut_minimization():
    inst = SubmodularInstance(2, [EDGE])
    res = minimize_decomposable(inst, 0.05, seed=0)
    assert res.value == 0.0 and res.set in ((), (0, 1))


def test_overlapping_pair():
    inst = random_sfm(3, seed=2, terms=2, sizes=(2, 2))
    res = minimize_decomposable(inst, 0.02, seed=0)
    assert res.value <= brute_force_min(inst, 3)[1] + 0.02
    assert res.counter.evaluation_calls > 0
