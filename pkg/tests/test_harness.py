import json

import numpy as np
import pytest

from decompopt import cli, harness
from decompopt.oracles import OracleCounter
from decompopt.problems import ProblemSpec, chain_quadratic, generate, piecewise_linear


def test_problem_spec_roundtrip():
    spec = ProblemSpec("chain_quadratic", {"n": 3}, 4, 0.05)
    assert ProblemSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ValueError):
        ProblemSpec("nonsense")


def test_chain_structure():
    p = chain_quadratic(3)
    assert p.supports == [(0,), (0, 1), (1, 2), (2,)]
    theta = np.array([0.3, -0.2, 0.9])
    expected = (0.3 - 1) ** 2 + 0.5 ** 2 + 1.1 ** 2 + 0.81
    total = sum(b.subgradient(theta[list(s)])[0] for b, s in zip(p.blocks, p.supports))
    assert total == pytest.approx(expected)
    assert p.objective(theta) == pytest.approx(expected)
    assert np.allclose(p.minimizer, [0.75, 0.5, 0.25])


def test_generators_deterministic():
    a = generate(ProblemSpec("sfm", {"n": 4}, 7))
    b = generate(ProblemSpec("sfm", {"n": 4}, 7))
    assert a.to_json() == b.to_json()


def test_piecewise_linear_single_piece():
    p = piecewise_linear(3, 2, 1, seed=0)
    rng = np.random.default_rng(0)
    x, y = rng.random(3), rng.random(3)
    mid = p.objective(0.5 * (x + y))
    assert mid == pytest.approx(0.5 * (p.objective(x) + p.objective(y)))


def test_baseline_subgradient_abs():
    obj = harness.SeparableObjective(1, [(0,)], [lambda x: (abs(x[0]), np.sign(x[0]) + (x[0] == 0))],
                                     -np.ones(1), np.ones(1), 1.0)
    res = harness.baseline_subgradient(obj, 1000, start=np.array([0.9]))
    assert res["value"] <= 0.1


def test_baseline_cpm_queries_every_term():
    terms = [lambda x: (abs(x[0]), np.array([1.0 if x[0] >= 0 else -1.0]))] * 3
    obj = harness.SeparableObjective(2, [(0,), (1,), (0,)], terms,
                                     -np.ones(2), np.ones(2), 3.0)
    counter = OracleCounter()
    res = harness.baseline_cpm(obj, 0.05, counter, samples=200)
    assert all(c == 3 for c in res["calls_per_iteration"])
    assert counter.subgradient_calls == 3 * res["iterations"]


def test_solve_cli_and_determinism(tmp_path):
    spec = tmp_path / "chain.json"
    spec.write_text(json.dumps({"kind": "chain_quadratic", "params": {"n": 3}, "epsilon": 0.05}))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli.main(["solve", "--problem", str(spec), "--seed", "42", "--samples", "256",
                         "--out", str(out)])
        assert code == 0
        assert (out / "trace.csv").exists()
        outs.append((out / "summary.json").read_bytes())
    assert outs[0] == outs[1]
    summary = json.loads(outs[0])
    assert summary["gap"] == pytest.approx(summary["final_value"] - summary["optimum_if_known"],
                                           abs=1e-12)
    rows = harness.read_trace(tmp_path / "run0" / "trace.csv")
    assert list(rows[0]) == list(harness.TRACE_COLUMNS)
    seps = [int(r["sep_calls"]) for r in rows]
    assert seps == sorted(seps)


def test_sfm_cli(tmp_path):
    inst = {"ground_set": 2, "terms": [{"support": [0, 1], "type": "cut",
                                        "data": [[0, 1, 1.0]]}]}
    path = tmp_path / "cut.json"
    path.write_text(json.dumps(inst))
    assert cli.main(["sfm", "--instance", str(path), "--epsilon", "0.02",
                     "--brute-force-check", "--samples", "256"]) == 0


def test_cli_bad_input(tmp_path, capsys):
    assert cli.main(["solve", "--problem", str(tmp_path / "missing.json")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "bad_input"


def test_inner_ball_cli(capsys):
    assert cli.main(["inner-ball", "--box", "0.2,0.8", "--dim", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["radius"] > 0
