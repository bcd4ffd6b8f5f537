import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from etlq import InstanceError, ProblemInstance, Status
from etlq.benchmarks import example2
from etlq.cli import main, parse_eps_list, CliError, _EXIT
from etlq.io import dump_instance, instance_from_dict, instance_to_dict, load_instance, save_instance

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=2, max_size=2), finite,
       st.floats(1e-6, 1e3), st.integers(1, 20))
def test_yaml_round_trip_is_bit_exact(a, b, x, eps, N):
    inst = ProblemInstance(A=np.reshape(a, (2, 2)), B=np.reshape(b, (2, 1)), Q=np.diag([1.0 / 3, 2.0]),
                           R=[[0.1]], P=np.diag([np.pi, np.e]), x0=[x, -x], eps=eps, N=N)
    back = instance_from_dict(yaml.safe_load(dump_instance(inst)))
    again = instance_from_dict(yaml.safe_load(dump_instance(back)))
    for name in ("A", "B", "Q", "R", "P", "x0"):
        assert getattr(inst, name).tobytes() == getattr(back, name).tobytes() == getattr(again, name).tobytes()
    assert back.eps == inst.eps and back.N == inst.N


def test_file_round_trip(tmp_path):
    inst = example2()
    save_instance(inst, tmp_path / "i.yaml")
    back = load_instance(tmp_path / "i.yaml")
    assert instance_to_dict(back) == instance_to_dict(inst)


@pytest.mark.parametrize("change, field", [
    ({"A": [[0.9, 0.2], [0.8]]}, "A"),
    ({"B": [["x"], [0.8]]}, "B"),
    ({"x0": 3}, "x0"),
    ({"N": 2.5}, "N"),
    ({"eps": "big"}, "eps"),
    ({"bogus": 1}, "bogus"),
])
def test_malformed_fields_are_named(change, field):
    d = instance_to_dict(example2())
    d.update(change)
    with pytest.raises(InstanceError, match=field):
        instance_from_dict(d)


def test_missing_field_and_default_terminal_weight():
    d = instance_to_dict(example2())
    del d["P"]
    assert np.array_equal(instance_from_dict(d).P, example2().Q)
    del d["Q"]
    with pytest.raises(InstanceError, match="Q"):
        instance_from_dict(d)


def test_eps_list_parsing():
    assert parse_eps_list("0.5:4.0:0.25") == [0.5 + 0.25 * k for k in range(15)]
    assert parse_eps_list("0.2,0.4") == [0.2, 0.4]
    with pytest.raises(CliError):
        parse_eps_list("1:0:0.1")


def _write(tmp_path, inst=None):
    p = tmp_path / "inst.yaml"
    save_instance(inst or example2(), p)
    return str(p)


def _records(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]


def test_cli_solve_exact(tmp_path, capsys):
    path = _write(tmp_path)
    out = tmp_path / "out"
    rc = main(["solve", path, "--method", "exact", "--workers", "1", "--prune", "--out", str(out), "--dump-sequences"])
    assert rc == 0
    rec = _records(capsys)[-1]
    assert rec["sigma"] == [4, 4, 4, 1, 1, 0, 0] and rec["status"] == "Optimal"
    assert rec["enumeration"]["total_sequences"] == 15625
    for name in ("trajectory.csv", "sequences.csv", "summary.jsonl"):
        text = (out / name).read_text()
        assert text
    assert (out / "trajectory.csv").read_text().startswith("# config: ")
    assert (out / "sequences.csv").read_text().startswith("# config: ")
    assert json.loads((out / "summary.jsonl").read_text().splitlines()[-1])["config"]["method"] == "exact"


def test_cli_solve_greedy_gap(tmp_path, capsys):
    rc = main(["solve", _write(tmp_path), "--method", "greedy", "--reference", "10.36563248465818"])
    assert rc == 0
    rec = _records(capsys)[-1]
    assert "gap" in rec and rec["gap"] >= -1e-9


def test_cli_solve_admm_writes_trace(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["solve", _write(tmp_path), "--method", "admm", "--seed", "1", "--out", str(out)])
    assert rc == 0
    assert (out / "admm_trace.csv").exists()
    assert _records(capsys)[-1]["config"]["admm"]["rho"] == 9.8


def test_cli_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("A: [[1, 2], [3]]\nB: [[1], [1]]\nQ: [[1, 0], [0, 1]]\nR: [[1]]\nx0: [1, 1]\neps: 0.1\nN: 2\n")
    assert main(["solve", str(bad)]) == 1
    assert "A:" in capsys.readouterr().err
    assert main(["solve", str(tmp_path / "missing.yaml")]) == 1
    assert main(["solve", _write(tmp_path), "--method", "nope"]) == 1
    assert main(["solve", _write(tmp_path), "--workers", "0"]) == 1


def test_cli_tolerance_env_override(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ETLQ_TOL_FEAS", "1e-8")
    assert main(["solve", _write(tmp_path), "--method", "greedy"]) == 0
    assert _records(capsys)[-1]["config"]["tolerances"]["tol_feas"] == 1e-8
    monkeypatch.setenv("ETLQ_TOL_FEAS", "-3")
    assert main(["solve", _write(tmp_path), "--method", "greedy"]) == 1


def test_exit_code_mapping():
    assert _EXIT[Status.OPTIMAL] == 0 and _EXIT[Status.FEASIBLE] == 0
    assert _EXIT[Status.INFEASIBLE] == 2 and _EXIT[Status.NO_CONVERGENCE] == 3


def test_cli_solve_no_convergence_exit(tmp_path, monkeypatch, capsys):
    import etlq.cli as cli_mod
    from etlq.model import Solution

    monkeypatch.setattr(cli_mod, "solve_admm", lambda inst, cfg, trace_path=None: Solution.failed(
        Status.NO_CONVERGENCE, (4,)))
    assert main(["solve", _write(tmp_path), "--method", "admm"]) == 3
    assert _records(capsys)[-1]["cost"] is None


def test_cli_rhc_and_constants(tmp_path, capsys):
    path = _write(tmp_path, example2(N=4))
    out = tmp_path / "r"
    assert main(["rhc", path, "--method", "greedy", "--steps", "10", "--out", str(out)]) == 0
    rec = _records(capsys)[-1]
    assert rec["steps"] == 10 and 0 <= rec["transmissions"] <= 10
    assert (out / "rhc_trace.csv").read_text().startswith("# config: ")
    assert main(["constants", path]) == 0
    rec = _records(capsys)[-1]
    assert rec["mu"] > 0 and {"a2", "a3", "gamma", "eta"} <= set(rec)


def test_cli_tradeoff_is_deterministic(tmp_path, capsys):
    path = _write(tmp_path, example2(N=3))
    args = ["tradeoff", path, "--eps", "0.5,1.5", "--runs", "3", "--steps", "20", "--seed", "7", "--workers", "1"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert len([line for line in first.splitlines() if not line.startswith("{")]) == 2
