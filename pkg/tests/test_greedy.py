import numpy as np
import pytest

from etlq import Status, check_trigger_consistency
from etlq.benchmarks import example2, plant3d
from etlq.exact import solve_exact
from etlq.greedy import solve_greedy


def test_qp_count_and_feasibility_on_example2():
    inst = example2()
    sol = solve_greedy(inst)
    assert sol.status is Status.FEASIBLE
    assert sol.stats.qp_count == (2 * inst.n + 1) * (inst.N - 1) + 1 == 31
    assert len(sol.sigma) == inst.N
    assert check_trigger_consistency(inst, sol.trajectory)[0]


@pytest.mark.parametrize("tail", ["truncated", "free"])
@pytest.mark.parametrize("x0", [(0.0, -1.0), (1.2, 0.0), (-0.6, 1.0), (0.9, 0.9)])
def test_greedy_never_beats_exact(tail, x0):
    inst = example2(N=5, x0=x0)
    g = solve_greedy(inst, tail=tail)
    e = solve_exact(inst).best
    assert g.status.ok
    assert e.cost <= g.cost * (1 + 1e-9)


def test_greedy_reports_cost_of_its_trajectory():
    inst = plant3d([0.3, 0.5, -0.8], eps=0.2, N=5)
    sol = solve_greedy(inst)
    X, U = sol.states, sol.inputs
    J = sum(X[t] @ inst.Q @ X[t] + U[t] @ inst.R @ U[t] for t in range(inst.N)) + X[-1] @ inst.P @ X[-1]
    assert sol.cost == pytest.approx(J, rel=1e-12)


def test_unknown_tail_rejected():
    with pytest.raises(ValueError):
        solve_greedy(example2(), tail="bogus")


def test_deterministic():
    a = solve_greedy(example2())
    b = solve_greedy(example2())
    assert a.sigma == b.sigma and a.cost == b.cost
    np.testing.assert_array_equal(a.inputs, b.inputs)
