import itertools

import numpy as np
import pytest

from etlq import ProblemInstance, Status, check_trigger_consistency
from etlq.benchmarks import example2
from etlq.condensed import SEQ_FEASIBLE, SEQ_INFEASIBLE, condense
from etlq.exact import index_to_tail, solve_exact, solve_for_sequence

from oracles import random_stable, scalar_grid_search, unconstrained_lq

EX2_COST = 10.36563248465818  # global optimum of the second-order example at N = 7


@pytest.fixture(scope="module")
def ex2_report():
    return solve_exact(example2(), keep_table=True)


def test_example2_reproduction(ex2_report):
    r = ex2_report
    assert r.total_sequences == 5 ** 6 == 15625
    assert r.best.sigma == (4, 4, 4, 1, 1, 0, 0)
    assert r.best.event_set == (5, 6)
    assert r.best.status is Status.OPTIMAL
    assert abs(r.feasible_count - 2650) <= 0.02 * 2650
    assert r.feasible_count + r.infeasible_count == r.total_sequences
    assert r.best.cost == pytest.approx(EX2_COST, rel=1e-9)
    assert check_trigger_consistency(example2(), r.best.trajectory)[0]


def test_table_is_consistent(ex2_report, tmp_path):
    t = ex2_report.per_sequence
    feas = t.codes == SEQ_FEASIBLE
    assert feas.sum() == ex2_report.feasible_count
    assert np.all(np.isfinite(t.costs[feas])) and np.all(np.isinf(t.costs[~feas]))
    assert t.costs[feas].min() == pytest.approx(ex2_report.best.cost, rel=1e-12)
    # the cheapest sequence wins outright; only bit-equal costs fall back to lexicographic order
    assert t.sigma(int(np.argmin(t.costs))) == ex2_report.best.sigma
    path = tmp_path / "seq.csv"
    t.to_csv(path, header="method: exact")
    lines = path.read_text().splitlines()
    assert lines[0] == "# method: exact"
    assert lines[1] == "sigma,status,cost,max_violation"
    assert len(lines) == 2 + 15625


def test_pruning_keeps_the_answer(ex2_report):
    r = solve_exact(example2(), prune=True, keep_table=True)
    assert r.best.sigma == ex2_report.best.sigma
    assert r.best.cost == ex2_report.best.cost
    assert r.feasible_count == ex2_report.feasible_count
    assert r.qp_count < ex2_report.qp_count
    np.testing.assert_array_equal(r.per_sequence.costs, ex2_report.per_sequence.costs)


def test_workers_do_not_change_results(ex2_report):
    r = solve_exact(example2(), workers=3, keep_table=True)
    np.testing.assert_array_equal(r.per_sequence.codes, ex2_report.per_sequence.codes)
    np.testing.assert_array_equal(r.per_sequence.costs, ex2_report.per_sequence.costs)
    assert r.best.sigma == ex2_report.best.sigma and r.best.cost == ex2_report.best.cost


def test_lexicographic_index():
    assert index_to_tail(0, 4, 5) == (0, 0, 0)
    assert index_to_tail(1, 4, 5) == (0, 0, 1)
    assert index_to_tail(5, 4, 5) == (0, 1, 0)
    assert index_to_tail(124, 4, 5) == (4, 4, 4)
    assert index_to_tail(0, 1, 5) == ()


def test_horizon_one_has_single_sequence():
    inst = example2(N=1)
    r = solve_exact(inst)
    assert r.total_sequences == 1
    cost, U, _ = unconstrained_lq(inst.A, inst.B, inst.Q, inst.R, inst.P, inst.x0, 1)
    assert r.best.cost == pytest.approx(cost, rel=1e-10)


def test_scalar_instance_matches_grid_search():
    inst = ProblemInstance(A=[[1.2]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], P=[[1.0]], x0=[2.0], eps=0.5, N=3)
    ref = scalar_grid_search(1.2, 1.0, 1.0, 1.0, 1.0, 2.0, 0.5, step=2e-3)
    assert abs(solve_exact(inst).best.cost - ref) < 1e-2


def test_condensed_and_dense_sequence_solves_agree():
    inst = example2(N=4)
    cd = condense(inst)
    agree = 0
    for tail in itertools.product(range(5), repeat=3):
        sigma = (4,) + tail
        code, cost, _, _, _ = cd.solve(sigma, inst.tol)
        dense = solve_for_sequence(inst, sigma)
        if code == SEQ_FEASIBLE:
            assert dense.status is Status.FEASIBLE
            assert dense.cost == pytest.approx(cost, rel=1e-7, abs=1e-9)
            agree += 1
        elif code == SEQ_INFEASIBLE:
            assert dense.status is Status.INFEASIBLE
    assert agree > 0


@pytest.mark.parametrize("seed", range(8))
def test_outside_box_lqr_optimum_is_recovered(seed):
    rng = np.random.default_rng(seed)
    A, B = random_stable(rng, 2, 1, radius=0.95)
    x0 = 3.0 * rng.standard_normal(2)
    _, _, X = unconstrained_lq(A, B, 2 * np.eye(2), np.eye(1), 2 * np.eye(2), x0, 4)
    eps = 0.5 * np.max(np.abs(X[:4]), axis=1).min()
    inst = ProblemInstance(A=A, B=B, Q=2 * np.eye(2), R=[[1.0]], P=2 * np.eye(2), x0=x0, eps=eps, N=4)
    cost, _, _ = unconstrained_lq(A, B, inst.Q, inst.R, inst.P, x0, 4)
    assert solve_exact(inst).best.cost == pytest.approx(cost, rel=1e-6)


def test_x0_inside_box_forces_zero_first_input():
    inst = example2(N=4, x0=(0.1, -0.1))
    best = solve_exact(inst).best
    assert best.sigma[0] == 0
    assert best.inputs[0, 0] == 0.0
