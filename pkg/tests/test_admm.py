import numpy as np
import pytest

from etlq import Status, check_trigger_consistency, simulate
from etlq.admm import (AdmmConfig, admm_iterate, build_admm_data, initial_state, prepare, project, rho_for_eps,
                       solve_admm)
from etlq.benchmarks import example2, plant3d
from etlq.exact import solve_exact


def test_equality_form_encodes_dynamics_and_cost():
    inst = example2(N=4)
    F, G, h = build_admm_data(inst)
    U = np.array([[0.3], [-0.1], [0.0], [0.2]])
    traj = simulate(inst, U)
    z = np.concatenate([traj.states.ravel(), U.ravel()])
    np.testing.assert_allclose(G @ z, h, atol=1e-14)
    J = sum(traj.states[t] @ inst.Q @ traj.states[t] + U[t] @ inst.R @ U[t] for t in range(4))
    J += traj.states[4] @ inst.P @ traj.states[4]
    assert 0.5 * z @ F @ z * 2 == pytest.approx(J, rel=1e-12)


def test_projection_zeroes_inputs_inside_box():
    n, m, N, eps = 2, 1, 3, 0.5
    X = np.array([[1.0, 0.0], [0.1, -0.2], [0.0, 0.6], [9.0, 9.0]])
    U = np.array([1.0, 2.0, 3.0])
    out = project(np.concatenate([X.ravel(), U]), n, m, N, eps)
    np.testing.assert_array_equal(out[-3:], [1.0, 0.0, 3.0])
    np.testing.assert_array_equal(out[:8], X.ravel())


def test_example2_feasible_and_close_to_optimum():
    inst = example2()
    sol = solve_admm(inst, AdmmConfig(rho=rho_for_eps(inst.eps)))
    assert sol.status is Status.FEASIBLE
    assert check_trigger_consistency(inst, sol.trajectory)[0]
    opt = solve_exact(inst, prune=True).best.cost
    assert opt <= sol.cost * (1 + 1e-9)
    assert (sol.cost - opt) / opt < 0.05


def test_dual_update_and_residual_bookkeeping():
    inst = example2(N=4)
    cfg = AdmmConfig(rho=5.0)
    data = prepare(inst, cfg.rho)
    state = initial_state(data, cfg)
    for _ in range(30):
        admm_iterate(state, data, cfg)
    assert state.iter == 30
    assert len(state.primal_residuals) == 30
    assert np.isfinite(state.best_residual)
    assert not state.diverged


def test_seeded_runs_repeat_bit_for_bit(tmp_path):
    inst = plant3d([0.5, -0.5, 0.7], eps=0.2, N=6)
    cfg = AdmmConfig(seed=3)
    a = solve_admm(inst, cfg, trace_path=tmp_path / "a.csv")
    b = solve_admm(inst, cfg, trace_path=tmp_path / "b.csv")
    assert a.cost == b.cost and a.sigma == b.sigma
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0].startswith("# admm config:")
    assert lines[1] == "restart,iter,primal_residual,cost,best_flag"


def test_restarts_never_worsen():
    inst = plant3d([0.2, 0.8, -0.5], eps=0.4, N=6)
    one = solve_admm(inst, AdmmConfig(rho=5.8, restarts=1))
    three = solve_admm(inst, AdmmConfig(rho=5.8, restarts=3))
    if one.status.ok:
        assert three.status.ok and three.cost <= one.cost


def test_without_adaptation_tight_tolerance_fails_cleanly():
    inst = example2()
    sol = solve_admm(inst, AdmmConfig(max_iter=1, eps_tol=1e-14, adapt=False))
    assert sol.status is Status.NO_CONVERGENCE
    assert sol.trajectory is None and sol.cost == float("inf")


@pytest.mark.parametrize("kw", [dict(rho=0.0), dict(eps_tol=-1.0), dict(max_iter=0), dict(restarts=0),
                                dict(sigma0=-1.0), dict(max_doublings=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AdmmConfig(**kw)


def test_rho_profiles():
    assert rho_for_eps(0.2) == 9.8
    assert rho_for_eps(0.4) == 5.8
    assert rho_for_eps(0.6) == 6.9
    assert rho_for_eps(0.25) == 9.8
