import numpy as np
import pytest

from etlq import ProblemInstance
from etlq.benchmarks import example2, plant3d
from etlq.rhc import (RhcConfig, compute_stability_constants, dlqr_gain, finite_horizon_lqr,
                      lyapunov_decrease_check, run_rhc, sample_box_states, schedule_matrix, tradeoff_sweep,
                      ultimate_entry)

from oracles import unconstrained_lq


def _stable(x0=(0.05, -0.05), N=3):
    return ProblemInstance(A=[[0.5, 0.1], [0.0, 0.4]], B=[[1.0], [0.5]], Q=np.eye(2), R=[[1.0]], P=np.eye(2),
                           x0=list(x0), eps=0.2, N=N)


def test_quiet_plant_never_transmits():
    inst = _stable()
    run = run_rhc(inst, RhcConfig(sim_len=20))
    assert run.transmission_count == 0 and run.pi_inf == 0.0
    x = inst.x0.copy()
    for t in range(20):
        np.testing.assert_allclose(run.states[t], x, rtol=0, atol=0)
        x = inst.A @ x
    assert np.all(run.inputs == 0.0)


@pytest.mark.parametrize("inner", ["exact", "greedy", "admm"])
def test_closed_loop_bookkeeping(inner):
    inst = example2(N=4)
    run = run_rhc(inst, RhcConfig(inner=inner, sim_len=15))
    assert run.ok
    norms = np.max(np.abs(run.states[:-1]), axis=1)
    np.testing.assert_array_equal(run.transmissions, norms >= inst.eps)
    assert np.all(run.inputs[~run.transmissions] == 0.0)
    for t in range(15):
        np.testing.assert_allclose(run.states[t + 1], inst.A @ run.states[t] + inst.B @ run.inputs[t], atol=1e-14)
    stage = [x @ inst.Q @ x + u @ inst.R @ u for x, u in zip(run.states[:-1], run.inputs)]
    assert run.J_inf == pytest.approx(np.mean(stage), rel=1e-12)
    assert run.total_cost == pytest.approx(np.sum(stage), rel=1e-12)
    assert run.pi_inf == pytest.approx(run.transmissions.mean())


def test_noisy_runs_are_seeded_per_run():
    inst = example2(N=3)
    cfg = RhcConfig(inner="greedy", sim_len=30, noise_cov=0.05 * np.eye(2), x0_cov=np.eye(2), seed=11)
    a = run_rhc(inst, cfg, run_index=2)
    b = run_rhc(inst, cfg, run_index=2)
    c = run_rhc(inst, cfg, run_index=3)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    assert not np.array_equal(a.states[0], inst.x0)


@pytest.mark.parametrize("kw", [dict(inner="bogus"), dict(sim_len=0), dict(noise_cov=-np.eye(2)),
                                dict(noise_cov=[[1.0, 2.0], [0.0, 1.0]])])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        RhcConfig(**kw)


def test_riccati_recursion_matches_dense_least_squares():
    for inst in (example2(), plant3d([0.3, -0.2, 0.9], N=6)):
        cost, U, X = finite_horizon_lqr(inst)
        ref, U_ref, _ = unconstrained_lq(inst.A, inst.B, inst.Q, inst.R, inst.P, inst.x0, inst.N)
        assert cost == pytest.approx(ref, rel=1e-10)
        np.testing.assert_allclose(U, U_ref, atol=1e-9)


def test_dlqr_gain_stabilizes():
    inst = example2()
    K = dlqr_gain(inst.A, inst.B, inst.Q, inst.R)
    assert np.abs(np.linalg.eigvals(inst.A + inst.B @ K)).max() < 1


def test_schedule_matrix_horizon_one():
    inst = ProblemInstance(A=[[0.5, 0.0], [0.1, 0.3]], B=[[1.0], [0.0]], Q=np.eye(2), R=[[2.0]], P=np.eye(2),
                           x0=[1, 1], eps=0.1, N=1)
    K = np.zeros((1, 2))
    S = schedule_matrix(inst, K, (1,))
    np.testing.assert_allclose(S, inst.Q + inst.A.T @ inst.Q @ inst.A)
    K = dlqr_gain(inst.A, inst.B, inst.Q, inst.R)
    S = schedule_matrix(inst, K, (1,))
    AK = inst.A + inst.B @ K
    np.testing.assert_allclose(S, inst.Q + K.T @ inst.R @ K + AK.T @ inst.Q @ AK)


def test_stability_constants_and_scaling():
    inst = example2(N=6)
    c = compute_stability_constants(inst)
    assert c.a2 == pytest.approx(2.0)
    assert c.a3 >= c.a2 and 0 <= c.gamma < 1
    assert c.mu > 0 and c.kappa == c.a3
    assert len(c.S_table) == 2 ** 6
    lam = np.linalg.eigvalsh(inst.A.T @ inst.P @ inst.A + inst.Q).max()
    assert c.eta == pytest.approx(lam * 2 * 0.25 ** 2)
    c2 = compute_stability_constants(inst.replace(eps=0.75))
    assert c2.mu == pytest.approx(3 * c.mu, rel=1e-12)
    assert compute_stability_constants(inst, kappa=4.0).mu == pytest.approx(np.sqrt(4.0 * c.eta / 4.0))


def test_stability_constants_errors():
    inst = example2(N=2)
    with pytest.raises(ValueError):
        compute_stability_constants(inst.replace(Q=np.diag([1.0, 0.0])))
    with pytest.raises(ValueError):
        compute_stability_constants(inst, kappa=-1.0)


def test_ultimate_entry():
    X = np.array([[3.0, 0], [0.5, 0], [2.0, 0], [0.4, 0], [0.1, 0]])
    assert ultimate_entry(X, 1.0) == 3
    assert ultimate_entry(X[1:2], 1.0) == 0
    assert ultimate_entry(X[:3], 1.0) is None


def test_lyapunov_check_small_sample():
    inst = example2(N=4)
    rep = lyapunov_decrease_check(inst, sample_box_states(2, 5, 1.2, seed=0))
    assert rep.margins.shape == (5,)
    assert np.all(np.isfinite(rep.V)) and np.all(np.isfinite(rep.V_next))
    assert rep.fraction == 1.0


def test_tradeoff_sweep_is_deterministic_and_ordered():
    inst = example2(N=3)
    cfg = RhcConfig(inner="greedy", sim_len=40, noise_cov=0.1 * np.eye(2), x0_cov=np.eye(2), seed=5)
    a = tradeoff_sweep(inst, [0.25, 2.0], 4, cfg)
    b = tradeoff_sweep(inst, [0.25, 2.0], 4, cfg, workers=2)
    assert a == b
    assert [r.eps for r in a] == [0.25, 2.0]
    assert a[0].pi_mean > a[1].pi_mean
    with pytest.raises(ValueError):
        tradeoff_sweep(inst, [0.0], 2, cfg)
    with pytest.raises(ValueError):
        tradeoff_sweep(inst, [0.5], 0, cfg)
