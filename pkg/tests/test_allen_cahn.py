import math

import numpy as np
import pytest

from sepval import allen_cahn as ac
from sepval import riccati as rc

FAST = ac.SDREConfig(T=2.0)


def scalar_model(gamma=0.5):
    return ac.AllenCahnModel(1, 1.0, 1.0, np.zeros((1, 1)), gamma, np.array([0.5]))


def test_discretize_small():
    m = ac.discretize(2, 1.0)
    assert np.array_equal(m.L, 4 * np.array([[-1.0, 1.0], [1.0, -1.0]]))
    assert m.dx == 0.5 and m.gamma == 0.5
    assert np.allclose(m.grid, [0.25, 0.75])
    with pytest.raises(ValueError):
        ac.discretize(1, 1.0)
    with pytest.raises(ValueError):
        ac.discretize(5, 0.0)


@pytest.mark.parametrize("s", [2, 3, 10, 100])
def test_laplacian_neumann(s):
    L = ac.discretize(s, 0.1).L
    assert np.all(L.sum(axis=1) == 0)
    assert np.array_equal(L, L.T)
    assert L[0, 0] == L[-1, -1] == pytest.approx(-s * s, rel=1e-14)


def test_constant_state_logistic():
    m = ac.discretize(8, 0.3)
    c = 0.4
    y = np.full(8, c)
    assert np.allclose(ac.rhs(m, y), c * (1 - c), atol=1e-12)


def test_semilinear_identity(rng):
    m = ac.discretize(12, 1e-2)
    assert np.array_equal(ac.semilinear_A(m, np.zeros(12)), m.sigma * m.L + np.eye(12))
    ones = np.ones(12)
    assert np.array_equal(ac.semilinear_A(m, ones), m.sigma * m.L)
    assert np.allclose(ac.semilinear_A(m, ones) @ ones, 0, atol=1e-12)
    for _ in range(5):
        y = rng.uniform(-1, 2, 12)
        diff = ac.semilinear_A(m, y) @ y - ac.rhs(m, y)
        assert np.max(np.abs(diff)) <= 1e-12 * (1 + np.max(np.abs(ac.rhs(m, y))))
    with pytest.raises(ValueError):
        ac.semilinear_A(m, np.zeros(3))


def test_scalar_sdre():
    m = scalar_model(0.5)
    P, _ = ac.sdre_solve_at(m, np.zeros(1))
    assert P[0, 0] == pytest.approx(0.5 * (1 + math.sqrt(2)), abs=1e-12)
    u = ac.sdre_feedback(m, P, np.array([0.3]))
    assert u[0] == pytest.approx(-(1 + math.sqrt(2)) * 0.3, abs=1e-12)


def test_feedback_zero_cases(rng):
    m = ac.discretize(5, 0.1)
    assert np.all(ac.sdre_feedback(m, np.zeros((5, 5)), rng.standard_normal(5)) == 0)
    assert np.all(ac.sdre_feedback(m, np.eye(5), np.zeros(5)) == 0)


@pytest.mark.parametrize("method", rc.CARE_METHODS)
def test_sdre_residuals_random_states(rng, method):
    m = ac.discretize(20, 1e-3)
    for y in rng.uniform(0, 1, (10, 20)):
        P, rep = ac.sdre_solve_at(m, y, method=method)
        p = ac.sdre_problem(m, y)
        assert rc.care_residual(P, p) / (1 + np.abs(P).sum(1).max()) <= 1e-9
        assert np.array_equal(P, P.T)
        assert np.min(np.linalg.eigvalsh(P)) >= -1e-12


def test_zero_state_stays_zero():
    m = ac.discretize(10, 1e-2)
    rep = ac.simulate_closed_loop(m, FAST, np.zeros(10))
    assert rep.ok and rep.total_cost == 0.0
    assert np.all(rep.states == 0) and rep.final_norm == 0


def test_full_band_reproduces_full_run():
    m = ac.discretize(16, 1e-3)
    y0 = ac.sine_profile(m)
    full = ac.simulate_closed_loop(m, FAST, y0)
    for r in (15, 16, 40):
        banded = ac.simulate_closed_loop(m, FAST, y0, band=r)
        assert np.array_equal(banded.states, full.states)
        assert banded.total_cost == full.total_cost


def test_trajectory_report_contents():
    m = ac.discretize(10, 1e-2)
    rep = ac.simulate_closed_loop(m, FAST, ac.sine_profile(m))
    assert rep.ok and rep.solve_count >= 1
    assert len(rep.times) == FAST.steps + 1
    # left-endpoint sum of the recorded running cost
    assert rep.total_cost == pytest.approx(FAST.dt * rep.running_cost[:-1].sum(), rel=1e-12)
    assert rep.unweighted_cost == pytest.approx(rep.total_cost * 10)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "t," + ",".join(f"y_{i}" for i in range(1, 11)) + ",u_norm,running_cost"
    assert len(lines) == FAST.steps + 2
    # stabilized toward the unstable equilibrium 0
    assert rep.final_norm < 0.2 * np.max(np.abs(rep.states[0]))


def test_every_step_refresh_counts_solves():
    m = ac.discretize(8, 1e-2)
    cfg = ac.SDREConfig(T=0.5, refresh="every")
    rep = ac.simulate_closed_loop(m, cfg, ac.sine_profile(m))
    assert rep.solve_count == cfg.steps
    lazy = ac.simulate_closed_loop(m, ac.SDREConfig(T=0.5), ac.sine_profile(m))
    assert lazy.solve_count < cfg.steps
    assert lazy.total_cost == pytest.approx(rep.total_cost, rel=3e-2)


def test_blowup_detected():
    m = ac.discretize(6, 1e-2)
    # the feedback is stabilizing, so trip the detector with a low ceiling
    cfg = ac.SDREConfig(T=5.0, blowup=1.0)
    rep = ac.simulate_closed_loop(m, cfg, np.full(6, -3.0))
    assert rep.status == "blowup" and not rep.ok
    assert "exceeded" in rep.message
    assert len(rep.times) == 1 and np.isfinite(rep.total_cost)


def test_large_negative_state_is_stabilized():
    m = ac.discretize(6, 1e-2)
    rep = ac.simulate_closed_loop(m, ac.SDREConfig(T=5.0), np.full(6, -3.0))
    assert rep.ok and rep.final_norm < 1e-3


def test_shift_collision_recovers():
    # the first Cayley shift lands on a Hamiltonian eigenvalue here
    m = ac.discretize(6, 1e-2)
    y = np.full(6, -3.0)
    P, rep = ac.sdre_solve_at(m, y, method="doubling")
    ref, _ = ac.sdre_solve_at(m, y, method="sign")
    assert any("rejected" in n for n in rep.notes)
    assert np.allclose(P, ref, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        ac.SDREConfig(dt=0)
    with pytest.raises(ValueError):
        ac.SDREConfig(refresh="sometimes")
    with pytest.raises(ValueError):
        ac.SDREConfig(refresh_every=0)
    assert ac.SDREConfig().steps == 1000
    assert ac.SDREConfig().metadata()["quadrature"] == "left-endpoint"


def test_frozen_decay_miniature():
    res = ac.frozen_decay_study(20, [1e-1, 1e-2, 1e-3, 1e-4])
    B = [r.fit.B_fit for r in res]
    assert all(a > b for a, b in zip(B, B[1:]))
    for r in res:
        col = r.series.value
        assert np.all(col[0] >= col)


def test_cost_error_table_small():
    cfg = ac.SDREConfig(T=2.0)
    fulls = {}
    table = ac.cost_error_table(12, [1e-3, 1e-2], [1, 3, 11], cfg, full_runs=fulls)
    assert table.errors.shape == (3, 2)
    assert np.all(table.errors >= 0)
    assert np.all(table.errors[-1] == 0)
    assert set(fulls) == {1e-3, 1e-2}
    g = ac.cost_error_table(12, [1e-3], [1, 11], cfg, weight="gamma")
    assert g.errors[0, 0] == pytest.approx(table.errors[0, 0] / 12, rel=1e-12)
    assert table.column(1e-2).shape == (3,)
    lines = table.to_csv().splitlines()
    assert lines[0] == "r,err_sigma_1e-3,err_sigma_1e-2"
    assert lines[1].startswith("1,")
    with pytest.raises(ValueError):
        ac.cost_error_table(12, [], [1], cfg)
    with pytest.raises(ValueError):
        ac.cost_error_table(12, [1e-3], [1], cfg, weight="half")


def test_sigma_label():
    assert ac.sigma_label(1e-4) == "1e-4"
    assert ac.sigma_label(0.1) == "1e-1"
    assert ac.sigma_label(2.5e-3) == "2.5e-3"


def test_time_step_halving_changes_cost_little():
    m = ac.discretize(50, 1e-3)
    y0 = ac.sine_profile(m)
    a = ac.simulate_closed_loop(m, ac.SDREConfig(), y0)
    b = ac.simulate_closed_loop(m, ac.SDREConfig(dt=5e-3), y0)
    assert a.ok and b.ok
    assert abs(a.total_cost - b.total_cost) < 0.01 * a.total_cost
    # T = 10 is long enough that the tail is negligible
    assert a.final_norm < 1e-4
