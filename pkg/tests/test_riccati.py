import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sepval import riccati as rc
from sepval.lqr_models import heat_model, random_lqr


def dare_fixed_point(p, iters=100_000):
    # value iteration from P = 0 in the subtraction-free form
    # P <- Q + A'P (I + G P)^-1 A, G = B R^-1 B'
    A, Q = p.A, p.Q
    G = p.B @ np.linalg.solve(p.R, p.B.T)
    I = np.eye(len(Q))
    P = np.zeros_like(Q)
    for _ in range(iters):
        Pn = Q + A.T @ P @ np.linalg.solve(I + G @ P, A)
        Pn = (Pn + Pn.T) / 2
        if np.array_equal(Pn, P):
            break
        P = Pn
    return P


def care_ode(p, dt=1e-3, T=60.0):
    # integrate dP/dt = A'P + PA - PGP + Q from 0 with RK4 to stationarity
    A, Q, G = p.A, p.Q, p.G()

    def f(P):
        return A.T @ P + P @ A - P @ G @ P + Q

    P = np.zeros_like(Q)
    for _ in range(int(T / dt)):
        k1 = f(P)
        k2 = f(P + dt / 2 * k1)
        k3 = f(P + dt / 2 * k2)
        k4 = f(P + dt * k3)
        P = P + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return P


def stable_pair(rng, n, m):
    A = rng.standard_normal((n, n))
    A *= 1.3 / max(abs(np.linalg.eigvals(A)))  # unstable but stabilizable with full-rank B
    return A, rng.standard_normal((n, m))


def test_scalar_dare_closed_forms():
    P, rep = rc.solve_dare(rc.DAREProblem([[0.0]], [[1.0]], [[1.0]], [[1.0]]))
    assert P[0, 0] == pytest.approx(1.0, abs=1e-12)
    p = rc.DAREProblem([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    P, rep = rc.solve_dare(p)
    assert P[0, 0] == pytest.approx((0.25 + math.sqrt(4.0625)) / 2, abs=1e-9)
    assert P[0, 0] == pytest.approx(1.132782, abs=1e-6)
    assert rep.converged and rep.residual <= 1e-10
    K = rc.feedback_gain_discrete(P, p)
    assert K[0, 0] == pytest.approx(P[0, 0] * 0.5 / (P[0, 0] + 1), abs=1e-12)
    assert K[0, 0] == pytest.approx(0.265564, abs=1e-6)
    assert rep.closed_loop == pytest.approx(0.5 - K[0, 0], abs=1e-9)


def test_scalar_care_closed_forms():
    p = rc.CAREProblem([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    P, rep = rc.solve_care(p)
    assert P[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-9)
    assert rc.feedback_gain_continuous(P, p)[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-9)
    assert rep.closed_loop == pytest.approx(-math.sqrt(2), rel=1e-6)
    P, rep = rc.solve_care(rc.CAREProblem([[0.0]], [[1.0]], [[0.0]], [[1.0]]))
    assert P[0, 0] == 0.0 and "Q = 0" in rep.notes
    I = np.eye(3)
    P, _ = rc.solve_care(rc.CAREProblem(-I, I, I, I))
    assert np.allclose(P, (math.sqrt(2) - 1) * I, atol=1e-12)


@pytest.mark.parametrize("method", rc.CARE_METHODS)
def test_care_methods_agree(method, rng):
    A, B = stable_pair(rng, 6, 2)
    p = rc.CAREProblem(A, B, np.eye(6), np.eye(2))
    P, rep = rc.solve_care(p, method=method)
    assert rep.residual <= 1e-10
    assert np.array_equal(P, P.T)
    assert np.all(np.linalg.eigvalsh(P) > 0)
    assert rep.closed_loop < 0
    ref, _ = rc.solve_care(p, method="sign" if method == "doubling" else "doubling")
    assert np.allclose(P, ref, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_dare_matches_fixed_point(seed):
    rng = np.random.default_rng(seed)
    A, B = stable_pair(rng, 5, 2)
    M = rng.standard_normal((5, 5))
    p = rc.DAREProblem(A, B, M @ M.T + np.eye(5), np.eye(2))
    P, rep = rc.solve_dare(p)
    assert rep.residual <= 1e-9
    assert np.allclose(P, dare_fixed_point(p), rtol=1e-6, atol=1e-9)
    assert rep.closed_loop < 1
    K = rc.feedback_gain_discrete(P, p)
    assert max(abs(np.linalg.eigvals(A - B @ K))) < 1


def test_care_matches_riccati_ode(rng):
    A, B = stable_pair(rng, 3, 1)
    p = rc.CAREProblem(A, B, np.eye(3), np.eye(1))
    P, _ = rc.solve_care(p)
    assert np.allclose(P, care_ode(p), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("s", [5, 10, 100])
def test_heat_residuals(s):
    prob = heat_model(s)
    for method in rc.CARE_METHODS:
        P, rep = rc.solve_care(prob.problem, method=method)
        assert rc.care_residual(P, prob.problem) / (1 + np.abs(P).sum(1).max()) <= 1e-9


def test_random_banded_residual():
    prob = random_lqr(100, 7, 2)
    P, rep = rc.solve_dare(prob.problem)
    assert rep.residual <= 1e-9 and rep.closed_loop < 1


def test_block_decoupled_gives_block_diagonal(rng):
    A = np.zeros((6, 6))
    A[:3, :3] = rng.standard_normal((3, 3))
    A[3:, 3:] = rng.standard_normal((3, 3))
    I = np.eye(6)
    P, _ = rc.solve_dare(rc.DAREProblem(A, I, I, I))
    assert np.all(np.abs(P[:3, 3:]) <= 1e-12)
    P, _ = rc.solve_care(rc.CAREProblem(A, I, I, I))
    assert np.all(np.abs(P[:3, 3:]) <= 1e-12)


@given(st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.1, 10), st.floats(0.1, 10))
def test_scalar_care_scaling(a, b, q, r):
    # scalar CARE 2ap - p^2 b^2 / r + q = 0, stabilizing root
    want = r * (a + math.sqrt(a * a + b * b * q / r)) / (b * b)
    P, _ = rc.solve_care(rc.CAREProblem([[a]], [[b]], [[q]], [[r]]))
    assert P[0, 0] == pytest.approx(want, rel=1e-9)


@given(st.floats(-1.5, 1.5), st.floats(0.1, 3), st.floats(0.1, 10))
def test_scalar_dare_root(a, b, q):
    P, _ = rc.solve_dare(rc.DAREProblem([[a]], [[b]], [[q]], [[1.0]]))
    p = P[0, 0]
    # p = a^2 p / (1 + b^2 p) + q
    assert p == pytest.approx(a * a * p / (1 + b * b * p) + q, rel=1e-9)


def test_gamma_form_gain():
    A = np.array([[-1.0, 0.3], [0.2, 0.5]])
    p = rc.CAREProblem.gamma_form(A, 0.01)
    P, _ = rc.solve_care(p)
    assert np.allclose(rc.feedback_gain_continuous(P, p), P / 0.01)


def test_zero_gains():
    p = rc.DAREProblem(np.eye(2), np.eye(2), np.eye(2), np.eye(2))
    assert np.all(rc.feedback_gain_discrete(np.zeros((2, 2)), p) == 0)
    c = rc.CAREProblem(np.eye(2), np.eye(2), np.eye(2), np.eye(2))
    assert np.all(rc.feedback_gain_continuous(np.zeros((2, 2)), c) == 0)


def test_problem_validation():
    with pytest.raises(ValueError):
        rc.DAREProblem(np.eye(2), np.eye(2), -np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        rc.DAREProblem(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        rc.CAREProblem(np.eye(2), np.eye(3), np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        rc.CAREProblem(np.eye(2) * np.nan, np.eye(2), np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        rc.solve_care(rc.CAREProblem(np.eye(1), np.eye(1), np.eye(1), np.eye(1)), method="schur")


def test_unstabilizable_raises():
    # unstable mode that B cannot reach
    A = np.diag([2.0, 0.5])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(rc.RiccatiError):
        rc.solve_dare(rc.DAREProblem(A, B, np.eye(2), np.eye(1)))
    with pytest.raises(rc.RiccatiError):
        rc.solve_care(rc.CAREProblem(A, B, np.eye(2), np.eye(1)))


def test_warm_start(rng):
    A, B = stable_pair(rng, 5, 5)
    p = rc.CAREProblem(A, B, np.eye(5), np.eye(5))
    P, _ = rc.solve_care(p)
    P2, rep = rc.solve_care(p, P0=P + 1e-6)
    assert rep.iterations == 0 and np.allclose(P, P2, atol=1e-10)
    P3, rep = rc.solve_care(p, P0=-100 * np.eye(5))
    assert np.allclose(P, P3, atol=1e-9)


def test_lyapunov(rng):
    F = rng.standard_normal((5, 5)) - 4 * np.eye(5)
    C = np.eye(5)
    X = rc.solve_lyapunov(F, C)
    assert np.allclose(F.T @ X + X @ F + C, 0, atol=1e-11)
    with pytest.raises(rc.RiccatiError):
        rc.solve_lyapunov(np.eye(2), np.eye(2))


def test_spectral_radius_examples():
    r = rc.spectral_radius(np.diag([0.5, -0.2]))
    assert r.value == pytest.approx(0.5, abs=1e-9) and r.converged
    th = 0.7
    rot = 0.9 * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    r = rc.spectral_radius(rot)
    assert r.value == pytest.approx(0.9, rel=0.01) and not r.converged
    assert rc.spectral_radius(np.zeros((3, 3))).value == 0.0
    # +-lambda pair is caught by the squared iteration
    r = rc.spectral_radius(np.diag([0.8, -0.8, 0.1]))
    assert r.value == pytest.approx(0.8, abs=1e-9)


def test_spectral_abscissa(rng):
    F = rng.standard_normal((6, 6))
    want = max(np.linalg.eigvals(F).real)
    est = rc.spectral_abscissa(F)
    if est.converged:
        assert est.value == pytest.approx(want, abs=1e-6)
    else:
        # complex dominant pair: flagged norm-growth estimate
        assert est.value == pytest.approx(want, rel=0.01)
    S = np.diag([-3.0, -1.0, -0.5]) + np.triu(np.ones((3, 3)), 1)
    est = rc.spectral_abscissa(S)
    assert est.converged and est.value == pytest.approx(-0.5, abs=1e-6)
