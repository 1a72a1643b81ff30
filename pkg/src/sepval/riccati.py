"""Discrete and continuous algebraic Riccati solvers built on the local LU kernel.

DARE: structure-preserving doubling. CARE: scaled matrix-sign iteration on the
Hamiltonian followed by Newton-Kleinman refinement, where each Newton step
solves a Lyapunov equation with the same sign iteration. Only inverses and
products are needed, which keeps the whole chain inside :mod:`sepval.linalg`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
DEFAULT_NEWTON_ITER = 50


class RiccatiError(RuntimeError):
    """A Riccati solve failed; ``report`` holds the state at failure."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


class SignIterationBreakdown(RiccatiError):
    """An iterate of the matrix-sign iteration became singular."""


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    converged: bool
    method: str

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    # spectral radius of A - BK (discrete) or spectral abscissa of A - BK (continuous)
    closed_loop: float | None = None
    method: str = ""
    refinement_steps: int = 0
    notes: tuple[str, ...] = field(default_factory=tuple)


def _check_psd(M: np.ndarray, name: str) -> None:
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(la.norm_inf(M), 1.0)):
        raise ValueError(f"{name} must be symmetric")
    shift = 1e-10 * max(la.norm_inf(M), 1e-300)
    try:
        la.cholesky(M + shift * np.eye(M.shape[0]))
    except la.NotPositiveDefiniteError as exc:
        raise ValueError(f"{name} must be positive semidefinite") from exc


def _check_pd(M: np.ndarray, name: str) -> None:
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(la.norm_inf(M), 1.0)):
        raise ValueError(f"{name} must be symmetric")
    try:
        la.cholesky(M)
    except la.NotPositiveDefiniteError as exc:
        raise ValueError(f"{name} must be positive definite") from exc


@dataclass(frozen=True)
class _RiccatiData:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (self.A, self.B, self.Q, self.R))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B has {B.shape[0]} rows, expected {n}")
        m = B.shape[1]
        if Q.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}, got {Q.shape}")
        if R.shape != (m, m):
            raise ValueError(f"R must be {m}x{m}, got {R.shape}")
        for M, name in ((A, "A"), (B, "B"), (Q, "Q"), (R, "R")):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
        _check_psd(Q, "Q")
        _check_pd(R, "R")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", la.symmetrize(Q))
        object.__setattr__(self, "R", la.symmetrize(R))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def G(self) -> np.ndarray:
        """B R^{-1} B^T."""
        return la.symmetrize(self.B @ la.spd_solve(self.R, self.B.T))


class DAREProblem(_RiccatiData):
    """x(k+1) = A x(k) + B u(k) with stage cost x'Qx + u'Ru."""


class CAREProblem(_RiccatiData):
    """dx/dt = A x + B u with running cost x'Qx + u'Ru."""

    @classmethod
    def gamma_form(cls, A, gamma: float, B=None) -> "CAREProblem":
        """Q = gamma*I, R = gamma*I, B = I unless given."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        B = np.eye(n) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        return cls(A, B, gamma * np.eye(n), gamma * np.eye(B.shape[1]))


def dare_residual(P, p: DAREProblem) -> float:
    A, B, R = p.A, p.B, p.R
    PA = P @ A
    BtPA = B.T @ PA
    S = B.T @ P @ B + R
    res = A.T @ PA - P - BtPA.T @ la.spd_solve(la.symmetrize(S), BtPA) + p.Q
    return la.norm_inf(res)


def care_residual(P, p: CAREProblem) -> float:
    AtP = p.A.T @ P
    res = AtP + AtP.T - P @ p.G() @ P + p.Q
    return la.norm_inf(res)


def _relative(res: float, P: np.ndarray) -> float:
    return res / (1.0 + la.norm_inf(P))


def _doubling(Ak: np.ndarray, Gk: np.ndarray, Hk: np.ndarray, tol: float,
              max_iter: int) -> tuple[np.ndarray, int]:
    """Structure-preserving doubling on (A, G, H); returns lim H_k.

    With W = I + G_k H_k:
    A_{k+1} = A_k W^{-1} A_k, G_{k+1} = G_k + A_k W^{-1} G_k A_k^T,
    H_{k+1} = H_k + A_k^T H_k W^{-1} A_k.
    """
    n = Ak.shape[0]
    I = np.eye(n)
    it = 0
    for it in range(1, max_iter + 1):
        try:
            f = la.lu_factor(I + Gk @ Hk)
        except la.SingularMatrixError as exc:
            raise RiccatiError(f"doubling iterate singular at step {it}") from exc
        # divergence shows up as inf/nan and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            WA = la.lu_solve(f, Ak)
            WG = la.lu_solve(f, Gk)
            H_next = la.symmetrize(Hk + Ak.T @ Hk @ WA)
            Gk = la.symmetrize(Gk + Ak @ WG @ Ak.T)
            Ak = Ak @ WA
        step = la.norm_inf(H_next - Hk)
        Hk = H_next
        if not np.all(np.isfinite(Hk)):
            break
        if step <= 1e-3 * tol * (1.0 + la.norm_inf(Hk)) or la.norm_inf(Ak) == 0.0:
            break
    if not np.all(np.isfinite(Hk)):
        rep = SolveReport(it, math.inf, False, method="doubling")
        raise RiccatiError("doubling diverged; the pair is likely not stabilizable", rep)
    return Hk, it


def solve_dare(p: DAREProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
               closed_loop: bool = True) -> tuple[np.ndarray, SolveReport]:
    """Stabilizing DARE solution by structure-preserving doubling from
    (A, B R^{-1} B^T, Q); the H-iterates converge quadratically to P."""
    P, it = _doubling(p.A.copy(), p.G(), p.Q.copy(), tol, max_iter)
    res = _relative(dare_residual(P, p), P)
    converged = res <= tol
    rho = None
    if closed_loop:
        K = feedback_gain_discrete(P, p)
        rho = spectral_radius(p.A - p.B @ K).value
    rep = SolveReport(it, res, converged, rho, "doubling")
    if not converged:
        raise RiccatiError(f"DARE not solved in {max_iter} doubling steps (residual {res:.3e})", rep)
    return P, rep


def _sign_iteration(Z: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, int]:
    """Newton iteration for sign(Z) with determinant scaling."""
    N = Z.shape[0]
    for k in range(1, max_iter + 1):
        try:
            Zi, logdet = la.inv_and_logdet(Z)
        except la.SingularMatrixError as exc:
            raise SignIterationBreakdown(f"sign iterate singular at step {k}") from exc
        c = math.exp(logdet / N)
        Zn = 0.5 * (Z / c + c * Zi)
        delta = la.norm_inf(Zn - Z)
        Z = Zn
        if not np.all(np.isfinite(Z)):
            raise SignIterationBreakdown(f"sign iterate overflowed at step {k}")
        if delta <= tol * la.norm_inf(Z):
            return Z, k
    raise RiccatiError(f"sign iteration did not converge in {max_iter} steps")


def solve_lyapunov(F, C, tol: float = 1e-13, max_iter: int = 100) -> np.ndarray:
    """Solve ``F^T X + X F + C = 0`` for Hurwitz F by the sign iteration.

    Iterates E <- (E/c + c E^{-1})/2, C <- (C/c + c E^{-T} C E^{-1})/2 from
    (F, C); then X = C_inf / 2. Raises RiccatiError when F is not Hurwitz
    (the iteration then does not approach -I).
    """
    E = np.array(F, dtype=float)
    Ck = la.symmetrize(C)
    n = E.shape[0]
    I = np.eye(n)
    for _ in range(max_iter):
        try:
            Ei, logdet = la.inv_and_logdet(E)
        except la.SingularMatrixError as exc:
            raise SignIterationBreakdown("Lyapunov sign iterate singular") from exc
        c = math.exp(logdet / n)
        En = 0.5 * (E / c + c * Ei)
        Ck = la.symmetrize(0.5 * (Ck / c + c * (Ei.T @ Ck @ Ei)))
        delta = la.norm_inf(En - E)
        E = En
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(Ck))):
            break
        if delta <= tol * la.norm_inf(E):
            if la.norm_inf(E + I) > 1e-6:
                raise RiccatiError("Lyapunov operator is not Hurwitz")
            return 0.5 * Ck
    raise RiccatiError("Lyapunov sign iteration did not converge")


def _newton_kleinman(p: CAREProblem, P: np.ndarray, G: np.ndarray, tol: float,
                     max_iter: int) -> tuple[np.ndarray, int, float]:
    res = _relative(care_residual(P, p), P)
    steps = 0
    while res > tol and steps < max_iter:
        F = p.A - G @ P
        P_next = la.symmetrize(solve_lyapunov(F, p.Q + P @ G @ P))
        res_next = _relative(care_residual(P_next, p), P_next)
        steps += 1
        if not res_next < res:
            # round-off floor reached; keep the better iterate
            break
        P, res = P_next, res_next
    return P, steps, res


def _cayley_shifts(p: CAREProblem) -> tuple[float, ...]:
    g0 = max(float(np.max(np.abs(np.diag(p.A)))), la.norm_inf(p.A) / p.n, 1e-3)
    # a shift near an eigenvalue of A or of the Hamiltonian spoils the
    # transform; irrational factors make a repeat collision unlikely
    return g0, g0 * math.sqrt(2.0), g0 * math.pi


def _cayley_doubling(p: CAREProblem, G: np.ndarray, tol: float, max_iter: int,
                     g: float) -> tuple[np.ndarray, int]:
    """CARE -> DARE-type triple by a Cayley transform with shift g > 0, then doubling.

    With A_g = A - gI, V = A_g + G A_g^{-T} H and W = A_g^T + H A_g^{-1} G:
    A_0 = I + 2g V^{-1}, G_0 = 2g A_g^{-1} G W^{-1}, H_0 = 2g W^{-1} H A_g^{-1}.
    """
    I = np.eye(p.n)
    try:
        Ag_inv = la.inv(p.A - g * I)
        V = p.A - g * I + G @ Ag_inv.T @ p.Q
        W = p.A.T - g * I + p.Q @ Ag_inv @ G
        V_inv = la.inv(V)
        W_inv = la.inv(W)
    except la.SingularMatrixError as exc:
        raise RiccatiError(f"Cayley transform singular for shift {g:.3e}") from exc
    A0 = I + 2.0 * g * V_inv
    G0 = la.symmetrize(2.0 * g * Ag_inv @ G @ W_inv)
    H0 = la.symmetrize(2.0 * g * W_inv @ p.Q @ Ag_inv)
    return _doubling(A0, G0, H0, tol, max_iter)


def _sign_subspace(p: CAREProblem, G: np.ndarray, max_iter: int) -> tuple[np.ndarray, int]:
    n = p.n
    Z = np.block([[p.A, -G], [-p.Q, -p.A.T]])
    W, steps = _sign_iteration(Z, max_iter, 1e-12)
    I = np.eye(n)
    # [W12; W22 + I] P = -[W11 + I; W21], solved in the least-squares sense
    M = np.vstack([W[:n, n:], W[n:, n:] + I])
    N = -np.vstack([W[:n, :n] + I, W[n:, :n]])
    try:
        P = la.spd_solve(la.symmetrize(M.T @ M), M.T @ N)
    except la.NotPositiveDefiniteError as exc:
        raise SignIterationBreakdown("stable invariant subspace is rank deficient") from exc
    return la.symmetrize(P), steps


CARE_METHODS = ("sign", "doubling")


def solve_care(p: CAREProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
               newton_iter: int = DEFAULT_NEWTON_ITER, P0=None, method: str = "sign",
               closed_loop: bool = True) -> tuple[np.ndarray, SolveReport]:
    """Stabilizing CARE solution.

    Parameters
    ----------
    method : {"sign", "doubling"}
        "sign": scaled sign iteration on the Hamiltonian, then Newton-Kleinman.
        "doubling": Cayley transform plus doubling, with Newton-Kleinman
        polishing; further shifts and then "sign" are tried if the residual
        misses ``tol``. Doubling keeps tiny entries of P accurate
        componentwise, which matters for decay plots.
    P0 : array, optional
        Warm start for Newton-Kleinman. Used only when it converges to
        ``tol``; otherwise the cold path runs.
    """
    if method not in CARE_METHODS:
        raise ValueError(f"unknown CARE method {method!r}; expected one of {CARE_METHODS}")
    n = p.n
    G = p.G()
    notes: list[str] = []
    steps = 0
    nk = 0
    P = None
    res = math.inf
    if not np.any(p.Q):
        # zero state cost: u = 0 is optimal and the value matrix is 0, even
        # when the Hamiltonian has imaginary-axis eigenvalues
        P = np.zeros((n, n))
        res = _relative(care_residual(P, p), P)
        notes.append("Q = 0")
    elif P0 is not None:
        try:
            P, nk, res = _newton_kleinman(p, la.symmetrize(np.asarray(P0, dtype=float)), G, tol, newton_iter)
        except RiccatiError:
            P = None
        if P is None or res > tol:
            P, nk = None, 0
            notes.append("warm start rejected")
    if P is None and method == "doubling":
        for g in _cayley_shifts(p):
            try:
                P, steps = _cayley_doubling(p, G, tol, max_iter, g)
                P, nk, res = _newton_kleinman(p, P, G, tol, newton_iter)
            except RiccatiError:
                P, res = None, math.inf
            if res <= tol:
                break
            notes.append(f"shift {g:.3e} rejected")
            P = None
        if P is None:
            notes.append("fell back to sign iteration")
            method = "sign"
    if P is None:
        P, steps = _sign_subspace(p, G, max_iter)
        P, nk, res = _newton_kleinman(p, P, G, tol, newton_iter)
    converged = res <= tol
    alpha = None
    if closed_loop:
        alpha = spectral_abscissa(p.A - p.B @ feedback_gain_continuous(P, p)).value
    label = "sign+newton" if method == "sign" else "cayley-doubling"
    rep = SolveReport(steps, res, converged, alpha, label, nk, tuple(notes))
    if not converged:
        raise RiccatiError(f"CARE residual {res:.3e} above tolerance {tol:.1e}", rep)
    return P, rep


def feedback_gain_discrete(P, p: DAREProblem) -> np.ndarray:
    """K = (B'PB + R)^{-1} B'PA."""
    P = np.asarray(P, dtype=float)
    S = la.symmetrize(p.B.T @ P @ p.B + p.R)
    try:
        return la.spd_solve(S, p.B.T @ P @ p.A)
    except la.NotPositiveDefiniteError as exc:
        raise RiccatiError("B'PB + R is not positive definite; P is corrupted") from exc


def feedback_gain_continuous(P, p: CAREProblem) -> np.ndarray:
    """K = R^{-1} B'P."""
    return la.spd_solve(p.R, p.B.T @ np.asarray(P, dtype=float))


def _gershgorin(M: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(M), axis=1))) if M.size else 0.0


def _gelfand(M: np.ndarray, squarings: int = 12) -> float:
    """||M^k||^{1/k} with k = 2**squarings, rescaled at every squaring."""
    log_scale = 0.0
    X = M.copy()
    for i in range(squarings):
        nrm = la.norm_inf(X)
        if nrm == 0.0:
            return 0.0
        X = X / nrm
        log_scale += math.log(nrm) / 2 ** i
        X = X @ X
    nrm = la.norm_inf(X)
    if nrm == 0.0:
        return 0.0
    return math.exp(log_scale + math.log(nrm) / 2 ** squarings)


def _power(M: np.ndarray, tol: float, max_iter: int) -> tuple[float, bool]:
    n = M.shape[0]
    v = 1.0 + 0.5 * np.cos(np.arange(n) * 1.7)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0, True
        w /= nw
        # direction converged up to sign
        if abs(nw - lam) <= tol * nw and min(np.linalg.norm(w - v), np.linalg.norm(w + v)) <= math.sqrt(tol):
            return nw, True
        lam, v = nw, w
    return lam, False


def spectral_radius(M, tol: float = 1e-10, max_iter: int = 5000) -> SpectralEstimate:
    """Power-iteration estimate of the spectral radius.

    Falls back to power iteration on M^2 (dominant pair +-lambda), then to the
    Gelfand-formula estimate capped by the Gershgorin bound; the fallbacks are
    flagged as not converged.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("spectral radius needs a square matrix")
    if not np.any(M):
        return SpectralEstimate(0.0, True, "zero")
    lam, ok = _power(M, tol, max_iter)
    if ok:
        return SpectralEstimate(lam, True, "power")
    lam2, ok2 = _power(M @ M, tol, max_iter)
    if ok2:
        return SpectralEstimate(math.sqrt(lam2), True, "power-squared")
    est = min(_gelfand(M), _gershgorin(M))
    return SpectralEstimate(est, False, "gelfand")


def _expm(M: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring Taylor exponential; adequate for spectral estimates."""
    nrm = la.norm_inf(M)
    j = max(0, int(math.ceil(math.log2(nrm))) + 1) if nrm > 0 else 0
    X = M / 2 ** j
    E = np.eye(M.shape[0])
    T = np.eye(M.shape[0])
    for k in range(1, 19):
        T = T @ X / k
        E = E + T
    for _ in range(j):
        E = E @ E
    return E


def spectral_abscissa(F, tol: float = 1e-10) -> SpectralEstimate:
    """max Re(lambda) of F, read off as log rho(exp(tF)) / t with t = 1/||F||."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    nrm = la.norm_inf(F)
    if nrm == 0.0:
        return SpectralEstimate(0.0, True, "zero")
    t = 1.0 / nrm
    rho = spectral_radius(_expm(t * F), tol)
    return SpectralEstimate(math.log(rho.value) / t, rho.converged, "exp-" + rho.method)
