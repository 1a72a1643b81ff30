"""Semi-discrete Allen-Cahn equation under state-dependent Riccati feedback.

    y_t = sigma * y_xx + y (1 - y) + u  on [0, 1], homogeneous Neumann,

discretized on a cell-centered grid with ghost-cell reflection, written in
semilinear form y' = A(y) y + u with A(y) = sigma L + diag(1 - y), and
controlled by u = -P(y) y / gamma where P(y) solves the CARE with
Q = R = gamma I, gamma = 1/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import linalg as la
from . import riccati
from .lqr_models import DecayFit, DecaySeries, column_decay, exp_fit, truncate_banded


class SDREError(RuntimeError):
    pass


@dataclass(frozen=True)
class AllenCahnModel:
    s: int
    sigma: float
    dx: float
    L: np.ndarray = field(repr=False)
    gamma: float
    grid: np.ndarray = field(repr=False)


def neumann_laplacian(s: int, dx: float) -> np.ndarray:
    L = np.diag(-2.0 * np.ones(s)) + np.diag(np.ones(s - 1), 1) + np.diag(np.ones(s - 1), -1)
    L[0, 0] = L[-1, -1] = -1.0
    return L / dx ** 2


def discretize(s: int, sigma: float) -> AllenCahnModel:
    if s < 2:
        raise ValueError("Allen-Cahn grid needs s >= 2")
    if not sigma > 0:
        raise ValueError("viscosity sigma must be positive")
    dx = 1.0 / s
    grid = (np.arange(1, s + 1) - 0.5) * dx
    return AllenCahnModel(s, float(sigma), dx, neumann_laplacian(s, dx), 1.0 / s, grid)


def sine_profile(model: AllenCahnModel) -> np.ndarray:
    """y0_i = sin(pi x_i)."""
    return np.sin(np.pi * model.grid)


def _check_state(model: AllenCahnModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (model.s,):
        raise ValueError(f"state has shape {y.shape}, expected ({model.s},)")
    return y


def semilinear_A(model: AllenCahnModel, y) -> np.ndarray:
    y = _check_state(model, y)
    return model.sigma * model.L + np.diag(1.0 - y)


def rhs(model: AllenCahnModel, y, u=None) -> np.ndarray:
    """sigma L y + y (1 - y) + u."""
    y = _check_state(model, y)
    out = model.sigma * (model.L @ y) + y * (1.0 - y)
    return out if u is None else out + u


def sdre_problem(model: AllenCahnModel, y) -> riccati.CAREProblem:
    return riccati.CAREProblem.gamma_form(semilinear_A(model, y), model.gamma)


def sdre_solve_at(model: AllenCahnModel, y, tol: float = riccati.DEFAULT_TOL,
                  method: str = "doubling") -> tuple[np.ndarray, riccati.SolveReport]:
    y = _check_state(model, y)
    try:
        return riccati.solve_care(sdre_problem(model, y), tol=tol, method=method, closed_loop=False)
    except riccati.RiccatiError as exc:
        raise SDREError(f"SDRE solve failed at |y|_inf = {np.max(np.abs(y)):.6g}: {exc}") from exc


def sdre_feedback(model: AllenCahnModel, P, y) -> np.ndarray:
    """u = -B'P y / gamma with B = I."""
    return -(np.asarray(P) @ _check_state(model, y)) / model.gamma


@dataclass(frozen=True)
class SDREConfig:
    dt: float = 1e-2
    T: float = 10.0
    refresh: str = "threshold"  # or "every"
    threshold: float = 0.05
    refresh_every: int = 25
    care_tol: float = riccati.DEFAULT_TOL
    care_method: str = "doubling"
    band: int | None = None
    blowup: float = 1e6
    record_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.refresh not in ("threshold", "every"):
            raise ValueError(f"refresh must be 'threshold' or 'every', got {self.refresh!r}")
        if self.refresh_every < 1 or self.record_every < 1:
            raise ValueError("refresh_every and record_every must be >= 1")
        if self.band is not None and self.band < 0:
            raise ValueError("band must be >= 0")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def metadata(self) -> dict:
        return {
            "dt": self.dt, "T": self.T, "refresh": self.refresh, "threshold": self.threshold,
            "refresh_every": self.refresh_every, "care_tol": self.care_tol,
            "care_method": self.care_method, "blowup": self.blowup,
            "integrator": "semi-implicit Euler (diffusion implicit)",
            "quadrature": "left-endpoint",
        }


@dataclass
class TrajectoryReport:
    times: np.ndarray
    states: np.ndarray  # (records, s)
    controls: np.ndarray
    running_cost: np.ndarray  # gamma (y'y + u'u) at recorded times
    total_cost: float  # sum_k dt * gamma * (y_k'y_k + u_k'u_k)
    final_norm: float
    solve_count: int
    gamma: float
    status: str = "ok"  # "ok" | "blowup" | "care-failure"
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def unweighted_cost(self) -> float:
        """total_cost / gamma, i.e. the same integral without the gamma weight."""
        return self.total_cost / self.gamma

    def to_csv(self) -> str:
        s = self.states.shape[1]
        header = ",".join(["t", *(f"y_{i + 1}" for i in range(s)), "u_norm", "running_cost"])
        rows = []
        for t, y, u, c in zip(self.times, self.states, self.controls, self.running_cost):
            vals = [t, *y, float(np.linalg.norm(u)), c]
            rows.append(",".join(f"{v:.17g}" for v in vals))
        return "\n".join([header, *rows]) + "\n"


def simulate_closed_loop(model: AllenCahnModel, config: SDREConfig, y0,
                         band: int | None = None) -> TrajectoryReport:
    """Closed-loop run with (optionally banded) SDRE feedback.

    Each step solves (I - dt sigma L) y+ = y + dt (y (1 - y) + u). P(y) is
    recomputed when |y - y_ref|_inf > threshold |y_ref|_inf, after
    ``refresh_every`` steps, or every step in "every" mode. A ``band`` of
    None uses the full P; otherwise P is truncated to |i - j| <= band.
    """
    band = config.band if band is None else band
    y = _check_state(model, y0).copy()
    dt = config.dt
    step_lu = la.lu_factor(np.eye(model.s) - dt * model.sigma * model.L)
    gamma = model.gamma
    n_steps = config.steps
    times, states, controls, running = [], [], [], []
    total = 0.0
    solves = 0
    y_ref = None
    last = 0
    F = None
    status, message = "ok", ""
    k = 0
    for k in range(n_steps):
        if (F is None or config.refresh == "every" or k - last >= config.refresh_every
                or np.max(np.abs(y - y_ref)) > config.threshold * np.max(np.abs(y_ref))):
            try:
                P, _ = sdre_solve_at(model, y, config.care_tol, config.care_method)
            except SDREError as exc:
                status, message = "care-failure", str(exc)
                break
            solves += 1
            y_ref, last = y.copy(), k
            F = P if band is None else truncate_banded(P, band)
        u = sdre_feedback(model, F, y)
        c = gamma * (y @ y + u @ u)
        total += dt * c
        if k % config.record_every == 0:
            times.append(k * dt)
            states.append(y.copy())
            controls.append(u)
            running.append(c)
        y = la.lu_solve(step_lu, y + dt * (y * (1.0 - y) + u))
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > config.blowup:
            status, message = "blowup", f"|y|_inf exceeded {config.blowup:g} at t = {(k + 1) * dt:g}"
            break
    else:
        k = n_steps
    if status == "ok":
        times.append(n_steps * dt)
        states.append(y.copy())
        controls.append(np.zeros(model.s) if F is None else sdre_feedback(model, F, y))
        running.append(gamma * (y @ y + controls[-1] @ controls[-1]))
    return TrajectoryReport(
        np.array(times), np.array(states).reshape(len(states), model.s),
        np.array(controls).reshape(len(controls), model.s), np.array(running),
        total, float(np.max(np.abs(y))) if np.all(np.isfinite(y)) else math.inf,
        solves, gamma, status, message,
    )


@dataclass(frozen=True)
class FrozenDecay:
    sigma: float
    P: np.ndarray = field(repr=False)
    series: DecaySeries = field(repr=False)
    fit: DecayFit


def frozen_decay_study(s: int, sigmas: Sequence[float], y0=None, col: int = 0,
                       method: str = "doubling") -> list[FrozenDecay]:
    """|P(y0)[:, col]| and its exponential fit for each viscosity."""
    out = []
    for sigma in sigmas:
        model = discretize(s, sigma)
        y = sine_profile(model) if y0 is None else np.asarray(y0, dtype=float)
        P, _ = sdre_solve_at(model, y, method=method)
        series = column_decay(P, col)
        out.append(FrozenDecay(sigma, P, series, exp_fit(series)))
    return out


def sigma_label(sigma: float) -> str:
    """1e-4 style label."""
    mant, exp = f"{sigma:.6e}".split("e")
    mant = mant.rstrip("0").rstrip(".")
    return f"{mant}e{int(exp)}"


@dataclass
class CostErrorTable:
    bands: list[int]
    sigmas: list[float]
    errors: np.ndarray  # (bands, sigmas), |J_r - J_full| in the chosen units
    full_costs: list[float]
    banded_costs: np.ndarray
    statuses: list[list[str]]
    weight: str  # "gamma" or "unit"

    def column(self, sigma: float) -> np.ndarray:
        return self.errors[:, self.sigmas.index(sigma)]

    def to_csv(self) -> str:
        header = ",".join(["r", *(f"err_sigma_{sigma_label(sg)}" for sg in self.sigmas)])
        rows = [",".join([str(r), *(f"{e:.17g}" for e in self.errors[i])]) for i, r in enumerate(self.bands)]
        return "\n".join([header, *rows]) + "\n"


def cost_error_table(s: int, sigmas: Sequence[float], bands: Sequence[int],
                     config: SDREConfig | None = None, y0=None, weight: str = "unit",
                     full_runs: dict | None = None) -> CostErrorTable:
    """|J_r - J_full| for banded feedback, one column per viscosity.

    ``weight="gamma"`` reports the gamma-weighted functional; ``"unit"``
    drops the gamma factor (errors scale by s). A blown-up or failed banded run
    reports inf. ``full_runs`` receives the full-P trajectory per sigma.
    """
    if not sigmas or not bands:
        raise ValueError("need at least one sigma and one band")
    if weight not in ("gamma", "unit"):
        raise ValueError(f"weight must be 'gamma' or 'unit', got {weight!r}")
    config = config or SDREConfig()
    sigmas, bands = list(sigmas), list(bands)
    errors = np.zeros((len(bands), len(sigmas)))
    banded = np.zeros_like(errors)
    statuses = [["" for _ in sigmas] for _ in bands]
    fulls = []
    for c, sigma in enumerate(sigmas):
        model = discretize(s, sigma)
        y = sine_profile(model) if y0 is None else np.asarray(y0, dtype=float)
        full = simulate_closed_loop(model, replace(config, band=None), y)
        if not full.ok:
            raise SDREError(f"full-P run failed for sigma={sigma:g}: {full.message}")
        if full_runs is not None:
            full_runs[sigma] = full
        scale = 1.0 if weight == "gamma" else 1.0 / model.gamma
        fulls.append(full.total_cost * scale)
        for r_i, r in enumerate(bands):
            run = simulate_closed_loop(model, config, y, band=r)
            statuses[r_i][c] = run.status
            if run.ok:
                banded[r_i, c] = run.total_cost * scale
                errors[r_i, c] = abs(banded[r_i, c] - fulls[-1])
            else:
                banded[r_i, c] = errors[r_i, c] = math.inf
    return CostErrorTable(bands, sigmas, errors, fulls, banded, statuses, weight)
