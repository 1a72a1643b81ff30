"""LQR test problems, quadratic value functions and their graph truncations,
and exponential decay fitting of Riccati solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import riccati
from .blockgraph import (
    BlockStructure,
    InterconnectionGraph,
    build_graph,
)
from .rng import make_rng
from .valuefn import ValueOracle, assemble, evaluate_many

UNDERFLOW = 1e-300


def _block(M: np.ndarray, rows: BlockStructure, cols: BlockStructure, i: int, j: int) -> np.ndarray:
    return M[rows.block_slice(i), cols.block_slice(j)]


def induce_graph(blocks: BlockStructure, A, B=None, Q=None, R=None,
                 control_blocks: BlockStructure | None = None, threshold: float = 0.0) -> InterconnectionGraph:
    """Interconnection graph read off block sparsity.

    Edge (i, j) when block i enters the dynamics of block j (A[j, i] or, with
    control blocks, B[j, i] nonzero). Cost couplings Q[i, j] and R[i, j]
    add edges in both directions.
    """
    A = np.asarray(A, dtype=float)
    s = blocks.s
    cb = control_blocks
    edges = set()

    def nz(M):
        return bool(np.any(np.abs(M) > threshold))

    for i in range(s):
        for j in range(s):
            if i == j:
                continue
            if nz(_block(A, blocks, blocks, j, i)):
                edges.add((i, j))
            if Q is not None and nz(_block(np.asarray(Q), blocks, blocks, i, j)):
                edges |= {(i, j), (j, i)}
            if cb is not None:
                if B is not None and nz(_block(np.asarray(B), blocks, cb, j, i)):
                    edges.add((i, j))
                if R is not None and nz(_block(np.asarray(R), cb, cb, i, j)):
                    edges |= {(i, j), (j, i)}
    return build_graph(s, edges)


@dataclass(frozen=True)
class QuadraticValue:
    """V(x) = x'Px with block structure."""

    P: np.ndarray
    blocks: BlockStructure

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.shape != (self.blocks.n, self.blocks.n):
            raise ValueError(f"P has shape {P.shape}, expected {self.blocks.n}x{self.blocks.n}")
        object.__setattr__(self, "P", P)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    def many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.einsum("ij,jk,ik->i", X, self.P, X)

    def oracle(self, time_mode: str = "discrete") -> ValueOracle:
        return ValueOracle(self.blocks.n, self, time_mode, batch=self.many)


@dataclass(frozen=True)
class LQRProblem:
    problem: riccati.DAREProblem | riccati.CAREProblem
    blocks: BlockStructure
    graph: InterconnectionGraph
    control_blocks: BlockStructure

    @property
    def time_mode(self) -> str:
        return "discrete" if isinstance(self.problem, riccati.DAREProblem) else "continuous"

    def solve(self, **kw) -> tuple[np.ndarray, riccati.SolveReport]:
        if self.time_mode == "discrete":
            return riccati.solve_dare(self.problem, **kw)
        return riccati.solve_care(self.problem, **kw)

    def value(self, **kw) -> QuadraticValue:
        P, _ = self.solve(**kw)
        return QuadraticValue(P, self.blocks)

    def structure_violations(self) -> list[tuple[str, int, int]]:
        """Blocks that should vanish for dist(i, j) > 1 but do not."""
        out = []
        p, bl, cb = self.problem, self.blocks, self.control_blocks
        d = self.graph.dist
        for i in range(bl.s):
            for j in range(bl.s):
                if d[i, j] <= 1 or d[j, i] <= 1:
                    continue
                for name, M, rb, cbk in (("A", p.A, bl, bl), ("B", p.B, bl, cb), ("Q", p.Q, bl, bl), ("R", p.R, cb, cb)):
                    if np.any(_block(M, rb, cbk, i, j)):
                        out.append((name, i, j))
        return out


def truncate_banded(M, r: int) -> np.ndarray:
    """Keep entries with |i - j| <= r, zero the rest."""
    M = np.asarray(M, dtype=float)
    if r < 0:
        raise ValueError("bandwidth must be >= 0")
    i, j = np.indices(M.shape)
    return np.where(np.abs(i - j) <= r, M, 0.0)


def truncate_P_graph(P, g: InterconnectionGraph, blocks: BlockStructure, l: int) -> np.ndarray:
    """Keep block (i, j) iff dist(i, j) <= l."""
    P = np.asarray(P, dtype=float)
    if P.shape != (blocks.n, blocks.n) or blocks.s != g.s:
        raise ValueError("P, blocks and graph do not conform")
    keep_blocks = g.dist <= l
    owner = np.repeat(np.arange(blocks.s), blocks.dims)
    return np.where(keep_blocks[np.ix_(owner, owner)], P, 0.0)


def lemma2_check(P, g: InterconnectionGraph, blocks: BlockStructure, l: int, samples) -> float:
    """max over samples of |sum_j psi_j(H_j x) - x'P^l x|, computed through the
    generic separable construction (not through the closed form)."""
    V = QuadraticValue(P, blocks)
    # fresh random samples share no projected arguments, so skip the memo
    approx = assemble(V.oracle(), g, blocks, l, memoize=False)
    Pl = truncate_P_graph(V.P, g, blocks, l)
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    sep = evaluate_many(approx, X) - approx.v0
    return float(np.max(np.abs(sep - np.einsum("ij,jk,ik->i", X, Pl, X))))


def heat_model(s: int, c: float = 1.0, dx: float = 1.0) -> LQRProblem:
    """Semi-discrete heat equation with distributed control, B = Q = R = I."""
    if s < 2:
        raise ValueError("heat model needs s >= 2")
    if not (c > 0 and dx > 0):
        raise ValueError("c and dx must be positive")
    T = np.diag(-2.0 * np.ones(s)) + np.diag(np.ones(s - 1), 1) + np.diag(np.ones(s - 1), -1)
    A = (c / dx ** 2) * T
    I = np.eye(s)
    blocks = BlockStructure.scalar(s)
    return LQRProblem(riccati.CAREProblem(A, I, I, I), blocks, induce_graph(blocks, A), blocks)


def uniform_matrix(s: int, seed: int) -> np.ndarray:
    return make_rng(seed).random((s, s))


def random_lqr(s: int, seed: int, band_r: int) -> LQRProblem:
    """Discrete LQR with A the r-banded part of a seeded uniform(0,1) matrix."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if not 0 <= band_r <= max(s - 1, 0):
        raise ValueError(f"band_r must lie in [0, {s - 1}]")
    A = truncate_banded(uniform_matrix(s, seed), band_r)
    I = np.eye(s)
    blocks = BlockStructure.scalar(s)
    return LQRProblem(riccati.DAREProblem(A, I, I, I), blocks, induce_graph(blocks, A), blocks)


@dataclass(frozen=True)
class DecaySeries:
    index: np.ndarray  # 1-based
    value: np.ndarray

    def to_csv(self) -> str:
        rows = [f"{i},{v:.17g}" for i, v in zip(self.index, self.value)]
        return "\n".join(["index,value", *rows]) + "\n"


def column_decay(P, col: int = 0) -> DecaySeries:
    """|P[:, col]| with 1-based row indices."""
    P = np.asarray(P, dtype=float)
    if not 0 <= col < P.shape[1]:
        raise IndexError(f"column {col} out of range")
    return DecaySeries(np.arange(1, P.shape[0] + 1), np.abs(P[:, col]))


@dataclass(frozen=True)
class DecayFit:
    A_fit: float
    B_fit: float
    residual: float  # sum of squared log-residuals
    count: int
    dropped: int

    @property
    def decays(self) -> bool:
        return self.B_fit < 0

    def __call__(self, j):
        return self.A_fit * np.exp(self.B_fit * np.asarray(j, dtype=float))


def exp_fit(series: DecaySeries | Sequence[tuple[float, float]]) -> DecayFit:
    """Least squares of log y on j for f(j) = A exp(B j); drops y <= 1e-300."""
    if isinstance(series, DecaySeries):
        j, y = series.index.astype(float), series.value
    else:
        arr = np.asarray(series, dtype=float)
        j, y = arr[:, 0], arr[:, 1]
    keep = y > UNDERFLOW
    j, ly = j[keep], np.log(y[keep])
    if j.size < 2:
        raise ValueError(f"exponential fit needs >= 2 positive points, got {j.size}")
    jm, lm = j.mean(), ly.mean()
    sxx = float(np.sum((j - jm) ** 2))
    if sxx == 0.0:
        raise ValueError("exponential fit needs at least two distinct indices")
    slope = float(np.sum((j - jm) * (ly - lm)) / sxx)
    intercept = lm - slope * jm
    resid = float(np.sum((ly - intercept - slope * j) ** 2))
    return DecayFit(math.exp(intercept), slope, resid, int(j.size), int((~keep).sum()))


def fits_to_csv(rows: Sequence[tuple[int, DecayFit]], key: str = "r") -> str:
    lines = [f"{key},A_fit,B_fit,residual"]
    lines += [f"{k},{f.A_fit:.17g},{f.B_fit:.17g},{f.residual:.17g}" for k, f in rows]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BandDecay:
    r: int
    P: np.ndarray
    series: DecaySeries
    fit: DecayFit
    report: riccati.SolveReport


def random_lqr_decay(s: int, bands: Sequence[int], seed: int, col: int = 0) -> list[BandDecay]:
    """Solve the banded random LQR for each bandwidth and fit the column decay.

    All bandwidths share one underlying uniform matrix.
    """
    out = []
    for r in bands:
        prob = random_lqr(s, seed, r)
        P, rep = prob.solve()
        series = column_decay(P, col)
        out.append(BandDecay(r, P, series, exp_fit(series), rep))
    return out
