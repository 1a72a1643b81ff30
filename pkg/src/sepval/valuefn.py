"""Separable approximation of a value function over graph neighborhoods.

For each block ``j`` the term ``psi_j`` takes the substates of the radius-``l``
neighborhood of ``j``, lifts them back into the full space, and measures the
change of V between zeroing the blocks before ``j`` and zeroing blocks up to
and including ``j``. Summing all terms plus V(0) telescopes to V(x) when every
neighborhood is the whole graph; otherwise the gap is controlled by the
localization residual computed in :func:`a1_residual`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .blockgraph import (
    UNREACHABLE,
    BlockStructure,
    InterconnectionGraph,
    Neighborhood,
    embed,
    neighborhood,
    project_tail,
)
from .rng import make_rng

# relative slack for comparisons that hold exactly in real arithmetic
ROUNDOFF = 1e-12


@dataclass(frozen=True)
class ValueOracle:
    """A value function V: R^n -> R given as a plain callable."""

    dim: int
    fn: Callable[[np.ndarray], float]
    time_mode: str = "continuous"
    discount: float = 0.0
    # optional vectorized form: (m, dim) array -> (m,) values
    batch: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.time_mode not in ("continuous", "discrete"):
            raise ValueError(f"time_mode must be 'continuous' or 'discrete', got {self.time_mode!r}")
        if self.discount < 0:
            raise ValueError("discount must be >= 0")

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"oracle expects shape ({self.dim},), got {x.shape}")
        return float(self.fn(x))

    def many(self, X) -> np.ndarray:
        """Values at each row of ``X``; uses ``batch`` when available."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"oracle expects shape (m, {self.dim}), got {X.shape}")
        if self.batch is not None:
            return np.asarray(self.batch(X), dtype=float).reshape(X.shape[0])
        return np.array([float(self.fn(x)) for x in X])


class _Memo:
    """Caches oracle values keyed on the exact bytes of the argument."""

    def __init__(self, V: ValueOracle):
        self.V = V
        self.cache: dict[bytes, float] = {}
        self.calls = 0

    def __call__(self, x: np.ndarray) -> float:
        key = np.ascontiguousarray(x, dtype=float).tobytes()
        val = self.cache.get(key)
        if val is None:
            self.calls += 1
            val = self.V(x)
            self.cache[key] = val
        return val

    def many(self, X: np.ndarray) -> np.ndarray:
        self.calls += len(X)
        return self.V.many(X)


def psi_term(V, blocks: BlockStructure, nb: Neighborhood, x_B) -> float:
    """psi_j(x_B) = V(zero blocks < j of H^T x_B) - V(zero blocks <= j of H^T x_B)."""
    y = embed(blocks, nb, x_B)
    j = nb.center
    return V(project_tail(blocks, j, y)) - V(project_tail(blocks, j + 1, y))


@dataclass
class SeparableTerm:
    nb: Neighborhood
    blocks: BlockStructure
    oracle: Callable[[np.ndarray], float] = field(repr=False)

    @property
    def j(self) -> int:
        return self.nb.center

    @property
    def l(self) -> int:
        return self.nb.radius

    def __post_init__(self):
        self._idx = self.blocks.indices(self.nb.members)
        sl = self.blocks.block_slice(self.nb.center)
        self._start, self._stop = sl.start, sl.stop

    def __call__(self, x_B) -> float:
        return psi_term(self.oracle, self.blocks, self.nb, x_B)

    def at_state(self, x) -> float:
        """psi_j(H_j x); same value as ``self(restrict(...))`` without the round trip."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.blocks.n,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.blocks.n},)")
        y = np.zeros(self.blocks.n)
        y[self._idx] = x[self._idx]
        y[:self._start] = 0.0
        z = y.copy()
        z[self._start:self._stop] = 0.0
        return self.oracle(y) - self.oracle(z)

    def at_states(self, X) -> np.ndarray:
        """at_state for every row of ``X`` through one batched oracle call per side."""
        X = np.asarray(X, dtype=float)
        Y = np.zeros_like(X)
        Y[:, self._idx] = X[:, self._idx]
        Y[:, :self._start] = 0.0
        Z = Y.copy()
        Z[:, self._start:self._stop] = 0.0
        return self.oracle.many(Y) - self.oracle.many(Z)


@dataclass
class SeparableApproximation:
    terms: list[SeparableTerm]
    v0: float
    l: int
    blocks: BlockStructure
    graph: InterconnectionGraph = field(repr=False)

    @property
    def d(self) -> int:
        """Largest term input dimension (the approximation is d-separable)."""
        return max(t.nb.sub_dim for t in self.terms)

    def __call__(self, x) -> float:
        return evaluate(self, x)


def assemble(V: ValueOracle, g: InterconnectionGraph, blocks: BlockStructure, l: int,
             memoize: bool = True) -> SeparableApproximation:
    if V.dim != blocks.n:
        raise ValueError(f"oracle dimension {V.dim} != state dimension {blocks.n}")
    if blocks.s != g.s:
        raise ValueError(f"{blocks.s} blocks for a graph with {g.s} nodes")
    oracle = _Memo(V) if memoize else V
    terms = [SeparableTerm(neighborhood(g, j, l, blocks), blocks, oracle) for j in range(g.s)]
    return SeparableApproximation(terms, oracle(np.zeros(blocks.n)), l, blocks, g)


def evaluate(approx: SeparableApproximation, x) -> float:
    """v0 + sum_j psi_j(H_j x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (approx.blocks.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({approx.blocks.n},)")
    total = approx.v0
    for t in approx.terms:
        total += t.at_state(x)
    return total


def evaluate_many(approx: SeparableApproximation, X) -> np.ndarray:
    """evaluate for each row of ``X``, batched per term.

    The oracle must expose ``many`` (ValueOracle does; pass ``batch`` to
    it for a vectorized V). Summation order matches :func:`evaluate`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != approx.blocks.n:
        raise ValueError(f"states have shape {X.shape}, expected (m, {approx.blocks.n})")
    total = np.full(X.shape[0], approx.v0)
    for t in approx.terms:
        total += t.at_states(X)
    return total


@dataclass(frozen=True)
class A1Residual:
    l: int
    per_block: np.ndarray
    per_sample: np.ndarray  # (samples, s)

    @property
    def max(self) -> float:
        return float(self.per_block.max())


def a1_residual(V: ValueOracle, g: InterconnectionGraph, blocks: BlockStructure, l: int,
                samples: Sequence, approx: SeparableApproximation | None = None) -> A1Residual:
    """Localization error |psi_j(H_j x) - V(Pi^{j-1} x) + V(Pi^j x)| per block.

    The overall maximum is the empirical decay value gamma_hat(l + 1).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0 or samples.size == 0:
        raise ValueError("a1_residual needs at least one sample")
    if approx is None:
        approx = assemble(V, g, blocks, l)
    oracle = approx.terms[0].oracle
    table = np.empty((samples.shape[0], blocks.s))
    for k, x in enumerate(samples):
        for t in approx.terms:
            j = t.j
            glob = oracle(project_tail(blocks, j, x)) - oracle(project_tail(blocks, j + 1, x))
            table[k, j] = abs(t.at_state(x) - glob)
    return A1Residual(l, table.max(axis=0), table)


@dataclass(frozen=True)
class BoundReport:
    error: float
    bound: float
    gamma_hat: float
    slack: float
    satisfied: bool


def theorem_bound_report(V: ValueOracle, approx: SeparableApproximation, gamma_hat: float,
                         samples: Sequence) -> BoundReport:
    """Compare max |V(x) - Psi(x)| over samples against (s - 1) * gamma_hat.

    The comparison carries a round-off slack of ``ROUNDOFF`` times the size of
    the values involved; the inequality itself is exact in real arithmetic.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    errs = []
    scale = abs(approx.v0)
    for x in samples:
        v = V(x)
        errs.append(abs(v - evaluate(approx, x)))
        scale = max(scale, abs(v), *(abs(t.at_state(x)) for t in approx.terms))
    error = max(errs) if errs else 0.0
    bound = (approx.blocks.s - 1) * gamma_hat
    slack = ROUNDOFF * (1.0 + scale) * approx.blocks.s
    return BoundReport(error, bound, gamma_hat, slack, error <= bound + slack)


def default_fd_step(x) -> float:
    return 1e-4 * max(1.0, float(np.max(np.abs(x))) if np.size(x) else 1.0)


def sensitivity_fd(V, blocks: BlockStructure, i: int, j: int, x, h: float | None = None) -> np.ndarray:
    """Central-difference gradient over block ``i`` of V(x) - V(x with block j zeroed)."""
    if i == j:
        raise ValueError("sensitivity needs distinct blocks i != j")
    x = np.asarray(x, dtype=float)
    if h is None:
        h = default_fd_step(x)
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    sj = blocks.block_slice(j)

    def vj(z):
        zj = z.copy()
        zj[sj] = 0.0
        return V(z) - V(zj)

    out = np.empty(blocks.dims[i])
    for k, c in enumerate(range(blocks.offsets[i], blocks.offsets[i] + blocks.dims[i])):
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        out[k] = (vj(xp) - vj(xm)) / (2.0 * h)
    return out


@dataclass(frozen=True)
class SensitivityProfile:
    records: tuple[tuple[int, int, int, float], ...]  # (i, j, dist(i, j), max |delta_ij|)
    h: float | None

    def by_distance(self) -> dict[int, float]:
        """Empirical decay bound: max |delta_ij| over pairs at each distance."""
        out: dict[int, float] = {}
        for _, _, d, v in self.records:
            out[d] = max(out.get(d, 0.0), v)
        return dict(sorted(out.items()))


def sensitivity_profile(V, g: InterconnectionGraph, blocks: BlockStructure, samples: Sequence,
                        h: float | None = None) -> SensitivityProfile:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ValueError("sensitivity_profile needs at least one sample")
    records = []
    for i in range(g.s):
        for j in range(g.s):
            if i == j or g.dist[i, j] == UNREACHABLE:
                continue
            worst = max(float(np.max(np.abs(sensitivity_fd(V, blocks, i, j, x, h)))) for x in samples)
            records.append((i, j, int(g.dist[i, j]), worst))
    return SensitivityProfile(tuple(records), h)


def _rd_alpha(dim: int) -> np.ndarray:
    # generalized golden ratio: positive root of phi^(dim+1) = phi + 1
    phi = 2.0
    for _ in range(60):
        phi = (1.0 + phi) ** (1.0 / (dim + 1))
    return (1.0 / phi) ** np.arange(1, dim + 1)


def lattice_points(count: int, dim: int, a: float = 1.0) -> np.ndarray:
    """Deterministic additive-recurrence lattice in [-a, a]^dim."""
    k = np.arange(1, count + 1)[:, None]
    u = np.mod(0.5 + k * _rd_alpha(dim)[None, :], 1.0)
    return a * (2.0 * u - 1.0)


def default_samples(blocks: BlockStructure, a: float = 1.0, count: int = 200) -> np.ndarray:
    """``count`` lattice points plus +-a on each single block (2s axis points)."""
    pts = [lattice_points(count, blocks.n, a)]
    for j in range(blocks.s):
        for sgn in (1.0, -1.0):
            x = np.zeros(blocks.n)
            x[blocks.block_slice(j)] = sgn * a
            pts.append(x[None, :])
    return np.vstack(pts)


def uniform_samples(count: int, dim: int, a: float = 1.0, seed: int = 0) -> np.ndarray:
    return make_rng(seed).uniform(-a, a, size=(count, dim))


@dataclass(frozen=True)
class TermDataset:
    X: np.ndarray
    psi: np.ndarray
    metadata: dict

    def to_csv(self) -> str:
        b = self.X.shape[1]
        header = ",".join([f"x_{k + 1}" for k in range(b)] + ["psi"])
        rows = [",".join(f"{v:.17g}" for v in (*x, p)) for x, p in zip(self.X, self.psi)]
        return "\n".join([header, *rows]) + "\n"

    def write(self, path) -> tuple[Path, Path]:
        path = Path(path)
        path.write_bytes(self.to_csv().encode())
        meta = path.with_suffix(path.suffix + ".meta.json")
        meta.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return path, meta


def export_term_dataset(V, blocks: BlockStructure, nb: Neighborhood, sampler: str = "uniform",
                        count: int = 100, a: float = 1.0, seed: int = 0) -> TermDataset:
    """Training pairs (x_B, psi_j(x_B)) for one term on [-a, a]^b.

    ``sampler="grid"`` uses ``count`` points per axis (a single point at the
    origin when count is 1); ``"uniform"`` draws ``count`` seeded points.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not a > 0:
        raise ValueError("box half-width a must be positive")
    b = nb.sub_dim
    if sampler == "grid":
        axis = np.linspace(-a, a, count) if count > 1 else np.zeros(1)
        X = np.stack(np.meshgrid(*([axis] * b), indexing="ij"), axis=-1).reshape(-1, b)
    elif sampler == "uniform":
        X = uniform_samples(count, b, a, seed)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    oracle = _Memo(V)
    psi = np.array([psi_term(oracle, blocks, nb, x) for x in X])
    meta = {
        "j": nb.center + 1,
        "l": nb.radius,
        "members": [m + 1 for m in nb.members],
        "sub_dim": b,
        "sampler": sampler,
        "count": count,
        "seed": seed,
        "a": a,
    }
    return TermDataset(X, psi, meta)
