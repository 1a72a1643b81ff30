"""Block-structured state bookkeeping and graph-distance neighborhoods.

Nodes and blocks are 0-based in the Python API. The edge-list file format is
1-based, matching how networks are usually written down.

An edge ``(i, j)`` means node ``i`` influences node ``j``; ``dist[i, j]`` is
the length of the shortest directed path from ``i`` to ``j``, and the
neighborhood of ``j`` with radius ``l`` collects every ``i`` with
``dist[i, j] <= l``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

UNREACHABLE = np.iinfo(np.int64).max


@dataclass(frozen=True)
class BlockStructure:
    """Partition of R^n into s consecutive blocks of sizes ``dims``."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("need at least one block")
        if any(d < 1 for d in dims):
            raise ValueError(f"block sizes must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def scalar(cls, s: int) -> "BlockStructure":
        return cls((1,) * s)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.dims)[:-1]]))

    @property
    def s(self) -> int:
        return len(self.dims)

    @cached_property
    def n(self) -> int:
        return sum(self.dims)

    def block_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.dims[i])

    def indices(self, members: Iterable[int]) -> np.ndarray:
        """State coordinates of the given blocks, in the order given (read-only)."""
        return _block_indices(self.dims, self.offsets, tuple(int(i) for i in members))

    def sub_dim(self, members: Iterable[int]) -> int:
        return sum(self.dims[i] for i in members)


@lru_cache(maxsize=4096)
def _block_indices(dims: tuple, offsets: tuple, members: tuple) -> np.ndarray:
    parts = [np.arange(offsets[i], offsets[i] + dims[i]) for i in members]
    idx = np.concatenate(parts) if parts else np.zeros(0, dtype=int)
    idx.setflags(write=False)
    return idx


@dataclass(frozen=True, eq=False)
class InterconnectionGraph:
    """Directed graph on ``s`` nodes with a precomputed distance table."""

    s: int
    edges: frozenset
    dist: np.ndarray = field(repr=False)

    @property
    def diameter(self) -> int:
        finite = self.dist[self.dist != UNREACHABLE]
        return int(finite.max()) if finite.size else 0

    @property
    def is_symmetric(self) -> bool:
        return all((j, i) in self.edges for i, j in self.edges)

    def transpose(self) -> "InterconnectionGraph":
        return build_graph(self.s, [(j, i) for i, j in self.edges])

    def reachable(self, i: int, j: int) -> bool:
        return self.dist[i, j] != UNREACHABLE


def _bfs_distances(s: int, succ: list[list[int]], src: int) -> np.ndarray:
    d = np.full(s, UNREACHABLE, dtype=np.int64)
    d[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in succ[u]:
            if d[v] == UNREACHABLE:
                d[v] = d[u] + 1
                queue.append(v)
    return d


def build_graph(s: int, edges: Iterable[tuple[int, int]]) -> InterconnectionGraph:
    """Graph from 0-based directed edges; distances by one BFS per node."""
    if s < 1:
        raise ValueError("graph needs at least one node")
    edge_set = set()
    for e in edges:
        i, j = (int(v) for v in e)
        if not (0 <= i < s and 0 <= j < s):
            raise ValueError(f"edge {e} out of range for {s} nodes")
        if i != j:
            edge_set.add((i, j))
    succ: list[list[int]] = [[] for _ in range(s)]
    for i, j in sorted(edge_set):
        succ[i].append(j)
    dist = np.vstack([_bfs_distances(s, succ, i) for i in range(s)])
    dist.setflags(write=False)
    return InterconnectionGraph(s, frozenset(edge_set), dist)


def _undirected(pairs: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    for i, j in pairs:
        out += [(i, j), (j, i)]
    return out


def path_graph(s: int) -> InterconnectionGraph:
    return build_graph(s, _undirected((i, i + 1) for i in range(s - 1)))


def cycle_graph(s: int) -> InterconnectionGraph:
    pairs = [(i, (i + 1) % s) for i in range(s)] if s > 2 else [(i, i + 1) for i in range(s - 1)]
    return build_graph(s, _undirected(pairs))


def grid_graph(rows: int, cols: int) -> InterconnectionGraph:
    """4-neighbor grid, nodes numbered row-major."""
    pairs = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                pairs.append((k, k + 1))
            if r + 1 < rows:
                pairs.append((k, k + cols))
    return build_graph(rows * cols, _undirected(pairs))


def star_graph(s: int, center: int = 0) -> InterconnectionGraph:
    return build_graph(s, _undirected((center, i) for i in range(s) if i != center))


def banded_graph(s: int, r: int) -> InterconnectionGraph:
    """Sequential graph linking nodes with |i - j| <= r."""
    return build_graph(s, _undirected((i, j) for i in range(s) for j in range(i + 1, min(i + r + 1, s))))


def read_edge_list(path, s: int | None = None) -> InterconnectionGraph:
    """Parse an ``i j`` per line file with 1-based node indices.

    Blank lines and ``#`` comments are skipped. ``s`` defaults to the
    largest index seen.
    """
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-integer node index in {raw!r}") from exc
        if i < 1 or j < 1:
            raise ValueError(f"{path}:{lineno}: node indices are 1-based, got {raw!r}")
        edges.append((i - 1, j - 1))
    if s is None:
        s = max((max(e) for e in edges), default=0) + 1
    return build_graph(s, edges)


def write_edge_list(path, g: InterconnectionGraph) -> None:
    Path(path).write_text("".join(f"{i + 1} {j + 1}\n" for i, j in sorted(g.edges)))


@dataclass(frozen=True)
class Neighborhood:
    center: int
    radius: int
    members: tuple[int, ...]
    sub_dim: int


def neighborhood(g: InterconnectionGraph, j: int, l: int,
                 blocks: BlockStructure | None = None) -> Neighborhood:
    """Nodes from which ``j`` is reachable within ``l`` steps, ascending.

    ``sub_dim`` counts state coordinates when ``blocks`` is given, members
    otherwise.
    """
    if not 0 <= j < g.s:
        raise IndexError(f"node {j} out of range for {g.s} nodes")
    if l < 0:
        raise ValueError(f"radius must be >= 0, got {l}")
    if blocks is not None and blocks.s != g.s:
        raise ValueError(f"{blocks.s} blocks for a graph with {g.s} nodes")
    members = tuple(int(i) for i in np.flatnonzero(g.dist[:, j] <= l))
    sub_dim = blocks.sub_dim(members) if blocks is not None else len(members)
    return Neighborhood(j, int(l), members, sub_dim)


def _check_len(x: np.ndarray, n: int, what: str) -> None:
    if x.shape != (n,):
        raise ValueError(f"{what} has shape {x.shape}, expected ({n},)")


def restrict(blocks: BlockStructure, nb: Neighborhood, x) -> np.ndarray:
    """H x: the member blocks of x, concatenated in ascending block order."""
    x = np.asarray(x, dtype=float)
    _check_len(x, blocks.n, "state")
    return x[blocks.indices(nb.members)]


def embed(blocks: BlockStructure, nb: Neighborhood, x_B) -> np.ndarray:
    """H^T x_B: member blocks filled from ``x_B``, zeros elsewhere."""
    x_B = np.asarray(x_B, dtype=float)
    idx = blocks.indices(nb.members)
    _check_len(x_B, idx.size, "neighborhood vector")
    out = np.zeros(blocks.n)
    out[idx] = x_B
    return out


def project_tail(blocks: BlockStructure, j: int, x) -> np.ndarray:
    """Zero the first ``j`` blocks (0 <= j <= s); j = 0 is the identity."""
    if not 0 <= j <= blocks.s:
        raise IndexError(f"cutoff {j} out of range 0..{blocks.s}")
    x = np.asarray(x, dtype=float)
    _check_len(x, blocks.n, "state")
    out = x.copy()
    if j > 0:
        out[:blocks.offsets[j - 1] + blocks.dims[j - 1]] = 0.0
    return out


def selection_matrix(blocks: BlockStructure, nb: Neighborhood) -> np.ndarray:
    """Dense H (b x n). For tests and debugging only."""
    idx = blocks.indices(nb.members)
    H = np.zeros((idx.size, blocks.n))
    H[np.arange(idx.size), idx] = 1.0
    return H


def tail_projector(blocks: BlockStructure, j: int) -> np.ndarray:
    """Dense block-diagonal projector zeroing the first ``j`` blocks."""
    return np.diag(project_tail(blocks, j, np.ones(blocks.n)))

