"""Communication graphs and their weighted Laplacians.

Every edge carries two positive weights: ``a`` drives the proportional
(P) consensus term and ``b`` the integral (I) term of PI consensus.
Agent ids are 0-based here; scenario files use 1-based ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np


class GraphError(ValueError):
    """Base class for invalid graph definitions."""


class DisconnectedGraph(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class NonpositiveWeight(GraphError):
    pass


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected connected graph with P- and I-family edge weights.

    Edges are stored once, canonically as ``(i, j)`` with ``i < j`` and in
    sorted order, so ``a[k]`` and ``b[k]`` belong to ``edges[k]``.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    a: tuple[float, ...]
    b: tuple[float, ...]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> list[int]:
        out = []
        for lo, hi in self.edges:
            if lo == i:
                out.append(hi)
            elif hi == i:
                out.append(lo)
        return sorted(out)

    def weight(self, i: int, j: int, kind: Literal["P", "I"] = "P") -> float:
        key = (min(i, j), max(i, j))
        try:
            k = self.edges.index(key)
        except ValueError:
            return 0.0
        return (self.a if kind == "P" else self.b)[k]

    def adjacency(self, kind: Literal["P", "I"] = "P") -> np.ndarray:
        w = self.a if kind == "P" else self.b
        A = np.zeros((self.n, self.n))
        for (i, j), wij in zip(self.edges, w):
            A[i, j] = A[j, i] = wij
        return A

    def scaled(self, factor: float) -> "NetworkGraph":
        """Same topology with every weight multiplied by ``factor``."""
        return NetworkGraph(
            self.n,
            self.edges,
            tuple(factor * w for w in self.a),
            tuple(factor * w for w in self.b),
        )


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def build_graph(n: int, edges: Iterable[Sequence[float]]) -> NetworkGraph:
    """Validate an edge list ``[(i, j, a_ij, b_ij), ...]`` and build the graph.

    Raises
    ------
    SelfLoop, DuplicateEdge, NonpositiveWeight, DisconnectedGraph
    """
    if n < 1:
        raise GraphError(f"agent count must be positive, got {n}")
    table: dict[tuple[int, int], tuple[float, float]] = {}
    for item in edges:
        i, j, a, b = item
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) references an agent outside 0..{n - 1}")
        if i == j:
            raise SelfLoop(f"self-loop at agent {i}")
        key = (min(i, j), max(i, j))
        if key in table:
            raise DuplicateEdge(f"edge {key} listed twice")
        if not (a > 0 and b > 0):
            raise NonpositiveWeight(f"edge {key} has weights a={a}, b={b}; both must be > 0")
        table[key] = (float(a), float(b))

    parent = list(range(n))
    for i, j in table:
        ri, rj = _find(parent, i), _find(parent, j)
        if ri != rj:
            parent[ri] = rj
    roots = {_find(parent, i) for i in range(n)}
    if len(roots) > 1:
        raise DisconnectedGraph(f"graph has {len(roots)} connected components")

    keys = sorted(table)
    return NetworkGraph(
        n=n,
        edges=tuple(keys),
        a=tuple(table[k][0] for k in keys),
        b=tuple(table[k][1] for k in keys),
    )


def ring_graph(n: int, a: float = 1.0, b: float = 1.0) -> NetworkGraph:
    if n <= 2:
        return path_graph(n, a, b)
    return build_graph(n, [(i, (i + 1) % n, a, b) for i in range(n)])


def path_graph(n: int, a: float = 1.0, b: float = 1.0) -> NetworkGraph:
    return build_graph(n, [(i, i + 1, a, b) for i in range(n - 1)])


def complete_graph(n: int, a: float = 1.0, b: float = 1.0) -> NetworkGraph:
    return build_graph(n, [(i, j, a, b) for i in range(n) for j in range(i + 1, n)])


PRESETS = {"ring": ring_graph, "path": path_graph, "complete": complete_graph}


def laplacian(g: NetworkGraph, kind: Literal["P", "I"] = "P") -> np.ndarray:
    """Weighted Laplacian ``D - A`` for the ``a`` (P) or ``b`` (I) weights."""
    if kind not in ("P", "I"):
        raise ValueError(f"kind must be 'P' or 'I', got {kind!r}")
    A = g.adjacency(kind)
    return np.diag(A.sum(axis=1)) - A


def kron_lift(L: np.ndarray, N: int) -> np.ndarray:
    """``L ⊗ I_N``: acts on agent-major stacked vectors of length ``n*N``."""
    if N < 1:
        raise ValueError("dimension N must be >= 1")
    return np.kron(L, np.eye(N))


def algebraic_connectivity(L: np.ndarray) -> float:
    """Second-smallest eigenvalue of a Laplacian (0 for a single agent)."""
    ev = np.linalg.eigvalsh(L)
    return float(ev[1]) if len(ev) > 1 else 0.0
