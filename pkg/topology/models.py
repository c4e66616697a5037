from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np

from simulator.exceptions import ParameterError


@dataclass(frozen=True)
class Graph:
    """Undirected, connected communication graph over nodes 0..N-1."""

    node_count: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.node_count < 1:
            raise ParameterError(f"node_count must be positive, got {self.node_count}")
        normalized = set()
        for i, j in self.edges:
            if i == j:
                raise ParameterError(f"self-loop on node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ParameterError(f"edge ({i}, {j}) out of range for {self.node_count} nodes")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalized))
        if not nx.is_connected(self.to_networkx()):
            raise ParameterError("communication graph is not connected")

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.node_count))
        g.add_edges_from(self.edges)
        return g

    @cached_property
    def _neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._neighbors[i]

    def degree(self, i: int) -> int:
        return len(self._neighbors[i])

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True)
class WeightMatrix:
    """
    Symmetric Laplacian-like weight matrix P: negative on edges, zero off
    the graph, diagonal closing every row sum to zero.
    """

    graph: Graph
    P: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    def closed_neighborhood(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(self.graph.neighbors(i) + (i,)))


@dataclass(frozen=True)
class MixingMatrix:
    W: np.ndarray = field(repr=False)
