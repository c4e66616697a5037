"""
Graph generation, Metropolis weights and spectral diagnostics.
"""
import logging
from pathlib import Path
from typing import Union

import networkx as nx
import numpy as np

from simulator.exceptions import ParameterError
from simulator.seeding import derive_rng

from .models import Graph, MixingMatrix, WeightMatrix

logger = logging.getLogger(__name__)

# eigenvalues closer to zero than this count as the consensus null space
ZERO_EIG_TOL = 1e-10


def generate_graph(node_count: int, edge_count: int, seed: int) -> Graph:
    """
    Random spanning tree (uniform over labelled trees via a Pruefer sequence)
    plus extra edges sampled uniformly from the remaining pairs.
    """
    max_edges = node_count * (node_count - 1) // 2
    if node_count < 1 or not (node_count - 1 <= edge_count <= max_edges):
        raise ParameterError(
            f"cannot build a connected graph on {node_count} nodes with {edge_count} edges"
        )
    rng = derive_rng(seed, "graph", node_count, edge_count)

    if node_count == 1:
        tree = nx.empty_graph(1)
    elif node_count == 2:
        tree = nx.path_graph(2)
    else:
        prufer = [int(v) for v in rng.integers(0, node_count, size=node_count - 2)]
        tree = nx.from_prufer_sequence(prufer)

    edges = {(min(i, j), max(i, j)) for i, j in tree.edges()}
    candidates = sorted({(min(i, j), max(i, j)) for i, j in nx.non_edges(tree)})
    extra = edge_count - len(edges)
    if extra > 0:
        picks = rng.choice(len(candidates), size=extra, replace=False)
        edges.update(candidates[int(k)] for k in sorted(picks))

    graph = Graph(node_count=node_count, edges=frozenset(edges))
    logger.debug(f"Generated graph N={node_count} E={graph.edge_count} seed={seed}")
    return graph


def metropolis_weights(g: Graph) -> WeightMatrix:
    """
    p_ij = -1/(max(deg_i, deg_j) + 1) on edges, diagonal closes rows to zero.
    """
    N = g.node_count
    P = np.zeros((N, N))
    for i, j in g.sorted_edges():
        w = -1.0 / (max(g.degree(i), g.degree(j)) + 1.0)
        P[i, j] = w
        P[j, i] = w
    for i in range(N):
        P[i, i] = -sum(P[i, j] for j in g.neighbors(i))
    return WeightMatrix(graph=g, P=P)


def mixing_matrix(weights: WeightMatrix) -> MixingMatrix:
    return MixingMatrix(W=np.eye(weights.node_count) - weights.P)


def symmetric_eigenvalues(M: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    return np.linalg.eigvalsh(0.5 * (M + M.T))


def spectral_bounds(weights: WeightMatrix) -> tuple[float, float]:
    """
    Largest eigenvalue of P and its smallest nonzero one (0.0 for a single node).
    """
    eigs = symmetric_eigenvalues(weights.P)
    nonzero = eigs[np.abs(eigs) > ZERO_EIG_TOL]
    lambda_min_nonzero = float(nonzero.min()) if nonzero.size else 0.0
    return float(eigs[-1]), lambda_min_nonzero


# === Edge-list persistence ===
def format_edge_list(g: Graph) -> str:
    lines = [f"{g.node_count} {g.edge_count}"]
    lines += [f"{i} {j}" for i, j in g.sorted_edges()]
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str) -> Graph:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows or len(rows[0]) != 2:
        raise ParameterError("edge list must start with an 'N E' header")
    try:
        N, E = int(rows[0][0]), int(rows[0][1])
        edges = [(int(r[0]), int(r[1])) for r in rows[1:]]
    except (ValueError, IndexError) as e:
        raise ParameterError(f"malformed edge list: {e}") from e
    if len(edges) != E or any(len(r) != 2 for r in rows[1:]):
        raise ParameterError(f"edge list declares {E} edges but holds {len(edges)}")
    return Graph(node_count=N, edges=frozenset(edges))


def save_graph(g: Graph, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_edge_list(g), encoding="utf-8")
    return path


def load_graph(path: Union[str, Path]) -> Graph:
    return parse_edge_list(Path(path).read_text(encoding="utf-8"))
