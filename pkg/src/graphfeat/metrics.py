"""Edgewise alignment scores between graph structure and node features.

All three scores are written as reductions over fixed-size chunks of the
edge (or node) list. Chunks may be evaluated on a thread pool; partial sums
are always combined in chunk order, so the result does not depend on the
number of threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .graph import FeatureMatrix, Graph

DEFAULT_CHUNK = 1 << 16
# centered spread below this fraction of the raw endpoint energy counts as zero
RELATIVE_SPREAD_FLOOR = 1e-20


@dataclass(frozen=True)
class HomophilyResult:
    h_f: float | None
    edge_mean: np.ndarray
    defined: bool

    @property
    def clamped(self) -> float | None:
        if not self.defined:
            return None
        return float(min(1.0, max(-1.0, self.h_f)))


@dataclass(frozen=True)
class SmoothnessResult:
    lambda_f: float


@dataclass(frozen=True)
class CosineResult:
    mean_cosine: float
    zero_norm_edges: int

    def __float__(self):
        return self.mean_cosine


def _as_array(graph: Graph, features) -> np.ndarray:
    x = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    if x.ndim != 2 or x.shape[0] != graph.node_count:
        raise InputError(
            f"feature rows ({x.shape[0] if x.ndim else 0}) do not match graph nodes ({graph.node_count})")
    if x.shape[1] < 1:
        raise InputError("feature dimension must be >= 1")
    return np.asarray(x, dtype=np.float64)


def _chunked(n: int, fn, threads: int, chunk: int):
    """Evaluate ``fn(start, stop)`` over ``[0, n)`` and sum results in order."""
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    else:
        parts = [fn(*b) for b in bounds]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def _require_edges(graph: Graph) -> np.ndarray:
    if graph.edge_count < 1:
        raise InputError("graph has no edges")
    return graph.edges()


def feature_homophily(graph: Graph, features, threads: int = 1,
                      chunk: int = DEFAULT_CHUNK) -> HomophilyResult:
    """Centered edgewise feature correlation in ``[-1, 1]``.

    The edge mean is taken over both endpoints of every undirected edge.
    Each undirected edge then enters the correlation in both orientations,
    so the score does not depend on how edges are stored.

    Returns ``defined=False`` when the centered features have (numerically)
    zero spread over the edge endpoints.
    """
    x = _as_array(graph, features)
    edges = _require_edges(graph)
    m = len(edges)
    u, v = edges[:, 0], edges[:, 1]

    total = _chunked(m, lambda a, b: x[u[a:b]].sum(0) + x[v[a:b]].sum(0), threads, chunk)
    mean = total / (2 * m)

    def centered(a, b):
        cu = x[u[a:b]] - mean
        cv = x[v[a:b]] - mean
        cross = np.einsum("ij,ij->", cu, cv)
        sq = np.einsum("ij,ij->", cu, cu) + np.einsum("ij,ij->", cv, cv)
        raw = np.einsum("ij,ij->", x[u[a:b]], x[u[a:b]]) + np.einsum("ij,ij->", x[v[a:b]], x[v[a:b]])
        return np.array([2.0 * cross, sq, raw])

    num, side, raw = _chunked(m, centered, threads, chunk)
    # both orientation sides carry the same sum of squares; the floor is
    # relative so that rescaling features never changes definedness
    if side <= RELATIVE_SPREAD_FLOOR * raw:
        return HomophilyResult(None, mean, False)
    return HomophilyResult(float(num / np.sqrt(side * side)), mean, True)


def feature_smoothness(graph: Graph, features, threads: int = 1,
                       chunk: int = DEFAULT_CHUNK) -> SmoothnessResult:
    """Sum over nodes of squared neighbor difference sums, per edge and dim.

    For every node the vector ``sum_{u in N(v)} (x_v - x_u)`` is squared
    elementwise; these are summed over nodes, the L1 norm collapses the
    dimensions, and the total is divided by ``|E| * d``.
    """
    x = _as_array(graph, features)
    if graph.edge_count < 1:
        raise InputError("graph has no edges")
    adj = graph.adjacency()
    deg = graph.degrees.astype(np.float64)

    def part(a, b):
        diff = deg[a:b, None] * x[a:b] - adj[a:b] @ x
        return np.einsum("ij,ij->", diff, diff)

    total = _chunked(graph.node_count, part, threads, max(1, chunk // 16))
    return SmoothnessResult(float(total / (graph.edge_count * x.shape[1])))


def mean_edge_cosine(graph: Graph, features, threads: int = 1,
                     chunk: int = DEFAULT_CHUNK) -> CosineResult:
    """Average cosine similarity of endpoint features over undirected edges.

    Edges touching a zero-norm feature row contribute 0 and are tallied.
    """
    x = _as_array(graph, features)
    edges = _require_edges(graph)
    norms = np.linalg.norm(x, axis=1)
    u, v = edges[:, 0], edges[:, 1]

    def part(a, b):
        nu, nv = norms[u[a:b]], norms[v[a:b]]
        dots = np.einsum("ij,ij->i", x[u[a:b]], x[v[a:b]])
        zero = (nu == 0) | (nv == 0)
        cos = np.divide(dots, nu * nv, out=np.zeros_like(dots), where=~zero)
        return np.array([cos.sum(), zero.sum()])

    s, zeros = _chunked(len(edges), part, threads, chunk)
    return CosineResult(float(s / len(edges)), int(zeros))


def metrics_report(graph: Graph, features, threads: int = 1) -> dict:
    """All three scores plus graph/feature sizes as a JSON-ready dict."""
    x = _as_array(graph, features)
    h = feature_homophily(graph, x, threads)
    return {
        "h_f": h.clamped,
        "defined": h.defined,
        "lambda_f": feature_smoothness(graph, x, threads).lambda_f,
        "mean_cosine": mean_edge_cosine(graph, x, threads).mean_cosine,
        "nodes": graph.node_count,
        "edges": graph.edge_count,
        "dim": x.shape[1],
    }
