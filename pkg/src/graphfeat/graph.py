"""Graph storage, feature files, edge splits and label files.

Graphs are undirected, unweighted and stored as compressed sparse rows with
sorted neighbor lists. Every other module reads graphs and features through
the types defined here.
"""
from __future__ import annotations

import logging
import math
import re
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InputError

logger = logging.getLogger(__name__)

TUGF_MAGIC = b"TUGF"
TUGF_VERSION = 1
_TUGF_HEADER = struct.Struct("<4sIQQ")

MASK_NAMES = ("train", "valid", "test")
_NODES_HEADER = re.compile(r"#\s*nodes\s+(\d+)")


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph in CSR layout.

    Parameters
    ----------
    indptr, indices : np.ndarray
        CSR arrays; ``indices[indptr[v]:indptr[v + 1]]`` are the sorted
        neighbors of ``v``.
    node_ids : np.ndarray, optional
        Original (pre-remap) id of every dense node index.
    dropped_lines : int
        Number of input lines discarded while loading (self-loops and
        duplicates).
    """

    indptr: np.ndarray
    indices: np.ndarray
    node_ids: np.ndarray | None = None
    dropped_lines: int = 0

    @classmethod
    def from_edges(cls, node_count, edges, node_ids=None, dropped_lines=0):
        """Build a graph from an ``(m, 2)`` array of undirected edges.

        Self-loops are dropped and duplicates in either orientation merged.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= node_count):
            raise InputError("edge endpoint outside node range")
        edges = edges[edges[:, 0] != edges[:, 1]]
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        keys = np.unique(lo * node_count + hi)
        lo, hi = keys // node_count, keys % node_count
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(node_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=node_count), out=indptr[1:])
        return cls(indptr, cols.astype(np.int64), node_ids, dropped_lines)

    @property
    def node_count(self) -> int:
        return len(self.indptr) - 1

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @cached_property
    def sources(self) -> np.ndarray:
        """Row index of every directed CSR entry."""
        return np.repeat(np.arange(self.node_count, dtype=np.int64), self.degrees)

    def edges(self) -> np.ndarray:
        """Undirected edges as an ``(m, 2)`` array with ``u < v``, sorted."""
        src = self.sources
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    @cached_property
    def _edge_keys(self) -> np.ndarray:
        # CSR order is already sorted by (row, col)
        return self.sources * self.node_count + self.indices

    def has_edges(self, u, v) -> np.ndarray:
        """Vectorized membership test for pairs ``(u[i], v[i])``."""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        keys = u * self.node_count + v
        if len(self._edge_keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.minimum(pos, len(self._edge_keys) - 1)
        return self._edge_keys[pos] == keys

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.node_count, self.node_count))

    @cached_property
    def mean_adjacency(self) -> sp.csr_matrix:
        """Row-normalized adjacency ``D^-1 A``; isolated rows are zero."""
        deg = self.degrees.astype(np.float64)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        data = np.repeat(inv, self.degrees)
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.node_count, self.node_count))

    @cached_property
    def mean_adjacency_t(self) -> sp.csr_matrix:
        """Transpose of ``mean_adjacency`` in CSR form, used by backpropagation."""
        return self.mean_adjacency.T.tocsr()

    def check_invariants(self) -> None:
        """Full scan of the structural invariants; raises ``InputError``."""
        n = self.node_count
        src = self.sources
        if np.any(src == self.indices):
            raise InputError("graph contains a self-loop")
        for v in range(n):
            nb = self.neighbors(v)
            if np.any(np.diff(nb) <= 0):
                raise InputError(f"neighbor list of node {v} not strictly ascending")
        if not np.all(self.has_edges(self.indices, src)):
            raise InputError("adjacency is not symmetric")
        if len(self.indices) % 2:
            raise InputError("odd number of directed entries")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Dense ``node_count x dim`` float32 feature rows."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise InputError("feature matrix must be two-dimensional")

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SplitSet:
    """Positive edges per split plus per-positive negative targets."""

    train_edges: np.ndarray
    valid_edges: np.ndarray
    test_edges: np.ndarray
    valid_negatives: np.ndarray
    test_negatives: np.ndarray

    def positives(self, name: str) -> np.ndarray:
        return getattr(self, f"{name}_edges")

    def negatives(self, name: str) -> np.ndarray:
        return getattr(self, f"{name}_negatives")

    def full_graph(self, node_count: int) -> Graph:
        edges = np.concatenate([self.train_edges, self.valid_edges, self.test_edges])
        return Graph.from_edges(node_count, edges)


@dataclass(frozen=True, eq=False)
class NodeLabels:
    """Per-node class ids with a train/valid/test mask code per node.

    ``masks`` holds indices into ``MASK_NAMES``; -1 marks unlabeled nodes.
    """

    classes: np.ndarray
    masks: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        if not self.num_classes:
            object.__setattr__(self, "num_classes", int(self.classes.max()) + 1)

    def mask(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.masks == MASK_NAMES.index(name))


# ---------------------------------------------------------------- edge lists

def load_edge_list(path, remap_path=None, write_remap=True) -> Graph:
    """Read a whitespace-separated edge list into a :class:`Graph`.

    Lines starting with ``#`` and blank lines are ignored. Self-loops and
    duplicate edges (either orientation) are dropped and counted. Node ids
    are densely re-indexed in ascending order of original id; the table is
    written to ``remap_path`` (default ``<path>.remap``) unless
    ``write_remap`` is false.

    A ``# nodes N`` header (as written by :func:`save_edge_list`) declares
    the node set ``0..N-1`` explicitly, so isolated nodes survive and ids
    are kept as-is.
    """
    path = Path(path)
    pairs = []
    dropped = 0
    seen = set()
    declared = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                match = _NODES_HEADER.match(line)
                if match and declared is None:
                    declared = int(match.group(1))
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise InputError(f"{path}:{lineno}: expected two node ids, got {len(tokens)} tokens")
            try:
                a, b = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-integer token in {line!r}") from None
            key = (a, b) if a < b else (b, a)
            if a == b or key in seen:
                dropped += 1
                continue
            seen.add(key)
            pairs.append(key)
    if not pairs:
        raise InputError(f"{path}: empty edge set")
    if dropped:
        logger.warning("%s: dropped %d line(s) (self-loops or duplicate edges)", path, dropped)

    raw = np.asarray(pairs, dtype=np.int64)
    if declared is not None and raw.min() >= 0 and raw.max() < declared:
        node_ids, dense = np.arange(declared, dtype=np.int64), raw
    else:
        node_ids, dense = np.unique(raw, return_inverse=True)
    graph = Graph.from_edges(len(node_ids), dense.reshape(-1, 2), node_ids, dropped)
    if write_remap:
        remap_path = Path(remap_path) if remap_path else path.with_name(path.name + ".remap")
        save_remap(graph, remap_path)
    return graph


def save_remap(graph: Graph, path) -> None:
    ids = graph.node_ids if graph.node_ids is not None else np.arange(graph.node_count)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# dense_id original_id\n")
        for i, orig in enumerate(ids):
            fh.write(f"{i} {orig}\n")


def save_edge_list(graph: Graph, path) -> None:
    """Write each undirected edge once, using original ids when known.

    The ``# nodes N`` header is only written when ids are the dense range, so
    that reloading keeps isolated nodes.
    """
    edges = graph.edges()
    dense = graph.node_ids is None or np.array_equal(graph.node_ids, np.arange(graph.node_count))
    if not dense:
        edges = graph.node_ids[edges]
    with open(path, "w", encoding="utf-8") as fh:
        if dense:
            fh.write(f"# nodes {graph.node_count} edges {graph.edge_count}\n")
        for u, v in edges:
            fh.write(f"{u} {v}\n")


# ------------------------------------------------------------- feature files

def save_features(matrix, path) -> None:
    """Write a TUGF file: header then float32 little-endian rows."""
    values = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    n, d = values.shape
    with open(path, "wb") as fh:
        fh.write(_TUGF_HEADER.pack(TUGF_MAGIC, TUGF_VERSION, n, d))
        # chunked to bound the temporary little-endian copy
        step = max(1, (1 << 24) // max(d, 1))
        for start in range(0, n, step):
            np.ascontiguousarray(values[start:start + step], dtype="<f4").tofile(fh)


def load_features(path, graph: Graph | None = None) -> FeatureMatrix:
    """Read a TUGF file, validating header, size and finiteness."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(_TUGF_HEADER.size)
        if len(header) < _TUGF_HEADER.size:
            raise InputError(f"{path}: truncated TUGF header")
        magic, version, n, d = _TUGF_HEADER.unpack(header)
        if magic != TUGF_MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}, expected {TUGF_MAGIC!r}")
        if version != TUGF_VERSION:
            raise InputError(f"{path}: TUGF version {version} unsupported (expected {TUGF_VERSION})")
        if graph is not None and n != graph.node_count:
            raise InputError(f"{path}: node count mismatch: file has {n}, graph has {graph.node_count}")
        values = np.fromfile(fh, dtype="<f4", count=n * d)
        if values.size != n * d:
            raise InputError(f"{path}: payload has {values.size} values, expected {n * d}")
        if fh.read(1):
            raise InputError(f"{path}: trailing bytes after payload")
    values = values.reshape(n, d).astype(np.float32, copy=False)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        raise InputError(f"{path}: non-finite value in row {int(np.flatnonzero(bad)[0])}")
    return FeatureMatrix(values)


# ------------------------------------------------------------ negative draws

class NegativeSampler:
    """Uniform negative targets rejecting true edges of a reference graph."""

    def __init__(self, graph: Graph):
        self.graph = graph
        self.full = graph.degrees >= graph.node_count - 1

    def sample(self, anchors, k: int, rng: np.random.Generator) -> np.ndarray:
        """Return ``(len(anchors), k)`` targets with no edge to their anchor."""
        anchors = np.asarray(anchors, dtype=np.int64)
        if anchors.size and self.full[anchors].any():
            node = int(anchors[self.full[anchors]][0])
            raise InputError(f"node {node} is adjacent to every other node; no negative exists")
        n = self.graph.node_count
        out = rng.integers(0, n, size=(len(anchors), k))
        src = np.broadcast_to(anchors[:, None], out.shape)
        bad = np.flatnonzero(((out == src) | self.graph.has_edges(src, out)).ravel())
        flat = out.reshape(-1)
        src = src.reshape(-1)
        while bad.size:
            flat[bad] = rng.integers(0, n, size=bad.size)
            reject = (flat[bad] == src[bad]) | self.graph.has_edges(src[bad], flat[bad])
            bad = bad[reject]
        return out


# --------------------------------------------------------------- edge splits

def _split_sizes(m: int, ratios) -> tuple[int, int, int]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise InputError(f"split ratios must be three positive fractions summing to 1, got {ratios}")
    n_valid = int(math.floor(m * ratios[1] + 0.5))
    n_test = int(math.floor(m * ratios[2] + 0.5))
    n_train = m - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise InputError(f"graph with {m} edges too small for ratios {ratios}")
    return n_train, n_valid, n_test


def split_edges(graph: Graph, ratios=(0.6, 0.1, 0.3), negatives_per_edge=100, seed=0):
    """Randomly partition edges into train/valid/test and draw negatives.

    Negatives for validation and test positives are drawn uniformly over all
    nodes, rejecting the source itself and any neighbor in the full graph.

    Returns
    -------
    (Graph, SplitSet)
        The training-only graph over the same node set, and the split.
    """
    if negatives_per_edge < 1:
        raise InputError("negatives_per_edge must be >= 1")
    edges = graph.edges()
    n_train, n_valid, n_test = _split_sizes(len(edges), ratios)
    rng = np.random.default_rng(seed)
    edges = edges[rng.permutation(len(edges))]
    valid = edges[:n_valid]
    test = edges[n_valid:n_valid + n_test]
    train = edges[n_valid + n_test:]

    sampler = NegativeSampler(graph)
    valid_neg = sampler.sample(valid[:, 0], negatives_per_edge, rng)
    test_neg = sampler.sample(test[:, 0], negatives_per_edge, rng)
    graph_train = Graph.from_edges(graph.node_count, train, graph.node_ids)
    return graph_train, SplitSet(train, valid, test, valid_neg, test_neg)


def check_split_disjoint(graph_train: Graph, split: SplitSet) -> None:
    """Raise if any validation or test edge is present in ``graph_train``."""
    for name in ("valid", "test"):
        e = split.positives(name)
        if len(e) and (graph_train.has_edges(e[:, 0], e[:, 1]).any()
                       or graph_train.has_edges(e[:, 1], e[:, 0]).any()):
            raise InputError(f"training graph contains a {name} edge")


def save_split(split: SplitSet, directory) -> None:
    """Write ``train.txt``, ``valid.txt`` and ``test.txt`` into ``directory``.

    Each line is ``u v`` followed, for valid/test, by that positive's
    negative targets. All ids are dense node indices.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        pos = split.positives(name)
        neg = None if name == "train" else split.negatives(name)
        k = 0 if neg is None else neg.shape[1]
        with open(directory / f"{name}.txt", "w", encoding="utf-8") as fh:
            fh.write(f"# split {name} positives {len(pos)} negatives {k}\n")
            for i, (u, v) in enumerate(pos):
                if neg is None:
                    fh.write(f"{u} {v}\n")
                else:
                    fh.write(f"{u} {v} " + " ".join(map(str, neg[i])) + "\n")


def _read_split_file(path: Path, with_negatives: bool):
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            rows.append([int(t) for t in line.split()])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-integer token") from None
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise InputError(f"{path}: records have differing lengths {sorted(widths)}")
    width = widths.pop() if widths else (3 if with_negatives else 2)
    if (width < 3) if with_negatives else (width != 2):
        raise InputError(f"{path}: unexpected record width {width}")
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, width)
    return arr[:, :2], arr[:, 2:]


def load_split(directory, graph: Graph | None = None) -> SplitSet:
    directory = Path(directory)
    for name in ("train", "valid", "test"):
        if not (directory / f"{name}.txt").exists():
            raise FileNotFoundError(f"missing split file {directory / f'{name}.txt'}")
    train, _ = _read_split_file(directory / "train.txt", False)
    valid, valid_neg = _read_split_file(directory / "valid.txt", True)
    test, test_neg = _read_split_file(directory / "test.txt", True)
    split = SplitSet(train, valid, test, valid_neg, test_neg)
    if graph is not None:
        for arr in (train, valid, test, valid_neg, test_neg):
            if arr.size and (arr.min() < 0 or arr.max() >= graph.node_count):
                raise InputError(f"{directory}: node id outside graph range")
    return split


# --------------------------------------------------------------- label files

def save_labels(labels: NodeLabels, path, node_ids=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# node_id class_id mask\n")
        for v, (c, m) in enumerate(zip(labels.classes, labels.masks)):
            if m < 0:
                continue
            nid = v if node_ids is None else node_ids[v]
            fh.write(f"{nid} {c} {MASK_NAMES[m]}\n")


def load_labels(path, graph: Graph) -> NodeLabels:
    """Read ``node_id class_id mask`` lines; ids are original (pre-remap)."""
    path = Path(path)
    ids = graph.node_ids if graph.node_ids is not None else np.arange(graph.node_count)
    lookup = {int(orig): i for i, orig in enumerate(ids)}
    classes = np.full(graph.node_count, -1, dtype=np.int64)
    masks = np.full(graph.node_count, -1, dtype=np.int64)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[2] not in MASK_NAMES:
            raise InputError(f"{path}:{lineno}: expected 'node_id class_id mask'")
        try:
            nid, cls = int(parts[0]), int(parts[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-integer token") from None
        if nid not in lookup:
            raise InputError(f"{path}:{lineno}: unknown node id {nid}")
        if cls < 0:
            raise InputError(f"{path}:{lineno}: negative class id {cls}")
        classes[lookup[nid]] = cls
        masks[lookup[nid]] = MASK_NAMES.index(parts[2])
    labeled = classes[masks >= 0]
    if labeled.size == 0:
        raise InputError(f"{path}: no labeled nodes")
    present = np.unique(labeled)
    if not np.array_equal(present, np.arange(len(present))):
        raise InputError(f"{path}: class ids not contiguous from 0: {present.tolist()}")
    return NodeLabels(classes, masks, len(present))
