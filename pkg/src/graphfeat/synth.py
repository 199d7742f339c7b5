"""Synthetic graphs with controlled structure/feature alignment.

``fig2a``  perfect matching, both endpoints share one random vector.
``fig2b``  perfect matching, endpoints carry complementary 0/1 patterns.
``planted`` communities with Bernoulli edges (``p_in`` within, ``p_out``
           across) and a Gaussian prototype per community plus noise.
``er-random`` Erdos-Renyi edges with probability ``p_in`` and independent
           Gaussian features.

Corruption is applied to the feature matrix last.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .graph import (FeatureMatrix, Graph, NodeLabels, save_edge_list, save_features,
                    save_labels)

KINDS = ("fig2a", "fig2b", "planted", "er-random")
CORRUPTIONS = ("none", "shuffle-rows", "gaussian-overwrite")


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "planted"
    n: int = 5000
    d: int = 64
    communities: int = 4
    p_in: float = 0.1
    p_out: float = 0.002
    noise_sigma: float = 0.1
    corruption: str = "none"
    seed: int = 0
    label_ratios: tuple = (0.6, 0.2, 0.2)

    def validate(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown synth kind {self.kind!r}")
        if self.corruption not in CORRUPTIONS:
            raise InputError(f"unknown corruption {self.corruption!r}")
        if self.n < 1 or self.d < 1:
            raise InputError("n and d must be >= 1")
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise InputError("edge probabilities must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be >= 0")
        if self.kind in ("fig2a", "fig2b") and self.n % 2:
            raise InputError(f"{self.kind} needs an even node count, got {self.n}")
        if self.kind == "planted" and not 1 <= self.communities <= self.n:
            raise InputError("communities must lie in [1, n]")
        if self.kind != "fig2a" and self.kind != "fig2b" and self.n < 2:
            raise InputError("need at least two nodes")


@dataclass(frozen=True)
class SynthData:
    graph: Graph
    features: FeatureMatrix
    labels: NodeLabels | None = None


def _matching(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64).reshape(-1, 2)


def _binary_patterns(count: int, d: int, rng) -> np.ndarray:
    pats = rng.integers(0, 2, size=(count, d))
    if d > 1:
        # keep both sides of every pair away from the zero vector
        degenerate = (pats.sum(1) == 0) | (pats.sum(1) == d)
        while degenerate.any():
            pats[degenerate] = rng.integers(0, 2, size=(degenerate.sum(), d))
            degenerate = (pats.sum(1) == 0) | (pats.sum(1) == d)
    return pats.astype(np.float64)


def _bernoulli_pairs(rows, cols, p, rng, same_block: bool) -> np.ndarray:
    """Sample each pair between two node blocks independently with prob ``p``."""
    if same_block:
        iu, ju = np.triu_indices(len(rows), k=1)
        total = len(iu)
    else:
        total = len(rows) * len(cols)
    if total == 0 or p <= 0:
        return np.empty((0, 2), dtype=np.int64)
    m = rng.binomial(total, p)
    picks = rng.choice(total, size=m, replace=False)
    if same_block:
        return np.stack([rows[iu[picks]], rows[ju[picks]]], axis=1)
    return np.stack([rows[picks // len(cols)], cols[picks % len(cols)]], axis=1)


def _assign_masks(n: int, ratios, rng) -> np.ndarray:
    counts = np.floor(np.asarray(ratios) * n + 0.5).astype(int)
    counts[0] = n - counts[1:].sum()
    masks = np.repeat(np.arange(3), counts)
    return masks[rng.permutation(n)]


def generate(spec: SynthSpec) -> SynthData:
    """Build the graph, features and (planted only) community labels."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.d
    labels = None

    if spec.kind == "fig2a":
        edges = _matching(n)
        shared = rng.standard_normal((n // 2, d))
        x = np.repeat(shared, 2, axis=0)
    elif spec.kind == "fig2b":
        edges = _matching(n)
        pats = _binary_patterns(n // 2, d, rng)
        x = np.empty((n, d))
        x[0::2] = pats
        x[1::2] = 1.0 - pats
    elif spec.kind == "planted":
        c = spec.communities
        community = np.arange(n) * c // n
        blocks = [np.flatnonzero(community == k) for k in range(c)]
        parts = []
        for a in range(c):
            parts.append(_bernoulli_pairs(blocks[a], blocks[a], spec.p_in, rng, True))
            for b in range(a + 1, c):
                parts.append(_bernoulli_pairs(blocks[a], blocks[b], spec.p_out, rng, False))
        edges = np.concatenate(parts)
        prototypes = rng.standard_normal((c, d))
        x = prototypes[community] + spec.noise_sigma * rng.standard_normal((n, d))
        labels = NodeLabels(community.astype(np.int64), _assign_masks(n, spec.label_ratios, rng), c)
    else:
        everyone = np.arange(n)
        edges = _bernoulli_pairs(everyone, everyone, spec.p_in, rng, True)
        x = rng.standard_normal((n, d))

    if spec.corruption == "shuffle-rows":
        x = x[rng.permutation(n)]
    elif spec.corruption == "gaussian-overwrite":
        x = rng.standard_normal((n, d))

    graph = Graph.from_edges(n, edges, np.arange(n, dtype=np.int64))
    return SynthData(graph, FeatureMatrix(x.astype(np.float32)), labels)


def write_dataset(data: SynthData, out_dir) -> dict:
    """Write ``graph.txt``, ``features.tugf`` and, if present, ``labels.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"graph": out / "graph.txt", "features": out / "features.tugf"}
    save_edge_list(data.graph, paths["graph"])
    save_features(data.features, paths["features"])
    if data.labels is not None:
        paths["labels"] = out / "labels.txt"
        save_labels(data.labels, paths["labels"], data.graph.node_ids)
    return {k: str(v) for k, v in paths.items()}
