"""Mean-aggregation message passing encoder with analytic gradients.

Each layer computes ``h_v <- act(h_v W_self + mean_{u in N(v)} h_u W_neigh + b)``
over the full graph; the last layer has no activation. Isolated nodes
aggregate a zero vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .adapter import kaiming_uniform
from .errors import InputError, NumericalError
from .graph import FeatureMatrix, Graph, NegativeSampler, NodeLabels, SplitSet, check_split_disjoint
from .optim import Adam, clip_global_norm
from .trainer import (TrainConfig, TrainLog, dot_mrr, run_epochs, shuffled_batches,
                      structure_loss_terms, validation_sampler)

TUGN_MAGIC = b"TUGN"
TUGN_VERSION = 1
_TUGN_HEADER = struct.Struct("<4sIBBQQQ")
HEADS = ("lp-dot", "nc-softmax")


@dataclass(frozen=True)
class GnnSpec:
    num_layers: int = 2
    hidden_dim: int = 64
    output_dim: int = 64

    def __post_init__(self):
        if self.num_layers not in (1, 2):
            raise InputError("num_layers must be 1 or 2")


def default_lp_config(seed: int = 0) -> TrainConfig:
    """Full-graph training: each step propagates over every node."""
    return TrainConfig(learning_rate=1e-2, batch_size=512, max_epochs=20, patience=3,
                       max_steps_per_epoch=10, valid_subsample_frac=0.05, seed=seed)


def default_nc_config(seed: int = 0) -> TrainConfig:
    """One full-batch step per epoch over the train-mask nodes."""
    return TrainConfig(learning_rate=1e-2, max_epochs=200, patience=20, seed=seed)


class GnnModel:
    def __init__(self, head: str, dims: list[int], params: dict | None = None):
        if head not in HEADS:
            raise InputError(f"unknown head {head!r}")
        if len(dims) not in (2, 3):
            raise InputError("GNN supports 1 or 2 layers")
        self.head = head
        self.dims = [int(d) for d in dims]
        self.params = params if params is not None else {
            k: np.zeros(s) for k, s in self.shapes().items()}
        for k, s in self.shapes().items():
            if self.params[k].shape != s:
                raise InputError(f"parameter {k} has shape {self.params[k].shape}, expected {s}")

    @classmethod
    def from_spec(cls, spec: GnnSpec, input_dim: int, head: str = "lp-dot",
                  num_classes: int = 0, rng: np.random.Generator | None = None) -> "GnnModel":
        out = num_classes if head == "nc-softmax" else spec.output_dim
        if out < 1:
            raise InputError("output dimension must be >= 1")
        dims = [input_dim] + [spec.hidden_dim] * (spec.num_layers - 1) + [out]
        model = cls(head, dims)
        rng = rng or np.random.default_rng(0)
        for k, s in model.shapes().items():
            if k.startswith("w"):
                # self and neighbor halves share the fan-in of the layer
                model.params[k] = kaiming_uniform(2 * s[0], s, rng)
        return model

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def shapes(self) -> dict:
        shapes = {}
        for l in range(self.num_layers):
            d_in, d_out = self.dims[l], self.dims[l + 1]
            shapes[f"w_self{l}"] = (d_in, d_out)
            shapes[f"w_neigh{l}"] = (d_in, d_out)
            shapes[f"b{l}"] = (d_out,)
        return shapes

    def copy(self) -> "GnnModel":
        return GnnModel(self.head, list(self.dims), {k: v.copy() for k, v in self.params.items()})

    def forward(self, graph: Graph, x, return_cache: bool = False, input_agg=None):
        """Full-graph forward pass.

        ``input_agg`` may hold a precomputed ``mean_adjacency @ x``; the input
        features never change during training, so callers reuse it per step.
        """
        x = np.asarray(x.values if isinstance(x, FeatureMatrix) else x, dtype=np.float64)
        if x.shape != (graph.node_count, self.dims[0]):
            raise InputError(
                f"features {x.shape} do not match graph ({graph.node_count}) / input dim ({self.dims[0]})")
        agg = graph.mean_adjacency
        h = x
        cache = []
        for l in range(self.num_layers):
            w_self, w_neigh = self.params[f"w_self{l}"], self.params[f"w_neigh{l}"]
            if l == 0 and input_agg is not None:
                m, neigh = input_agg, input_agg @ w_neigh
            elif w_neigh.shape[1] < w_neigh.shape[0]:
                # propagate after projecting when the output is narrower
                m, neigh = None, agg @ (h @ w_neigh)
            else:
                m = agg @ h
                neigh = m @ w_neigh
            z = h @ w_self + neigh + self.params[f"b{l}"]
            cache.append((h, m, z))
            h = np.maximum(z, 0.0) if l < self.num_layers - 1 else z
        return (h, cache) if return_cache else h

    def backward(self, graph: Graph, cache, dout: np.ndarray) -> dict:
        agg_t = graph.mean_adjacency_t
        grads = {}
        dz = dout
        for l in reversed(range(self.num_layers)):
            h, m, z = cache[l]
            if l < self.num_layers - 1:
                dz = dz * (z > 0)
            w_self, w_neigh = self.params[f"w_self{l}"], self.params[f"w_neigh{l}"]
            grads[f"w_self{l}"] = h.T @ dz
            grads[f"b{l}"] = dz.sum(0)
            if m is None:
                back = agg_t @ dz
                grads[f"w_neigh{l}"] = h.T @ back
                if l > 0:
                    dz = dz @ w_self.T + back @ w_neigh.T
            else:
                grads[f"w_neigh{l}"] = m.T @ dz
                if l > 0:
                    dz = dz @ w_self.T + agg_t @ (dz @ w_neigh.T)
        return grads

    # ------------------------------------------------------------ checkpoint

    def save(self, path) -> None:
        """TUGN checkpoint: header, then float32 parameters in ``shapes()`` order."""
        hidden = self.dims[1] if self.num_layers == 2 else 0
        with open(path, "wb") as fh:
            fh.write(_TUGN_HEADER.pack(TUGN_MAGIC, TUGN_VERSION, HEADS.index(self.head),
                                       self.num_layers, self.dims[0], hidden, self.dims[-1]))
            for k in self.shapes():
                fh.write(np.ascontiguousarray(self.params[k], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "GnnModel":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < _TUGN_HEADER.size:
            raise InputError(f"{path}: truncated GNN checkpoint")
        magic, version, head, layers, d_in, d_hid, d_out = _TUGN_HEADER.unpack_from(blob)
        if magic != TUGN_MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}")
        if version != TUGN_VERSION:
            raise InputError(f"{path}: unsupported GNN checkpoint version {version}")
        if head >= len(HEADS) or layers not in (1, 2):
            raise InputError(f"{path}: invalid head or layer count")
        dims = [d_in, d_out] if layers == 1 else [d_in, d_hid, d_out]
        model = cls(HEADS[head], dims)
        offset = _TUGN_HEADER.size
        for k, s in model.shapes().items():
            count = int(np.prod(s))
            if offset + 4 * count > len(blob):
                raise InputError(f"{path}: truncated parameter {k}")
            model.params[k] = np.frombuffer(blob, "<f4", count, offset).astype(np.float64).reshape(s)
            offset += 4 * count
        if offset != len(blob):
            raise InputError(f"{path}: trailing bytes after parameters")
        return model


def gnn_forward(model: GnnModel, graph: Graph, features, nodes=None) -> np.ndarray:
    """Output rows for ``nodes`` (all nodes when ``None``)."""
    out = model.forward(graph, features)
    if nodes is None:
        return out
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= graph.node_count):
        raise InputError("node id out of range")
    return out[nodes]


def _scatter(n: int, dim: int, index: np.ndarray, rows: np.ndarray) -> np.ndarray:
    out = np.zeros((n, dim))
    np.add.at(out, index, rows)
    return out


def lp_loss_and_grad(model: GnnModel, graph: Graph, x, triples, input_agg=None) -> tuple[float, dict]:
    """Edge objective on GNN outputs for ``(u, v, v_neg)`` triples."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    out, cache = model.forward(graph, x, return_cache=True, input_agg=input_agg)
    u, v, n = triples.T
    loss, dyu, dyv, dyn = structure_loss_terms(out[u], out[v], out[n])
    idx = np.concatenate([u, v, n])
    dout = _scatter(len(out), out.shape[1], idx, np.concatenate([dyu, dyv, dyn]))
    return loss, model.backward(graph, cache, dout)


def nc_loss_and_grad(model: GnnModel, graph: Graph, x, nodes, classes,
                     input_agg=None) -> tuple[float, dict]:
    """Mean softmax cross-entropy over ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    out, cache = model.forward(graph, x, return_cache=True, input_agg=input_agg)
    logits = out[nodes]
    shifted = logits - logits.max(1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(1, keepdims=True))
    y = np.asarray(classes, dtype=np.int64)
    loss = -logp[np.arange(len(nodes)), y].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(len(nodes)), y] -= 1.0
    dlogits /= len(nodes)
    dout = _scatter(len(out), out.shape[1], nodes, dlogits)
    return float(loss), model.backward(graph, cache, dout)


def gnn_train_lp(graph_train: Graph, features, split: SplitSet, model_spec: GnnSpec | None = None,
                 config: TrainConfig | None = None):
    """Train a link-prediction encoder with the sampled-negative edge objective.

    Message passing runs over ``graph_train`` only. Returns the best-epoch
    model by subsampled validation MRR and the training log.
    """
    model_spec = model_spec or GnnSpec()
    config = config or default_lp_config()
    check_split_disjoint(graph_train, split)
    x = np.asarray(features.values if isinstance(features, FeatureMatrix) else features, dtype=np.float64)
    if len(x) != graph_train.node_count:
        raise InputError("feature rows do not match graph nodes")
    sampler = NegativeSampler(split.full_graph(graph_train.node_count))
    init_seq, batch_seq, valid_seq = np.random.SeedSequence(config.seed).spawn(3)
    model = GnnModel.from_spec(model_spec, x.shape[1], "lp-dot", rng=np.random.default_rng(init_seq))
    opt = Adam(model.params, lr=config.learning_rate)
    batch_rng = np.random.default_rng(batch_seq)
    draw_valid = validation_sampler(split, sampler, config, np.random.default_rng(valid_seq))
    x_agg = graph_train.mean_adjacency @ x

    def train_epoch(epoch):
        total, count = 0.0, 0
        batches = shuffled_batches(split.train_edges, config.batch_size, batch_rng,
                                   config.max_steps_per_epoch)
        for i, e in enumerate(batches):
            neg = sampler.sample(e[:, 0], 1, batch_rng)[:, 0]
            loss, grads = lp_loss_and_grad(model, graph_train, x, np.column_stack([e, neg]), x_agg)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {i}")
            clip_global_norm(grads, config.clip_norm)
            opt.step(grads)
            total += loss * len(e)
            count += len(e)
        return total / count

    def validate(epoch):
        pos, neg = draw_valid()
        return dot_mrr(model.forward(graph_train, x, input_agg=x_agg), pos, neg)

    log = TrainLog()
    best = run_epochs(config, train_epoch, validate, model.copy, log)
    return best, log


def _validation_key(model, graph, x, x_agg, nodes, classes) -> tuple[float, float]:
    """Accuracy on ``nodes``, ties broken by lower cross-entropy."""
    logits = model.forward(graph, x, input_agg=x_agg)[nodes]
    y = classes[nodes]
    shifted = logits - logits.max(1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(1, keepdims=True))
    acc = float(np.mean(logits.argmax(1) == y))
    return acc, float(logp[np.arange(len(nodes)), y].mean())


def gnn_train_nc(graph: Graph, features, labels: NodeLabels, model_spec: GnnSpec | None = None,
                 config: TrainConfig | None = None):
    """Train a node classifier; early stopping on validation-mask accuracy.

    Accuracy saturates quickly on easy tasks, so epochs with equal validation
    accuracy are ranked by validation cross-entropy.
    """
    model_spec = model_spec or GnnSpec()
    config = config or default_nc_config()
    x = np.asarray(features.values if isinstance(features, FeatureMatrix) else features, dtype=np.float64)
    if len(x) != graph.node_count:
        raise InputError("feature rows do not match graph nodes")
    train, valid = labels.mask("train"), labels.mask("valid")
    if len(train) == 0 or len(valid) == 0:
        raise InputError("train and valid masks must be non-empty")
    classes = labels.classes
    used = classes[labels.masks >= 0]
    if used.min() < 0 or used.max() >= labels.num_classes:
        raise InputError("unknown class id in labels")
    model = GnnModel.from_spec(model_spec, x.shape[1], "nc-softmax", labels.num_classes,
                               np.random.default_rng(config.seed))
    opt = Adam(model.params, lr=config.learning_rate)
    x_agg = graph.mean_adjacency @ x

    def train_epoch(epoch):
        loss, grads = nc_loss_and_grad(model, graph, x, train, classes[train], x_agg)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        clip_global_norm(grads, config.clip_norm)
        opt.step(grads)
        return loss

    log = TrainLog()
    best = run_epochs(config, train_epoch, lambda e: _validation_key(model, graph, x, x_agg, valid, classes),
                      model.copy, log)
    return best, log
