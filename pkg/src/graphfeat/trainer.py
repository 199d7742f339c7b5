"""Structure-contrastive finetuning of an adapter head over frozen features.

Each training edge ``(u, v)`` is paired with one uniformly drawn node ``v'``
that has no edge to ``u``; the loss rewards a large dot product on the true
edge and a small one on the sampled pair.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .adapter import Adapter, AdapterSpec
from .errors import InputError, NumericalError
from .graph import FeatureMatrix, Graph, NegativeSampler, SplitSet, check_split_disjoint
from .metrics import feature_homophily
from .optim import Adam, clip_global_norm
from .ranking import mrr

logger = logging.getLogger(__name__)

LEARNING_RATE_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 5e-4, 5e-5)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 64
    max_epochs: int = 40
    clip_norm: float = 1.0
    patience: int = 10
    valid_subsample_frac: float = 0.01
    valid_negatives: int = 5
    negatives_per_edge: int = 1
    fixed_valid_subset: bool = False
    seed: int = 0
    # caps minibatches per epoch; None means one full pass over the edges
    max_steps_per_epoch: int | None = None

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "clip_norm",
                     "valid_negatives", "negatives_per_edge"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.patience < 0:
            raise InputError("patience must be >= 0")
        if not 0 < self.valid_subsample_frac <= 1:
            raise InputError("valid_subsample_frac must lie in (0, 1]")
        if self.max_steps_per_epoch is not None and self.max_steps_per_epoch < 1:
            raise InputError("max_steps_per_epoch must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    valid_score: float
    seconds: float | None


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    final_h_f: float | None = None

    def to_jsonl(self, with_timing: bool = True) -> str:
        lines = []
        for rec in self.epochs:
            d = asdict(rec)
            if not with_timing:
                d["seconds"] = None
            lines.append(json.dumps(d))
        return "\n".join(lines) + ("\n" if lines else "")

    def summary(self, with_timing: bool = True) -> dict:
        return {
            "epochs_run": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_valid_score": self.epochs[self.best_epoch - 1].valid_score if self.epochs else None,
            "final_h_f": self.final_h_f,
            "loss": [r.loss for r in self.epochs],
            "valid_score": [r.valid_score for r in self.epochs],
            "seconds": [r.seconds for r in self.epochs] if with_timing else None,
        }


# ------------------------------------------------------------------- loss

def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _sigmoid(z):
    return np.exp(_log_sigmoid(z))


def structure_loss_terms(yu, yv, yn):
    """Loss and gradients w.r.t. the three embedding batches.

    ``yn`` may carry several negatives per anchor with shape ``(B, k, d)``;
    the negative term is then averaged over ``k``.
    """
    yu, yv, yn = (np.asarray(a, dtype=np.float64) for a in (yu, yv, yn))
    multi = yn.ndim == 3
    if not multi:
        yn = yn[:, None, :]
    if not (len(yu) == len(yv) == len(yn)) or len(yu) < 1:
        raise InputError("structure loss needs three non-empty batches of equal length")
    if not (yu.shape[-1] == yv.shape[-1] == yn.shape[-1]):
        raise InputError("structure loss batches differ in dimension")
    b, k = yn.shape[0], yn.shape[1]
    pos = np.einsum("ij,ij->i", yu, yv)
    neg = np.einsum("ij,ikj->ik", yu, yn)
    # log(1 - sigmoid(z)) == log_sigmoid(-z)
    loss = -(_log_sigmoid(pos).sum() + _log_sigmoid(-neg).sum() / k) / b
    gpos = -_sigmoid(-pos) / b
    gneg = _sigmoid(neg) / (b * k)
    dyu = gpos[:, None] * yv + np.einsum("ik,ikj->ij", gneg, yn)
    dyv = gpos[:, None] * yu
    dyn = gneg[:, :, None] * yu[:, None, :]
    return float(loss), dyu, dyv, (dyn if multi else dyn[:, 0])


def structure_loss(u_feats, v_feats, vneg_feats) -> float:
    """Mean of ``-[log s(x_u.x_v) + log(1 - s(x_u.x_v'))]`` with ``s`` the sigmoid."""
    return structure_loss_terms(u_feats, v_feats, vneg_feats)[0]


def _batch_rows(x: np.ndarray, batch: np.ndarray):
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if batch.size and (batch.min() < 0 or batch.max() >= len(x)):
        raise InputError("node index out of range in batch")
    return batch


def loss_and_grad(adapter: Adapter, x: np.ndarray, batch) -> tuple[float, dict]:
    batch = _batch_rows(x, batch)
    b = len(batch)
    y, cache = adapter.forward(x[batch.T.reshape(-1)], return_cache=True)
    loss, dyu, dyv, dyn = structure_loss_terms(y[:b], y[b:2 * b], y[2 * b:])
    return loss, adapter.backward(cache, np.concatenate([dyu, dyv, dyn]))


def structure_loss_grad(adapter: Adapter, base_feats, batch) -> dict:
    """Gradient of the structure loss w.r.t. adapter parameters.

    ``batch`` is a sequence of ``(u, v, v_neg)`` node triples.
    """
    x = base_feats.values if isinstance(base_feats, FeatureMatrix) else base_feats
    return loss_and_grad(adapter, np.asarray(x, dtype=np.float64), batch)[1]


# ------------------------------------------------------------ epoch loop

def run_epochs(config: TrainConfig, train_epoch, validate, snapshot, log: TrainLog):
    """Shared early-stopping loop.

    ``train_epoch(epoch)`` returns the mean loss, ``validate(epoch)`` a score
    to maximize and ``snapshot()`` a copy of the current parameters. Returns
    the snapshot taken at the best epoch.

    ``validate`` may also return a tuple ``(score, tie_break, ...)``; epochs
    are then compared lexicographically and only ``score`` is logged.
    """
    best_key, best_state, stale = None, None, 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(epoch)
        result = validate(epoch)
        key = tuple(float(v) for v in result) if isinstance(result, tuple) else (float(result),)
        log.epochs.append(EpochRecord(epoch, loss, key[0], time.perf_counter() - t0))
        logger.info("epoch %d loss %.5f valid %.4f", epoch, loss, key[0])
        if best_key is None or key > best_key:
            best_key, best_state, stale = key, snapshot(), 0
            log.best_epoch = epoch
        else:
            stale += 1
            if stale > config.patience:
                break
    return best_state


def shuffled_batches(edges: np.ndarray, batch_size: int, rng: np.random.Generator,
                     max_steps: int | None = None):
    """Yield batches of edges in random order with random orientation."""
    order = rng.permutation(len(edges))
    flip = rng.random(len(edges)) < 0.5
    e = edges[order]
    e = np.where(flip[order][:, None], e[:, ::-1], e)
    for step, start in enumerate(range(0, len(e), batch_size)):
        if max_steps is not None and step >= max_steps:
            return
        yield e[start:start + batch_size]


def validation_sampler(split: SplitSet, sampler: NegativeSampler, config: TrainConfig,
                       rng: np.random.Generator):
    """Return ``draw()`` giving (positives, negatives) for one validation check."""
    valid = split.valid_edges
    if len(valid) == 0:
        raise InputError("split has no validation edges")
    size = max(1, int(math.ceil(config.valid_subsample_frac * len(valid))))
    fixed = rng.choice(len(valid), size, replace=False)
    k = config.valid_negatives

    def draw():
        idx = fixed if config.fixed_valid_subset else rng.choice(len(valid), size, replace=False)
        pos = valid[idx]
        stored = split.valid_negatives
        if stored.ndim == 2 and stored.shape[1] >= k:
            neg = stored[idx, :k]
        else:
            neg = sampler.sample(pos[:, 0], k, rng)
        return pos, neg

    return draw


def dot_mrr(y: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> float:
    ps = np.einsum("ij,ij->i", y[pos[:, 0]], y[pos[:, 1]])
    ns = np.einsum("ij,ikj->ik", y[pos[:, 0]], y[neg])
    return mrr(ps, ns)


def touchup(graph_train: Graph, base_feats: FeatureMatrix, split: SplitSet,
            adapter_spec: AdapterSpec | None = None, config: TrainConfig | None = None,
            validator=None, on_batch=None):
    """Train an adapter so connected nodes get aligned features.

    Parameters
    ----------
    graph_train : Graph
        Training graph; must not contain any validation or test edge.
    base_feats : FeatureMatrix
        Frozen input features.
    split : SplitSet
        Supplies training positives, validation edges, and (with the training
        graph) the full edge set used to reject negatives.
    validator : callable, optional
        ``validator(adapter, epoch) -> float`` replacing the subsampled
        validation MRR.
    on_batch : callable, optional
        ``on_batch(epoch, index, triples)`` observer for each training batch.

    Returns
    -------
    (Adapter, FeatureMatrix, TrainLog)
        Best-epoch adapter, its outputs for every node, and the log.
    """
    adapter_spec = adapter_spec or AdapterSpec()
    config = config or TrainConfig()
    if base_feats.node_count != graph_train.node_count:
        raise InputError("feature rows do not match graph nodes")
    check_split_disjoint(graph_train, split)

    x = base_feats.values.astype(np.float64)
    full = split.full_graph(graph_train.node_count)
    sampler = NegativeSampler(full)
    init_seq, batch_seq, valid_seq = np.random.SeedSequence(config.seed).spawn(3)
    adapter = Adapter.from_spec(adapter_spec, x.shape[1], np.random.default_rng(init_seq))
    opt = Adam(adapter.params, lr=config.learning_rate)
    batch_rng = np.random.default_rng(batch_seq)
    valid_rng = np.random.default_rng(valid_seq)
    draw_valid = validation_sampler(split, sampler, config, valid_rng)
    train_edges = split.train_edges
    if len(train_edges) == 0:
        raise InputError("split has no training edges")
    k = config.negatives_per_edge

    def train_epoch(epoch):
        total, count = 0.0, 0
        batches = list(shuffled_batches(train_edges, config.batch_size, batch_rng,
                                        config.max_steps_per_epoch))
        # one vectorized draw for the whole epoch, then sliced per batch
        negs = sampler.sample(np.concatenate(batches)[:, 0], k, batch_rng)
        offset = 0
        for i, e in enumerate(batches):
            neg = negs[offset:offset + len(e)]
            offset += len(e)
            if on_batch is not None:
                on_batch(epoch, i, np.column_stack([e, neg]))
            b = len(e)
            rows = np.concatenate([e[:, 0], e[:, 1], neg.reshape(-1)])
            y, cache = adapter.forward(x[rows], return_cache=True)
            yn = y[2 * b:].reshape(b, k, -1)
            loss, dyu, dyv, dyn = structure_loss_terms(y[:b], y[b:2 * b], yn)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {i}")
            grads = adapter.backward(cache, np.concatenate([dyu, dyv, dyn.reshape(b * k, -1)]))
            clip_global_norm(grads, config.clip_norm)
            opt.step(grads)
            total += loss * b
            count += b
        return total / count

    def validate(epoch):
        if validator is not None:
            return validator(adapter, epoch)
        pos, neg = draw_valid()
        return dot_mrr(adapter.forward(x), pos, neg)

    log = TrainLog()
    best = run_epochs(config, train_epoch, validate, adapter.copy, log)
    out = best.forward(x)
    if not np.isfinite(out).all():
        raise NumericalError("touched-up features contain non-finite values")
    touched = FeatureMatrix(out.astype(np.float32))
    h = feature_homophily(graph_train, touched)
    log.final_h_f = h.clamped
    return best, touched, log
