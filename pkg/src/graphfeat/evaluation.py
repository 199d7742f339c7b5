"""Link-prediction and node-classification evaluation reports."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError
from .gnn import GnnModel
from .graph import FeatureMatrix, Graph, NodeLabels, SplitSet
from .metrics import feature_homophily
from .ranking import hits_at_k, mrr, ranks


@dataclass
class EvalReport:
    """Metric values for one evaluation run.

    ``h_f_after`` is the homophily of the evaluated features over the given
    graph; ``h_f_before`` that of the reference (base) features, if supplied.
    """

    task: str
    scorer: str = "dot"
    split: str = "test"
    mrr: float | None = None
    hits_at: dict = field(default_factory=dict)
    hits_at_1: float | None = None
    accuracy: float | None = None
    h_f_before: float | None = None
    h_f_after: float | None = None
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_dict(self, with_timing: bool = True) -> dict:
        d = asdict(self)
        d["hits_at"] = {str(k): v for k, v in self.hits_at.items()}
        if not with_timing:
            d["timing"] = {k: None for k in self.timing}
        return d

    def to_json(self, with_timing: bool = True) -> str:
        return json.dumps(self.to_dict(with_timing), indent=2, sort_keys=True)

    def flat_row(self) -> dict:
        row = {"task": self.task, "scorer": self.scorer, "split": self.split,
               "mrr": self.mrr, "hits_at_1": self.hits_at_1, "accuracy": self.accuracy,
               "h_f_before": self.h_f_before, "h_f_after": self.h_f_after}
        for k, v in sorted(self.hits_at.items()):
            row[f"hits_at_{k}"] = v
        return row


def reports_to_csv(reports) -> str:
    rows = [r.flat_row() for r in reports]
    columns = []
    for r in rows:
        columns += [c for c in r if c not in columns]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()


def _values(features) -> np.ndarray:
    return np.asarray(features.values if isinstance(features, FeatureMatrix) else features,
                      dtype=np.float64)


def score_candidates(embeddings: np.ndarray, positives: np.ndarray, negatives: np.ndarray):
    """Dot-product scores of each positive edge and of its negative targets."""
    src = embeddings[positives[:, 0]]
    pos = np.einsum("ij,ij->i", src, embeddings[positives[:, 1]])
    neg = np.einsum("ij,ikj->ik", src, embeddings[negatives])
    return pos, neg


def evaluate_lp(scorer, graph: Graph, features, split: SplitSet, ks=(1, 10), which: str = "test",
                base_features=None) -> EvalReport:
    """Rank every ``which`` positive against its stored negatives.

    ``scorer`` is ``"dot"`` (dot product of the features themselves) or a
    :class:`GnnModel` with an ``lp-dot`` head propagating over ``graph``.
    """
    if which not in ("valid", "test"):
        raise InputError(f"unknown split {which!r}")
    positives, negatives = split.positives(which), split.negatives(which)
    if negatives.ndim != 2 or negatives.shape[1] == 0 or len(negatives) != len(positives):
        raise InputError(f"split has no negatives for {which} positives")
    x = _values(features)
    if len(x) != graph.node_count:
        raise InputError("feature rows do not match graph nodes")
    t0 = time.perf_counter()
    if isinstance(scorer, GnnModel):
        if scorer.head != "lp-dot":
            raise InputError("GNN scorer needs an lp-dot head")
        emb = scorer.forward(graph, x)
        name = "gnn"
    elif scorer == "dot":
        emb = x
        name = "dot"
    else:
        raise InputError(f"unknown scorer {scorer!r}")
    pos, neg = score_candidates(emb, positives, negatives)
    ks = sorted({int(k) for k in ks} | {1})
    report = EvalReport(task="lp", scorer=name, split=which, mrr=mrr(pos, neg),
                        hits_at={k: hits_at_k(pos, neg, k) for k in ks})
    report.hits_at_1 = report.hits_at[1]
    report.timing["score_seconds"] = time.perf_counter() - t0
    report.h_f_after = feature_homophily(graph, x).clamped
    if base_features is not None:
        report.h_f_before = feature_homophily(graph, _values(base_features)).clamped
    report.config = {"negatives": int(negatives.shape[1]), "positives": int(len(positives)),
                     "ks": ks}
    return report


def accuracy(predictions, classes) -> float:
    predictions = np.asarray(predictions)
    if predictions.size == 0:
        raise InputError("empty mask")
    return float(np.mean(predictions == np.asarray(classes)))


def evaluate_nc(model: GnnModel, graph: Graph, features, labels: NodeLabels,
                which: str = "test") -> EvalReport:
    """Accuracy of argmax predictions on the ``which`` mask."""
    nodes = labels.mask(which)
    if len(nodes) == 0:
        raise InputError(f"empty {which} mask")
    if model.head != "nc-softmax":
        raise InputError("node classification needs an nc-softmax head")
    x = _values(features)
    t0 = time.perf_counter()
    pred = model.forward(graph, x)[nodes].argmax(1)
    report = EvalReport(task="nc", scorer="gnn", split=which,
                        accuracy=accuracy(pred, labels.classes[nodes]))
    report.timing["score_seconds"] = time.perf_counter() - t0
    report.h_f_after = feature_homophily(graph, x).clamped
    report.config = {"nodes": int(len(nodes)), "num_classes": labels.num_classes}
    return report


__all__ = ["EvalReport", "evaluate_lp", "evaluate_nc", "mrr", "hits_at_k", "ranks",
           "reports_to_csv", "accuracy", "score_candidates"]
