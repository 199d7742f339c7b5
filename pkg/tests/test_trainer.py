import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphfeat.adapter import Adapter, AdapterSpec, kaiming_uniform
from graphfeat.errors import InputError
from graphfeat.graph import FeatureMatrix, split_edges
from graphfeat.optim import Adam, clip_global_norm, global_norm
from graphfeat.synth import SynthSpec, generate
from graphfeat.trainer import (TrainConfig, TrainLog, loss_and_grad, run_epochs,
                               structure_loss, structure_loss_grad, structure_loss_terms,
                               touchup)

from oracles import central_difference, max_relative_error


def _logits_batch(pos, neg):
    """One-dimensional embeddings whose dot products equal the given logits."""
    return np.array([[1.0]]), np.array([[pos]]), np.array([[neg]])


# ------------------------------------------------------------------- loss

def test_loss_zero_logits():
    assert structure_loss(*_logits_batch(0.0, 0.0)) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_loss_reference_value():
    # -(ln s(2) + ln(1 - s(-1))) evaluated by a standalone scalar script
    assert structure_loss(*_logits_batch(2.0, -1.0)) == pytest.approx(0.44018969856119544, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30), st.floats(0.01, 5), st.floats(-30, 30))
def test_loss_decreases_in_positive_logit(pos, step, neg):
    lo = structure_loss(*_logits_batch(pos, neg))
    hi = structure_loss(*_logits_batch(pos + step, neg))
    assert hi <= lo


def test_loss_is_finite_for_extreme_logits():
    assert math.isfinite(structure_loss(*_logits_batch(-800.0, 800.0)))


def test_loss_rejects_mismatched_batches():
    with pytest.raises(InputError):
        structure_loss(np.ones((2, 3)), np.ones((1, 3)), np.ones((2, 3)))


def test_multi_negative_loss_averages_negatives(rng):
    yu, yv = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    yn = rng.standard_normal((4, 2, 3))
    a = structure_loss_terms(yu, yv, yn[:, 0])[0]
    b = structure_loss_terms(yu, yv, yn[:, 1])[0]
    pos_part = -np.mean(-np.logaddexp(0, -np.einsum("ij,ij->i", yu, yv)))
    both = structure_loss_terms(yu, yv, yn)[0]
    assert both == pytest.approx(pos_part + ((a - pos_part) + (b - pos_part)) / 2, abs=1e-12)


# -------------------------------------------------------------- gradients

def _random_adapter(rng, kind, d_in, d_out, hidden):
    a = Adapter(kind, d_in, d_out, hidden)
    for k, s in a.shapes().items():
        a.params[k] = rng.standard_normal(s) * 0.5
    return a


@pytest.mark.parametrize("seed", range(20))
def test_adapter_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    kind = ("linear", "mlp")[seed % 2]
    n, d_in, d_out = 30, int(rng.integers(2, 6)), int(rng.integers(2, 6))
    adapter = _random_adapter(rng, kind, d_in, d_out, int(rng.integers(2, 6)))
    x = rng.standard_normal((n, d_in))
    batch = rng.integers(0, n, size=(16, 3))
    _, grads = loss_and_grad(adapter, x, batch)
    numeric = central_difference(lambda: loss_and_grad(adapter, x, batch)[0], adapter.params)
    assert max_relative_error(grads, numeric) < 1e-4


def test_zero_linear_adapter_gradient():
    rng = np.random.default_rng(0)
    adapter = Adapter("linear", 4, 3)
    x = rng.standard_normal((10, 4))
    batch = rng.integers(0, 10, size=(8, 3))
    assert np.all(adapter.forward(x) == 0)
    loss, grads = loss_and_grad(adapter, x, batch)
    assert loss == pytest.approx(2 * math.log(2), abs=1e-12)
    numeric = central_difference(lambda: loss_and_grad(adapter, x, batch)[0], adapter.params)
    assert max_relative_error(grads, numeric) < 1e-4


def test_duplicated_triple_doubles_its_contribution(rng):
    adapter = _random_adapter(rng, "mlp", 4, 3, 5)
    x = rng.standard_normal((12, 4))
    t, s = [1, 2, 3], [4, 5, 6]

    def summed(batch):
        g = structure_loss_grad(adapter, FeatureMatrix(x.astype(np.float32)), batch)
        return {k: v * len(batch) for k, v in g.items()}

    single, other, dup = summed([t]), summed([s]), summed([t, t, s])
    for k in single:
        np.testing.assert_allclose(dup[k], 2 * single[k] + other[k], rtol=1e-10, atol=1e-12)


# -------------------------------------------------------------- optimizer

def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    before = clip_global_norm(grads, 1.0)
    assert before == pytest.approx(5.0)
    assert global_norm(grads) == pytest.approx(1.0)
    small = {"a": np.array([0.1])}
    clip_global_norm(small, 1.0)
    assert small["a"][0] == 0.1


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0])}
    Adam(params, lr=0.1).step({"w": np.array([5.0, -0.01])})
    np.testing.assert_allclose(params["w"], [0.9, -1.9], atol=1e-6)


def test_kaiming_uniform_bounds(rng):
    w = kaiming_uniform(24, (24, 1000), rng)
    assert np.abs(w).max() <= math.sqrt(6 / 24)
    assert np.abs(w).max() > 0.9 * math.sqrt(6 / 24)


# ----------------------------------------------------------------- adapter

def test_adapter_parameter_counts():
    assert Adapter("linear", 7, 3).parameter_count == 7 * 3 + 3
    assert Adapter("mlp", 7, 3, 5).parameter_count == 7 * 5 + 5 + 5 * 3 + 3


def test_adapter_spec_defaults(rng):
    a = Adapter.from_spec(AdapterSpec("mlp"), 6, rng)
    assert (a.hidden_dim, a.output_dim) == (6, 6)
    b = Adapter.from_spec(AdapterSpec("mlp", output_dim=4), 6, rng)
    assert (b.hidden_dim, b.output_dim) == (4, 4)
    assert np.all(b.params["b1"] == 0) and np.all(b.params["b2"] == 0)


@pytest.mark.parametrize("kind", ["linear", "mlp"])
def test_adapter_checkpoint_round_trip(tmp_path, rng, kind):
    a = Adapter.from_spec(AdapterSpec(kind, 5, 7), 9, rng)
    a.save(tmp_path / "a.tuga")
    b = Adapter.load(tmp_path / "a.tuga")
    assert (b.kind, b.input_dim, b.hidden_dim, b.output_dim) == (a.kind, 9, a.hidden_dim, 5)
    for k in a.shapes():
        np.testing.assert_array_equal(b.params[k], a.params[k].astype(np.float32))
    b.save(tmp_path / "b.tuga")
    assert (tmp_path / "a.tuga").read_bytes() == (tmp_path / "b.tuga").read_bytes()
    raw = (tmp_path / "a.tuga").read_bytes()
    assert raw[:4] == b"TUGA"
    assert len(raw) == 4 + 4 + 1 + 24 + 4 * a.parameter_count


def test_adapter_checkpoint_truncated(tmp_path, rng):
    Adapter.from_spec(AdapterSpec("linear"), 3, rng).save(tmp_path / "a.tuga")
    raw = (tmp_path / "a.tuga").read_bytes()
    (tmp_path / "a.tuga").write_bytes(raw[:-2])
    with pytest.raises(InputError, match="truncated"):
        Adapter.load(tmp_path / "a.tuga")


# ------------------------------------------------------------ epoch loop

def test_run_epochs_returns_best_snapshot():
    scores = [0.1, 0.5, 0.3, 0.2, 0.9]
    state = {"epoch": 0}
    log = TrainLog()

    def train(epoch):
        state["epoch"] = epoch
        return 1.0 / epoch

    best = run_epochs(TrainConfig(max_epochs=5, patience=1), train,
                      lambda e: scores[e - 1], lambda: dict(state), log)
    # epoch 3 and 4 fail to improve, so the loop stops before the 0.9
    assert [r.epoch for r in log.epochs] == [1, 2, 3, 4]
    assert best == {"epoch": 2}
    assert log.best_epoch == 2


def test_ties_do_not_count_as_improvement():
    log = TrainLog()
    best = run_epochs(TrainConfig(max_epochs=5, patience=0), lambda e: 0.0,
                      lambda e: 0.5, lambda: "snap", log)
    assert len(log.epochs) == 2 and log.best_epoch == 1 and best == "snap"


def test_tuple_scores_break_ties_lexicographically():
    keys = [(0.9, -0.5), (0.9, -0.3), (0.8, -0.1), (0.9, -0.3)]
    log = TrainLog()
    best = run_epochs(TrainConfig(max_epochs=4, patience=5), lambda e: 0.0,
                      lambda e: keys[e - 1], lambda: len(log.epochs), log)
    assert log.best_epoch == 2 and best == 2
    assert [r.valid_score for r in log.epochs] == [0.9, 0.9, 0.8, 0.9]


@pytest.fixture(scope="module")
def small_task():
    data = generate(SynthSpec(kind="planted", n=300, d=8, communities=3, p_in=0.15,
                              p_out=0.01, noise_sigma=1.0, corruption="shuffle-rows", seed=3))
    graph_train, split = split_edges(data.graph, negatives_per_edge=20, seed=0)
    return data, graph_train, split


def test_touchup_injected_validation_picks_best_epoch(small_task):
    data, graph_train, split = small_task
    sequence = [0.2, 0.4, 0.9, 0.1, 0.3, 0.5]
    seen = {}

    def validator(adapter, epoch):
        seen[epoch] = adapter.copy()
        return sequence[epoch - 1]

    cfg = TrainConfig(learning_rate=1e-2, max_epochs=6, patience=10, seed=1)
    best, touched, log = touchup(graph_train, data.features, split, config=cfg, validator=validator)
    assert len(log.epochs) == 6 and log.best_epoch == 3
    for k in best.params:
        np.testing.assert_array_equal(best.params[k], seen[3].params[k])
        assert not np.array_equal(best.params[k], seen[6].params[k])
    np.testing.assert_array_equal(touched.values, seen[3].forward(data.features.values).astype(np.float32))


def test_touchup_single_epoch(small_task):
    data, graph_train, split = small_task
    seen = {}

    def validator(adapter, epoch):
        seen[epoch] = adapter.copy()
        return 0.0

    cfg = TrainConfig(max_epochs=1, patience=0)
    best, touched, log = touchup(graph_train, data.features, split, config=cfg, validator=validator)
    assert len(log.epochs) == 1
    np.testing.assert_array_equal(touched.values, seen[1].forward(data.features.values).astype(np.float32))


def test_touchup_is_deterministic(small_task):
    data, graph_train, split = small_task
    cfg = TrainConfig(max_epochs=4, seed=9)
    a = touchup(graph_train, data.features, split, config=cfg)
    b = touchup(graph_train, data.features, split, config=cfg)
    assert [r.loss for r in a[2].epochs] == [r.loss for r in b[2].epochs]
    assert a[2].to_jsonl(False) == b[2].to_jsonl(False)
    assert a[1].values.tobytes() == b[1].values.tobytes()


def test_touchup_never_trains_on_held_out_edges(small_task):
    data, graph_train, split = small_task
    held = {tuple(sorted(e)) for name in ("valid", "test") for e in split.positives(name).tolist()}
    full = split.full_graph(graph_train.node_count)
    triples = []
    cfg = TrainConfig(max_epochs=3, negatives_per_edge=2, batch_size=32)
    touchup(graph_train, data.features, split, config=cfg,
            on_batch=lambda epoch, i, t: triples.append(t.copy()))
    t = np.concatenate(triples)
    assert not any(tuple(sorted(p)) in held for p in t[:, :2].tolist())
    assert graph_train.has_edges(t[:, 0], t[:, 1]).all()
    for col in (2, 3):
        assert not full.has_edges(t[:, 0], t[:, col]).any()
        assert not (t[:, 0] == t[:, col]).any()


def test_touchup_rejects_leaky_training_graph(small_task):
    data, _, split = small_task
    with pytest.raises(InputError, match="contains"):
        touchup(data.graph, data.features, split, config=TrainConfig(max_epochs=1))


def test_touchup_output_shape_and_finiteness(small_task):
    data, graph_train, split = small_task
    adapter, touched, log = touchup(graph_train, data.features, split, AdapterSpec("linear", 5),
                                    TrainConfig(max_epochs=2))
    assert touched.values.shape == (300, 5) and touched.values.dtype == np.float32
    assert np.isfinite(touched.values).all()
    assert log.final_h_f is not None
    lines = log.to_jsonl().strip().splitlines()
    assert len(lines) == 2 and '"valid_score"' in lines[0]


def test_training_on_matching_graph_reduces_loss():
    data = generate(SynthSpec(kind="fig2a", n=4000, d=8, seed=0))
    graph_train, split = split_edges(data.graph, negatives_per_edge=5, seed=0)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=5, patience=10, seed=0)
    _, _, log = touchup(graph_train, data.features, split, AdapterSpec("mlp"), cfg,
                        validator=lambda a, e: float(e))
    losses = [r.loss for r in log.epochs]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.6 * losses[0]


def test_train_config_validation():
    with pytest.raises(InputError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InputError):
        TrainConfig(valid_subsample_frac=1.5)
    with pytest.raises(InputError):
        TrainConfig(patience=-1)
