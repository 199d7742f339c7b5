import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphfeat.errors import InputError
from graphfeat.graph import FeatureMatrix, Graph
from graphfeat.metrics import (feature_homophily, feature_smoothness, mean_edge_cosine,
                               metrics_report)
from graphfeat.synth import SynthSpec, generate

from conftest import random_graph
from oracles import cosine_loop, homophily_loop, smoothness_loop

TWO_EDGES = Graph.from_edges(4, [(0, 1), (2, 3)])


def test_identical_endpoints_give_one():
    x = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], float)
    assert feature_homophily(TWO_EDGES, x).h_f == pytest.approx(1.0, abs=1e-12)


def test_complementary_endpoints_give_minus_one():
    x = np.array([[1, 0], [0, 1], [0, 1], [1, 0]], float)
    h = feature_homophily(TWO_EDGES, x)
    assert h.h_f == pytest.approx(-1.0, abs=1e-12)
    assert np.allclose(h.edge_mean, [0.5, 0.5])
    assert mean_edge_cosine(TWO_EDGES, x).mean_cosine == 0.0


def test_path_graph_values(path_graph):
    g, x = path_graph
    assert feature_homophily(g, x).h_f == pytest.approx(-1 / 3, abs=1e-9)
    assert feature_smoothness(g, x).lambda_f == pytest.approx(1.0, abs=1e-9)


def test_path_graph_oracle_agreement(path_graph):
    g, x = path_graph
    edges = g.edges().tolist()
    assert homophily_loop(edges, x.values) == pytest.approx(-1 / 3, abs=1e-12)
    assert smoothness_loop(3, edges, x.values) == pytest.approx(1.0, abs=1e-12)


def test_constant_features_undefined():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    x = np.tile([0.3, -2.0], (4, 1))
    h = feature_homophily(g, x)
    assert not h.defined
    assert h.h_f is None and h.clamped is None
    assert feature_smoothness(g, x).lambda_f == 0.0
    assert metrics_report(g, x)["defined"] is False


def test_smoothness_scales_quadratically(rng):
    g = Graph.from_edges(30, random_graph(rng, 30, 0.2))
    x = rng.standard_normal((30, 5))
    base = feature_smoothness(g, x).lambda_f
    assert feature_smoothness(g, 3.0 * x).lambda_f == pytest.approx(9.0 * base, rel=1e-12)


def test_smoothness_zero_iff_components_constant():
    g = Graph.from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    x = np.array([[1, 1]] * 3 + [[5, -2]] * 3, float)
    assert feature_smoothness(g, x).lambda_f == 0.0
    x[4, 0] += 1e-3
    assert feature_smoothness(g, x).lambda_f > 0.0


def test_cosine_fig2a_is_one():
    data = generate(SynthSpec(kind="fig2a", n=100, d=8, seed=1))
    assert mean_edge_cosine(data.graph, data.features).mean_cosine == pytest.approx(1.0, abs=1e-6)


def test_cosine_matches_loop(rng):
    g = Graph.from_edges(50, random_graph(rng, 50, 0.1))
    x = rng.standard_normal((50, 6))
    x[3] = 0.0
    got = mean_edge_cosine(g, x)
    assert got.mean_cosine == pytest.approx(cosine_loop(g.edges().tolist(), x), abs=1e-12)
    assert got.zero_norm_edges == int(g.degrees[3])


def test_homophily_matches_loop_on_random_graph(rng):
    g = Graph.from_edges(40, random_graph(rng, 40, 0.15))
    x = rng.standard_normal((40, 4)) + 0.5
    want = homophily_loop(g.edges().tolist(), x)
    assert feature_homophily(g, x).h_f == pytest.approx(want, abs=1e-12)


def test_smoothness_matches_loop_on_random_graph(rng):
    g = Graph.from_edges(40, random_graph(rng, 40, 0.15))
    x = rng.standard_normal((40, 4))
    want = smoothness_loop(40, g.edges().tolist(), x)
    assert feature_smoothness(g, x).lambda_f == pytest.approx(want, rel=1e-12)


def test_sign_flip_on_matching_graph():
    data = generate(SynthSpec(kind="fig2a", n=100, d=8, seed=2))
    x = data.features.values.astype(np.float64)
    assert feature_homophily(data.graph, x).h_f == pytest.approx(1.0, abs=1e-9)
    x[1::2] *= -1
    assert feature_homophily(data.graph, x).h_f == pytest.approx(-1.0, abs=1e-9)


def test_orientation_and_storage_order_invariance(rng):
    edges = random_graph(rng, 40, 0.15)
    x = rng.standard_normal((40, 3))
    a = feature_homophily(Graph.from_edges(40, edges), x).h_f
    shuffled = edges[rng.permutation(len(edges))]
    flip = rng.random(len(edges)) < 0.5
    shuffled[flip] = shuffled[flip][:, ::-1]
    b = feature_homophily(Graph.from_edges(40, shuffled), x).h_f
    assert abs(a - b) < 1e-9


def test_parallel_matches_sequential(rng):
    g = Graph.from_edges(300, random_graph(rng, 300, 0.05))
    x = rng.standard_normal((300, 7))
    seq = metrics_report(g, x, threads=1)
    for fn, key in ((feature_homophily, "h_f"), (feature_smoothness, "lambda_f"),
                    (mean_edge_cosine, "mean_cosine")):
        par = getattr(fn(g, x, threads=4, chunk=37), key)
        assert par == pytest.approx(seq[key], rel=1e-9)


def test_metrics_report_fields(path_graph):
    g, x = path_graph
    rep = metrics_report(g, x)
    assert set(rep) == {"h_f", "defined", "lambda_f", "mean_cosine", "nodes", "edges", "dim"}
    assert (rep["nodes"], rep["edges"], rep["dim"]) == (3, 2, 2)


def test_metrics_reject_mismatch_and_empty_graph():
    with pytest.raises(InputError):
        feature_homophily(TWO_EDGES, np.zeros((3, 2)))
    with pytest.raises(InputError):
        feature_homophily(Graph.from_edges(3, np.empty((0, 2))), np.ones((3, 2)))


def test_accepts_feature_matrix_and_arrays(path_graph):
    g, x = path_graph
    assert feature_homophily(g, x).h_f == feature_homophily(g, x.values).h_f


@st.composite
def graph_and_features(draw):
    n = draw(st.integers(2, 200))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    p = draw(st.floats(0.01, 0.5))
    edges = random_graph(rng, n, p)
    if len(edges) == 0:
        edges = np.array([[0, 1]])
    d = draw(st.integers(1, 6))
    scale = draw(st.sampled_from([1e-3, 1.0, 1e3]))
    x = rng.standard_normal((n, d)) * scale
    if draw(st.booleans()):
        x = np.round(x)
    return Graph.from_edges(n, edges), x


@settings(max_examples=150, deadline=None)
@given(graph_and_features())
def test_bounds_property(case):
    g, x = case
    h = feature_homophily(g, x)
    if h.defined:
        assert -1 - 1e-9 <= h.h_f <= 1 + 1e-9
    assert feature_smoothness(g, x).lambda_f >= 0.0
    assert -1 - 1e-9 <= mean_edge_cosine(g, x).mean_cosine <= 1 + 1e-9


@settings(max_examples=100, deadline=None)
@given(graph_and_features(), st.floats(-50, 50), st.floats(1e-3, 1e3))
def test_translation_and_scale_invariance(case, shift, scale):
    g, x = case
    h = feature_homophily(g, x)
    if not h.defined:
        return
    moved = feature_homophily(g, x + shift).h_f
    assert abs(moved - h.h_f) < 1e-6
    assert abs(feature_homophily(g, x * scale).h_f - h.h_f) < 1e-9
