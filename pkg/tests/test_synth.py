import numpy as np
import pytest

from graphfeat.errors import InputError
from graphfeat.graph import load_edge_list, load_features, load_labels
from graphfeat.metrics import feature_homophily, mean_edge_cosine
from graphfeat.synth import SynthSpec, generate, write_dataset


@pytest.fixture(scope="module")
def planted():
    return generate(SynthSpec(kind="planted", seed=0))


def test_fig2a_is_perfectly_homophilous():
    data = generate(SynthSpec(kind="fig2a", n=100, d=8, seed=0))
    assert data.graph.edge_count == 50
    assert abs(feature_homophily(data.graph, data.features).h_f - 1.0) <= 1e-9


def test_fig2b_is_perfectly_heterophilous_with_zero_cosine():
    data = generate(SynthSpec(kind="fig2b", n=100, d=8, seed=0))
    assert abs(feature_homophily(data.graph, data.features).h_f + 1.0) <= 1e-9
    assert abs(mean_edge_cosine(data.graph, data.features).mean_cosine) <= 1e-9
    x = data.features.values
    assert set(np.unique(x).tolist()) == {0.0, 1.0}
    assert np.all(x[0::2] + x[1::2] == 1.0)


def test_er_random_null_distribution():
    inside = 0
    for seed in range(50):
        data = generate(SynthSpec(kind="er-random", n=2000, d=32, p_in=0.01, seed=seed))
        inside += abs(feature_homophily(data.graph, data.features).h_f) < 0.05
    assert inside >= 48


def test_planted_uncorrupted_is_homophilous(planted):
    assert feature_homophily(planted.graph, planted.features).h_f > 0.5


def test_planted_shuffle_destroys_homophily_but_keeps_structure(planted):
    shuffled = generate(SynthSpec(kind="planted", corruption="shuffle-rows", seed=0))
    assert feature_homophily(shuffled.graph, shuffled.features).h_f < 0.1
    assert np.array_equal(shuffled.graph.indices, planted.graph.indices)
    e = shuffled.graph.edges()
    c = shuffled.labels.classes
    assert np.mean(c[e[:, 0]] == c[e[:, 1]]) > 0.8
    # row multiset is preserved
    a = np.sort(shuffled.features.values, axis=0)
    b = np.sort(planted.features.values, axis=0)
    np.testing.assert_array_equal(a, b)


def test_gaussian_overwrite_corruption():
    data = generate(SynthSpec(kind="planted", n=1000, corruption="gaussian-overwrite", seed=1))
    assert abs(feature_homophily(data.graph, data.features).h_f) < 0.1


def test_labels_balanced(planted):
    counts = np.bincount(planted.labels.classes)
    assert counts.max() - counts.min() <= 1
    masks = np.bincount(planted.labels.masks)
    assert masks.tolist() == [3000, 1000, 1000]


def test_edge_density_matches_probabilities(planted):
    e = planted.graph.edges()
    c = planted.labels.classes
    same = np.sum(c[e[:, 0]] == c[e[:, 1]])
    within_pairs = 4 * 1250 * 1249 / 2
    across_pairs = 6 * 1250 * 1250
    assert abs(same / within_pairs - 0.1) < 0.005
    assert abs((len(e) - same) / across_pairs - 0.002) < 0.0005


@pytest.mark.parametrize("kind", ["fig2a", "fig2b", "planted", "er-random"])
def test_deterministic_per_seed(kind):
    spec = SynthSpec(kind=kind, n=200, d=4, p_in=0.05, corruption="shuffle-rows", seed=11)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.graph.indices, b.graph.indices)
    assert a.features.values.tobytes() == b.features.values.tobytes()
    other = generate(SynthSpec(kind=kind, n=200, d=4, p_in=0.05, corruption="shuffle-rows", seed=12))
    assert other.features.values.tobytes() != a.features.values.tobytes()


@pytest.mark.parametrize("spec", [
    SynthSpec(kind="fig2a", n=7),
    SynthSpec(kind="nope"),
    SynthSpec(corruption="blur"),
    SynthSpec(p_in=1.5),
    SynthSpec(noise_sigma=-1.0),
    SynthSpec(communities=0),
])
def test_invalid_specs(spec):
    with pytest.raises(InputError):
        generate(spec)


def test_write_dataset_round_trip(tmp_path):
    data = generate(SynthSpec(kind="planted", n=300, d=5, communities=3, seed=2))
    paths = write_dataset(data, tmp_path)
    g = load_edge_list(paths["graph"], write_remap=False)
    assert g.node_count == 300
    assert np.array_equal(g.indices, data.graph.indices)
    assert load_features(paths["features"], g).values.tobytes() == data.features.values.tobytes()
    labels = load_labels(paths["labels"], g)
    assert np.array_equal(labels.classes, data.labels.classes)
    assert np.array_equal(labels.masks, data.labels.masks)
