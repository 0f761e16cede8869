"""Heads: center rules, tanh membership, BCE loss, one-shot equivalence."""

import numpy as np
import pytest

from fsocc.autodiff import Tensor, grad_check
from fsocc.encoder import init_encoder
from fsocc.episodes import Episode, EpisodeConfig, sample_episode, synthetic_splits
from fsocc.errors import ConfigError
from fsocc.heads import HEADS, classify, compute_center, episode_forward, score_queries


def identity_params(dim):
    params = init_encoder("mlp", (dim,), seed=0, hidden_dim=dim)
    params.weights["fc1_w"] = np.eye(dim)
    params.weights["fc2_w"] = np.eye(dim)
    params.weights["fc1_b"] = np.zeros(dim)
    params.weights["fc2_b"] = np.zeros(dim)
    return params


def make_episode(support, queries, labels):
    return Episode(
        target_class=0,
        negative_class=1,
        support=np.asarray(support, dtype=np.float64),
        queries=np.asarray(queries, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        seed=0,
    )


def test_center_single_support_both_heads():
    z = Tensor(np.array([[2.0, -1.0]]))
    for head in HEADS:
        assert np.array_equal(compute_center(head, z).data, [2.0, -1.0])


def test_center_collinear_coincidence():
    z = Tensor(np.array([[0.0], [1.0], [2.0]]))
    assert compute_center("oc_protonet", z).data == pytest.approx([1.0], abs=0.0)
    assert compute_center("meta_svdd", z).data == pytest.approx([1.0], abs=1e-6)


def test_center_heads_genuinely_differ():
    z = Tensor(np.array([[0.0], [0.0], [3.0]]))
    assert compute_center("oc_protonet", z).data == pytest.approx([1.0], abs=0.0)
    assert compute_center("meta_svdd", z, lam=0.0).data == pytest.approx([1.5], abs=1e-12)
    assert compute_center("meta_svdd", z).data == pytest.approx([1.5], abs=1e-6)


def test_unknown_head_rejected():
    with pytest.raises(ConfigError):
        compute_center("svm", Tensor(np.ones((2, 2))))


def test_membership_half_at_atanh_half():
    params = identity_params(1)
    d = np.sqrt(np.arctanh(0.5))
    episode = make_episode([[0.0]], [[d]], [1])
    out = episode_forward("oc_protonet", params, episode)
    assert out.distances_sq[0] == pytest.approx(np.arctanh(0.5), abs=1e-12)
    assert out.probabilities[0] == pytest.approx(0.5, abs=1e-12)


def test_query_at_center_loss_is_clamp_sized():
    params = identity_params(2)
    episode = make_episode([[0.5, 0.5]], [[0.5, 0.5]], [1])
    out = episode_forward("oc_protonet", params, episode)
    assert out.probabilities[0] == 1.0
    assert float(out.loss.data) == pytest.approx(-np.log(1.0 - 1e-7), rel=1e-6)


def test_far_negative_query_loss_is_tiny():
    params = identity_params(1)
    episode = make_episode([[0.0]], [[4.0]], [0])  # d^2 = 16 >= 10
    out = episode_forward("oc_protonet", params, episode)
    assert out.probabilities[0] <= 1e-4
    assert float(out.loss.data) <= 1e-4


def test_loss_at_chance_is_ln2():
    params = identity_params(1)
    d = np.sqrt(np.arctanh(0.5))
    episode = make_episode([[1.0]], [[1.0 + d], [1.0 - d]], [1, 0])
    for head in HEADS:
        out = episode_forward(head, params, episode)
        assert out.probabilities == pytest.approx([0.5, 0.5], abs=1e-12)
        assert float(out.loss.data) == pytest.approx(np.log(2.0), abs=1e-9)


def test_probability_strictly_decreasing_in_distance():
    params = identity_params(1)
    xs = np.linspace(0.0, 3.0, 13)[:, None]
    episode = make_episode([[0.0]], xs, [1] * 13)
    out = episode_forward("oc_protonet", params, episode)
    assert (np.diff(out.probabilities) < 0).all()


def test_probabilities_equal_one_minus_tanh():
    params = init_encoder("mlp", (3,), seed=1, hidden_dim=6)
    rng = np.random.default_rng(1)
    episode = make_episode(rng.standard_normal((4, 3)), rng.standard_normal((6, 3)),
                           [1, 1, 1, 0, 0, 0])
    for head in HEADS:
        out = episode_forward(head, params, episode)
        assert np.abs(out.probabilities - (1.0 - np.tanh(out.distances_sq))).max() <= 1e-12
        assert float(out.loss.data) >= 0.0


def test_one_shot_outputs_bit_identical():
    splits = synthetic_splits((6, 2, 2), per_class=20, input_dim=4,
                              cluster_spread=0.2, seed=2)
    params = init_encoder("mlp", (4,), seed=2, hidden_dim=8)
    config = EpisodeConfig(shot=1, query_per_side=4)
    for k in range(50):
        episode = sample_episode(splits["train"], config, 1000 + k)
        a = episode_forward("meta_svdd", params, episode)
        b = episode_forward("oc_protonet", params, episode)
        assert np.array_equal(a.center, b.center)
        assert np.array_equal(a.probabilities, b.probabilities)
        assert np.array_equal(a.distances_sq, b.distances_sq)
        assert np.array_equal(a.loss.data, b.loss.data)


def test_episode_loss_gradients_both_heads():
    splits = synthetic_splits((4, 2, 2), per_class=12, input_dim=3,
                              cluster_spread=0.1, seed=3)
    params = init_encoder("mlp", (3,), seed=3, hidden_dim=6)
    episode = sample_episode(splits["train"], EpisodeConfig(shot=4, query_per_side=2), 17)
    for head in HEADS:
        for probe in params.weights:
            def f(t, probe=probe):
                bound = {
                    name: (t if name == probe else Tensor(arr))
                    for name, arr in params.weights.items()
                }
                return episode_forward(head, params, episode, bound=bound).loss

            assert grad_check(f, params.weights[probe], 1e-5) <= 1e-3, (head, probe)


def test_classify_monotone_and_order_invariant():
    params = identity_params(2)
    support = np.array([[0.0, 0.0], [0.2, 0.1], [0.1, 0.3]])
    for head in HEADS:
        near = classify(head, params, support, support[0])
        far = classify(head, params, support, support[0] + 5.0)
        assert near >= far
        shuffled = classify(head, params, support[::-1].copy(), support[0])
        assert shuffled == pytest.approx(near, abs=1e-12)


def test_classify_accepts_other_shot_counts():
    params = init_encoder("mlp", (3,), seed=4, hidden_dim=6)
    rng = np.random.default_rng(4)
    for head in HEADS:
        score5 = classify(head, params, rng.standard_normal((5, 3)), rng.standard_normal(3))
        score10 = classify(head, params, rng.standard_normal((10, 3)), rng.standard_normal(3))
        assert 0.0 <= score5 <= 1.0 and 0.0 <= score10 <= 1.0


def test_score_queries_matches_episode_forward_eval():
    params = init_encoder("mlp", (3,), seed=5, hidden_dim=6)
    rng = np.random.default_rng(5)
    support = rng.standard_normal((4, 3))
    queries = rng.standard_normal((6, 3))
    episode = make_episode(support, queries, [1, 0, 1, 0, 1, 0])
    for head in HEADS:
        scores = score_queries(head, params, support, queries)
        out = episode_forward(head, params, episode)
        assert np.array_equal(scores, out.probabilities)
