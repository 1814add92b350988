import math

import numpy as np
import pytest

from bichunter.gcnrank import (
    ModelError,
    RankModel,
    backward,
    forward,
    init_rank_model,
    load_checkpoint,
    pair_batch_loss,
    pair_loss,
    pair_prob,
    pair_targets,
    save_checkpoint,
)
from bichunter.graphbuild import normalized_operator


def random_graph_inputs(seed, n=6, input_dim=5, n_deleted=4):
    rng = np.random.RandomState(seed)
    adjacency = rng.rand(n, n) * (rng.rand(n, n) < 0.5)
    adjacency = np.triu(adjacency, 1)
    adjacency = adjacency + adjacency.T
    operator = normalized_operator(adjacency)
    features = rng.randn(n, input_dim)
    labels = [bool(rng.randint(2)) for _ in range(n_deleted)]
    pairs = [
        (i, j, pair_targets(labels[i], labels[j]))
        for i in range(n_deleted)
        for j in range(i + 1, n_deleted)
    ]
    return operator, features, pairs


class TestPairProb:
    def test_equal_scores_half(self):
        assert pair_prob(1.7, 1.7) == 0.5

    def test_log3_gap_three_quarters(self):
        assert pair_prob(math.log(3), 0.0) == pytest.approx(0.75, abs=1e-15)

    def test_huge_gap_no_overflow(self):
        assert pair_prob(1000.0, 0.0) == 1.0
        assert pair_prob(0.0, 1000.0) == 0.0

    def test_antisymmetry(self):
        rng = np.random.RandomState(0)
        for _ in range(200):
            a, b = rng.randn(2) * 10
            assert abs(pair_prob(a, b) + pair_prob(b, a) - 1.0) <= 1e-15

    def test_depends_only_on_difference(self):
        rng = np.random.RandomState(1)
        for _ in range(100):
            a, b, shift = rng.randn(3)
            assert pair_prob(a + shift, b + shift) == pytest.approx(
                pair_prob(a, b), abs=1e-12
            )


class TestPairTargets:
    def test_orientation(self):
        assert pair_targets(True, False) == 1.0
        assert pair_targets(False, True) == 0.0
        assert pair_targets(False, False) == 0.5
        assert pair_targets(True, True) == 0.5


class TestPairLoss:
    def test_half_probability_target_one(self):
        assert pair_loss(0.5, 1.0) == pytest.approx(math.log(2), abs=1e-15)

    def test_half_probability_target_half(self):
        assert pair_loss(0.5, 0.5) == pytest.approx(math.log(2), abs=1e-15)

    def test_direct_evaluation(self):
        expected = -0.9 * math.log(0.9) - 0.1 * math.log(0.1)
        assert pair_loss(0.9, 0.9) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.325083, abs=1e-6)

    def test_clamping_avoids_log_zero(self):
        assert math.isfinite(pair_loss(0.0, 1.0))
        assert math.isfinite(pair_loss(1.0, 0.0))

    def test_minimized_at_target(self):
        for target in (0.0, 0.3, 0.5, 0.9, 1.0):
            at_target = pair_loss(min(max(target, 1e-12), 1 - 1e-12), target)
            for p in np.linspace(0.01, 0.99, 49):
                assert pair_loss(p, target) >= at_target - 1e-12


class TestForward:
    def test_single_node_single_feature_score_is_head_bias(self):
        model = RankModel(
            weights=[np.array([[1.0]])],
            ln_gain=np.ones(1),
            ln_bias=np.zeros(1),
            head_w=np.array([2.0]),
            head_b=np.array([0.75]),
        )
        scores, _ = forward(model, np.array([[1.0]]), np.array([[1.0]]), 1)
        # one feature normalizes to 0, so only the head bias survives
        assert scores.tolist() == [0.75]

    def test_zero_weights_equalize_scores(self):
        operator, features, _ = random_graph_inputs(0)
        model = init_rank_model(5, 4, n_layers=2, seed=0)
        for w in model.weights:
            w[:] = 0.0
        scores, _ = forward(model, operator, features, 4)
        assert np.allclose(scores, scores[0])

    def test_matches_straight_line_oracle(self):
        for seed in range(5):
            operator, features, _ = random_graph_inputs(seed)
            model = init_rank_model(5, 4, n_layers=2, seed=seed)
            scores, _ = forward(model, operator, features, 4)

            hidden = features
            for w in model.weights:
                hidden = np.maximum(operator @ hidden @ w, 0.0)
            mean = hidden.mean(axis=1, keepdims=True)
            var = hidden.var(axis=1, keepdims=True)
            x_hat = (hidden - mean) / np.sqrt(var + model.ln_eps)
            normed = x_hat * model.ln_gain + model.ln_bias
            expected = normed @ model.head_w + model.head_b[0]
            assert np.allclose(scores, expected[:4], atol=1e-10)

    def test_permutation_equivariance(self):
        operator, features, _ = random_graph_inputs(3)
        model = init_rank_model(5, 4, n_layers=2, seed=3)
        scores, _ = forward(model, operator, features, 6)
        perm = np.random.RandomState(9).permutation(6)
        p_matrix = np.eye(6)[perm]
        permuted_scores, _ = forward(
            model, p_matrix @ operator @ p_matrix.T, features[perm], 6
        )
        assert np.allclose(permuted_scores, scores[perm], atol=1e-12)

    def test_shape_mismatch(self):
        model = init_rank_model(5, 4, seed=0)
        with pytest.raises(ModelError):
            forward(model, np.eye(3), np.zeros((3, 7)), 2)
        with pytest.raises(ModelError):
            forward(model, np.eye(4), np.zeros((3, 5)), 2)


def finite_difference_grads(model, operator, features, n_deleted, pairs, eps=1e-4):
    grads = {}
    for name, param in model.params().items():
        grad = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = param[idx]
            param[idx] = original + eps
            s, _ = forward(model, operator, features, n_deleted)
            up, _ = pair_batch_loss(s, pairs)
            param[idx] = original - eps
            s, _ = forward(model, operator, features, n_deleted)
            down, _ = pair_batch_loss(s, pairs)
            param[idx] = original
            grad[idx] = (up - down) / (2 * eps)
            it.iternext()
        grads[name] = grad
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        a = analytic[name].ravel()
        f = numeric[name].ravel()
        for x, y in zip(a, f):
            denom = max(abs(x), abs(y))
            err = abs(x - y) / denom if denom > 1e-6 else abs(x - y)
            worst = max(worst, err)
    return worst


class TestBackward:
    def test_zero_gradient_at_equal_scores_and_half_targets(self):
        operator, features, _ = random_graph_inputs(1)
        model = init_rank_model(5, 4, n_layers=2, seed=1)
        for w in model.weights:
            w[:] = 0.0  # all scores equal
        pairs = [(0, 1, 0.5), (1, 2, 0.5), (0, 3, 0.5)]
        scores, cache = forward(model, operator, features, 4)
        grads = backward(model, operator, features, pairs, cache)
        assert np.allclose(grads["head_w"], 0.0)

    def test_finite_differences_twenty_seeds(self):
        for seed in range(20):
            operator, features, pairs = random_graph_inputs(seed)
            model = init_rank_model(5, 4, n_layers=2, seed=seed)
            scores, cache = forward(model, operator, features, 4)
            analytic = backward(model, operator, features, pairs, cache)
            numeric = finite_difference_grads(model, operator, features, 4, pairs)
            assert max_relative_error(analytic, numeric) <= 1e-4

    def test_duplicated_pair_equals_single_pair(self):
        operator, features, _ = random_graph_inputs(2)
        model = init_rank_model(5, 4, n_layers=2, seed=2)
        single = [(0, 1, 1.0)]
        doubled = [(0, 1, 1.0), (0, 1, 1.0)]
        _, cache = forward(model, operator, features, 4)
        g1 = backward(model, operator, features, single, cache)
        g2 = backward(model, operator, features, doubled, cache)
        for name in g1:
            assert np.allclose(g1[name], g2[name], atol=1e-15)

    def test_batch_loss_empty_pairs(self):
        loss, grad = pair_batch_loss(np.array([1.0, 2.0]), [])
        assert loss == 0.0
        assert grad.tolist() == [0.0, 0.0]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = init_rank_model(7, 5, n_layers=3, seed=4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, meta={"seed": 4, "config_hash": "abc"})
        loaded, header = load_checkpoint(path)
        assert header["seed"] == 4
        assert header["n_layers"] == 3
        assert loaded.input_dim == 7
        for original, restored in zip(model.params().values(),
                                      loaded.params().values()):
            assert np.array_equal(original.astype("<f4"), restored.astype("<f4"))

    def test_save_is_deterministic(self, tmp_path):
        model = init_rank_model(4, 3, seed=1)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1, meta={"seed": 1})
        save_checkpoint(model, p2, meta={"seed": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_rejected(self, tmp_path):
        model = init_rank_model(4, 3, seed=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ModelError, match="truncated"):
            load_checkpoint(path)


class TestInit:
    def test_layer_count_bounds(self):
        with pytest.raises(ModelError):
            init_rank_model(4, 3, n_layers=0)
        with pytest.raises(ModelError):
            init_rank_model(4, 3, n_layers=5)

    def test_seed_reproducibility(self):
        m1 = init_rank_model(6, 4, seed=9)
        m2 = init_rank_model(6, 4, seed=9)
        for a, b in zip(m1.params().values(), m2.params().values()):
            assert np.array_equal(a, b)
