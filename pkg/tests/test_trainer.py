import numpy as np
import pytest

from bichunter.baseclf import ClassifierSpec
from bichunter.dataset import kfold_split
from bichunter.embedding import embed_index
from bichunter.gcnrank import init_rank_model
from bichunter.graphbuild import build_commit_graph
from bichunter.synth import as_index, make_sentinel_corpus
from bichunter.trainer import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    generate_pairs,
    init_adam,
    run_cross_project,
    run_kfold,
    train,
)

from conftest import node
from bichunter.dataset import DatasetIndex
from bichunter.embedding import EmbeddingMatrix

# hand-stepped Adam on f(w) = w^2, w0 = 1, lr = 0.1 (computed independently
# with plain Python floats before the optimizer was written)
ADAM_TRAJECTORY = [0.9000000005, 0.8004122286917928, 0.7015862729460303]


def small_corpus(n_commits=12, seed=0):
    nodes, edges = make_sentinel_corpus(n_commits=n_commits, seed=seed)
    index = as_index(nodes, edges)
    embeddings = embed_index(index, dim=32, seed=1)
    return index, embeddings


def fast_config(**overrides):
    base = dict(
        learning_rate=0.02,
        epochs=3,
        seed=5,
        denoise=False,
        n_layers=2,
        hidden_dim=8,
        embed_dim=32,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestConfig:
    def test_rejects_zero_epochs(self):
        with pytest.raises(TrainingError):
            TrainConfig(epochs=0)

    def test_rejects_nonpositive_lr(self):
        with pytest.raises(TrainingError):
            TrainConfig(learning_rate=0.0)

    def test_round_trip_dict(self):
        config = fast_config(classifier=ClassifierSpec(kind="knn", k=3))
        clone = TrainConfig.from_dict(config.to_dict())
        assert clone == config
        assert clone.config_hash() == config.config_hash()

    def test_unknown_key_rejected(self):
        with pytest.raises(TrainingError, match="unknown config key"):
            TrainConfig.from_dict({"learning_rat": 0.1})


class TestGeneratePairs:
    def _graph(self, labels):
        nodes = [
            node(f"c1:d{i}", root_cause=flag, text=f"line {i}")
            for i, flag in enumerate(labels)
        ]
        index = DatasetIndex(nodes, [])
        ids = sorted(index.nodes)
        emb = EmbeddingMatrix(ids, np.zeros((len(ids), 4)))
        return build_commit_graph(index, "c1", emb)

    def test_three_nodes_with_root(self):
        # deleted ids sort as d0 (root), d1, d2
        graph = self._graph([True, False, False])
        pairs = generate_pairs(graph)
        assert pairs == [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 0.5)]

    def test_single_node_empty_batch(self):
        graph = self._graph([True])
        assert generate_pairs(graph) == []

    def test_root_removed_by_denoiser_leaves_half_targets(self):
        graph = self._graph([True, False, False])
        pairs = generate_pairs(graph, kept={"c1:d1", "c1:d2"})
        assert pairs == [(1, 2, 0.5)]


class TestAdam:
    def test_quadratic_trajectory_matches_hand_oracle(self):
        params = {"w": np.array([1.0])}
        state = init_adam(params)
        for expected in ADAM_TRAJECTORY:
            grads = {"w": 2.0 * params["w"]}
            adam_step(params, grads, state, lr=0.1)
            assert params["w"][0] == pytest.approx(expected, abs=1e-12)

    def test_first_step_is_signed_lr(self):
        params = {"w": np.array([0.3, -0.2])}
        state = init_adam(params)
        adam_step(params, {"w": np.array([4.0, -7.0])}, state, lr=0.05)
        assert np.allclose(params["w"], [0.3 - 0.05, -0.2 + 0.05], atol=1e-7)

    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.5])}
        state = init_adam(params)
        adam_step(params, {"w": np.array([0.0])}, state, lr=0.1)
        assert params["w"][0] == 1.5
        assert state.step == 1

    def test_non_finite_gradient_aborts(self):
        params = {"w": np.array([1.0])}
        state = init_adam(params)
        with pytest.raises(TrainingError, match="non-finite"):
            adam_step(params, {"w": np.array([np.nan])}, state, lr=0.1)


class TestTrain:
    def test_deterministic_under_seed(self):
        index, embeddings = small_corpus()
        config = fast_config()
        r1 = train(index, index.trainable_commits, embeddings, config)
        r2 = train(index, index.trainable_commits, embeddings, config)
        assert r1.loss_trace == r2.loss_trace
        for a, b in zip(r1.model.params().values(), r2.model.params().values()):
            assert np.array_equal(a, b)

    def test_loss_trace_mostly_decreasing(self):
        index, embeddings = small_corpus(n_commits=20)
        config = fast_config(epochs=5)
        result = train(index, index.trainable_commits, embeddings, config)
        diffs = np.diff(result.loss_trace)
        assert (diffs <= 0).sum() >= 4

    def test_unknown_commit_rejected(self):
        index, embeddings = small_corpus()
        with pytest.raises(TrainingError, match="unknown commit"):
            train(index, ["ghost"], embeddings, fast_config())

    def test_denoise_inside_training(self):
        index, embeddings = small_corpus(n_commits=14)
        config = fast_config(
            denoise=True,
            denoise_features="embedding",
            classifier=ClassifierSpec(iterations=100, learning_rate=0.5),
            cl_folds=2,
        )
        result = train(index, index.trainable_commits, embeddings, config)
        assert result.noise_report is not None
        removed = result.noise_report.removed_ids()
        assert removed.isdisjoint(result.pair_node_ids)


class TestExperiments:
    def test_run_kfold_shapes_and_leakage(self):
        index, embeddings = small_corpus(n_commits=10)
        config = fast_config(epochs=2)
        outcome = run_kfold(index, embeddings, config, k=2, ks=(1, 2))
        assert len(outcome.folds) == 2
        splits = kfold_split(index, 2, config.seed)
        for fold_outcome, (_, test_commits) in zip(outcome.folds, splits):
            assert fold_outcome.test_commits == test_commits
            test_nodes = set()
            for commit in test_commits:
                test_nodes.update(index.commit_node_ids(commit))
            assert not fold_outcome.result.pair_node_ids & test_nodes
        for report in [outcome.mean] + [o.report for o in outcome.folds]:
            for value in report.recall.values():
                assert 0.0 <= value <= 1.0

    def test_run_kfold_deterministic(self):
        index, embeddings = small_corpus(n_commits=8)
        config = fast_config(epochs=2)
        o1 = run_kfold(index, embeddings, config, k=2)
        o2 = run_kfold(index, embeddings, config, k=2)
        assert o1.mean == o2.mean

    def test_mean_is_arithmetic_mean_of_folds(self):
        index, embeddings = small_corpus(n_commits=8)
        config = fast_config(epochs=2)
        outcome = run_kfold(index, embeddings, config, k=2)
        for k, value in outcome.mean.recall.items():
            expected = np.mean([o.report.recall[k] for o in outcome.folds])
            assert value == pytest.approx(expected)

    def test_parallel_folds_match_sequential(self):
        index, embeddings = small_corpus(n_commits=8)
        config = fast_config(epochs=2)
        sequential = run_kfold(index, embeddings, config, k=2, jobs=1)
        parallel = run_kfold(index, embeddings, config, k=2, jobs=2)
        assert sequential.mean == parallel.mean

    def test_cross_project(self):
        index, embeddings = small_corpus(n_commits=10)
        config = fast_config(epochs=2)
        outcome = run_cross_project(index, embeddings, config, ["P1"])
        assert all(index.project_of(c) == "P1" for c in outcome.test_commits)
        assert all(index.project_of(c) != "P1" for c in outcome.train_commits)
