"""Training orchestration: denoising, pair generation, the epoch loop with
Adam, and the k-fold / cross-project experiment drivers.

One commit graph is one gradient step (the propagation operator is
per-commit). Denoising defaults to per-training-fold scope so test labels
never influence the pruning; evaluation always uses the original labels.
Embeddings are frozen inputs.
"""

from __future__ import annotations

import hashlib
import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .baseclf import ClassifierSpec
from .dataset import DatasetIndex, cross_project_split, kfold_split
from .denoise import NoiseReport, denoise_dataset
from .embedding import hash_embed
from .gcnrank import (
    RankModel,
    backward,
    forward,
    init_rank_model,
    pair_batch_loss,
    pair_targets,
)
from .graphbuild import build_commit_graph, normalized_operator
from .metrics import EvalReport, evaluate_model, mean_report


class TrainingError(ValueError):
    """Invalid training configuration or a diverged/degenerate run."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; defaults follow the reference protocol where it
    specifies one (Adam, learning rate 5e-6, 5-fold denoising CV)."""

    learning_rate: float = 5e-6
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    denoise: bool = True
    denoise_scope: str = "fold"  # "fold" or "global"
    denoise_features: str = "bow"  # "bow" or "embedding"
    threshold_mode: str = "class_conditional"
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    cl_folds: int = 5
    bow_dim: int = 10000
    default_edge_weight: float = 1.0
    n_layers: int = 2
    hidden_dim: int = 256
    embed_dim: int = 768

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise TrainingError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.denoise_scope not in ("fold", "global"):
            raise TrainingError(f"unknown denoise_scope {self.denoise_scope!r}")
        if self.denoise_features not in ("bow", "embedding"):
            raise TrainingError(
                f"unknown denoise_features {self.denoise_features!r}"
            )
        if self.threshold_mode not in ("class_conditional", "global"):
            raise TrainingError(f"unknown threshold_mode {self.threshold_mode!r}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, ClassifierSpec):
                value = {
                    "kind": value.kind,
                    "l2": value.l2,
                    "iterations": value.iterations,
                    "learning_rate": value.learning_rate,
                    "k": value.k,
                }
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise TrainingError(f"unknown config key {unknown[0]!r}")
        kwargs = dict(data)
        if "classifier" in kwargs and isinstance(kwargs["classifier"], dict):
            kwargs["classifier"] = ClassifierSpec(**kwargs["classifier"])
        return cls(**kwargs)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter dict."""

    m: dict
    v: dict
    step: int = 0


def init_adam(params: dict) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(value) for name, value in params.items()},
        v={name: np.zeros_like(value) for name, value in params.items()},
    )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    for name, param in params.items():
        grad = grads[name]
        if not np.isfinite(grad).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * grad
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        m_hat = state.m[name] / (1.0 - beta1**state.step)
        v_hat = state.v[name] / (1.0 - beta2**state.step)
        param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def generate_pairs(graph, kept=None):
    """All unordered pairs (i < j in node order) among the commit's kept
    deleted nodes, with priority targets. Fewer than 2 kept deleted nodes
    yields an empty batch."""
    indices = [
        i
        for i, node_id in enumerate(graph.deleted_ids)
        if kept is None or node_id in kept
    ]
    pairs = []
    for a in range(len(indices)):
        for b in range(a + 1, len(indices)):
            i, j = indices[a], indices[b]
            pairs.append(
                (i, j, pair_targets(bool(graph.labels[i]), bool(graph.labels[j])))
            )
    return pairs


def _denoise_feature_rows(index, node_ids, embeddings, config):
    if config.denoise_features == "embedding":
        return embeddings.rows_for(node_ids)
    rows = np.zeros((len(node_ids), config.bow_dim))
    for i, node_id in enumerate(node_ids):
        rows[i] = hash_embed(
            index.nodes[node_id].text,
            config.bow_dim,
            config.seed,
            signed=False,
            normalize=False,
        )
    return rows


def denoise_commits(index, commit_ids, embeddings, config: TrainConfig) -> NoiseReport:
    """Confident-learning pass over the deleted nodes of the given commits."""
    node_ids = index.all_deleted_node_ids(commit_ids)
    rows = _denoise_feature_rows(index, node_ids, embeddings, config)
    return denoise_dataset(
        index,
        rows,
        config.classifier,
        folds=config.cl_folds,
        seed=config.seed,
        threshold_mode=config.threshold_mode,
        commit_ids=commit_ids,
    )


@dataclass
class TrainResult:
    model: RankModel
    loss_trace: list
    pair_node_ids: frozenset
    noise_report: NoiseReport | None


def train(index: DatasetIndex, commit_ids, embeddings, config: TrainConfig,
          kept_override=None) -> TrainResult:
    """Train a ranking model on the given commits.

    Optionally denoises first (skipped when ``kept_override`` carries a
    precomputed kept set). Commits are visited in seeded shuffled order each
    epoch; every commit with at least one pair is one forward/backward/Adam
    step. Returns the model, the per-epoch mean pair loss, the node ids seen
    in training pairs (for leakage checks), and the noise report if any.
    """
    commits = sorted(set(commit_ids))
    commit_set = set(index.commit_ids)
    unknown = [c for c in commits if c not in commit_set]
    if unknown:
        raise TrainingError(f"unknown commit {unknown[0]!r}")
    trainable = set(index.trainable_commits)
    commits = [c for c in commits if c in trainable]
    if not commits:
        raise TrainingError("no trainable commits in the training set")

    noise_report = None
    kept = kept_override
    if kept is None and config.denoise:
        noise_report = denoise_commits(index, commits, embeddings, config)
        kept = set(noise_report.kept)

    batches = []
    for commit_id in commits:
        graph = build_commit_graph(
            index, commit_id, embeddings, config.default_edge_weight
        )
        pairs = generate_pairs(graph, kept)
        if pairs:
            batches.append((graph, normalized_operator(graph.adjacency), pairs))
    if not batches:
        raise TrainingError("no trainable pairs in the training set")

    model = init_rank_model(
        embeddings.dim, config.hidden_dim, config.n_layers, config.seed
    )
    params = model.params()
    state = init_adam(params)
    rng = random.Random(config.seed)
    order = list(range(len(batches)))
    loss_trace = []
    for _ in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for t in order:
            graph, operator, pairs = batches[t]
            scores, cache = forward(model, operator, graph.features, graph.n_deleted)
            loss, _ = pair_batch_loss(scores, pairs)
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged (loss={loss})")
            grads = backward(model, operator, graph.features, pairs, cache)
            adam_step(
                params,
                grads,
                state,
                config.learning_rate,
                config.beta1,
                config.beta2,
                config.adam_eps,
            )
            total += loss
        loss_trace.append(total / len(batches))

    pair_node_ids = frozenset(
        graph.node_ids[idx]
        for graph, _, pairs in batches
        for i, j, _ in pairs
        for idx in (i, j)
    )
    return TrainResult(
        model=model,
        loss_trace=loss_trace,
        pair_node_ids=pair_node_ids,
        noise_report=noise_report,
    )


def _assert_no_leakage(index, train_result: TrainResult, test_commits):
    test_nodes = set()
    for commit_id in test_commits:
        test_nodes.update(index.commit_node_ids(commit_id))
    overlap = train_result.pair_node_ids & test_nodes
    if overlap:
        raise TrainingError(
            f"leakage: test node {sorted(overlap)[0]!r} appeared in a training pair"
        )


@dataclass
class FoldOutcome:
    fold: int
    train_commits: tuple
    test_commits: tuple
    report: EvalReport
    result: TrainResult


def _run_fold(args):
    index, embeddings, config, fold, train_commits, test_commits, ks, kept = args
    result = train(index, train_commits, embeddings, config, kept_override=kept)
    _assert_no_leakage(index, result, test_commits)
    report = evaluate_model(
        result.model,
        index,
        test_commits,
        embeddings,
        ks=ks,
        default_edge_weight=config.default_edge_weight,
    )
    return FoldOutcome(fold, tuple(train_commits), tuple(test_commits), report, result)


@dataclass
class KFoldResult:
    mean: EvalReport
    folds: list  # FoldOutcome per fold
    global_noise: NoiseReport | None


def run_kfold(index: DatasetIndex, embeddings, config: TrainConfig, k: int = 10,
              ks=(1, 2, 3), jobs: int = 1) -> KFoldResult:
    """Train on k-1 folds and evaluate on the held-out fold, k times.

    With denoise_scope="global" the denoiser runs once over all trainable
    commits and its kept set is reused in every fold; the default "fold"
    scope reruns it inside each training split.
    """
    splits = kfold_split(index, k, config.seed)
    global_noise = None
    kept = None
    if config.denoise and config.denoise_scope == "global":
        global_noise = denoise_commits(
            index, index.trainable_commits, embeddings, config
        )
        kept = set(global_noise.kept)
    jobs_args = [
        (index, embeddings, config, fold, train_c, test_c, tuple(ks), kept)
        for fold, (train_c, test_c) in enumerate(splits)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold, jobs_args))
    else:
        outcomes = [_run_fold(a) for a in jobs_args]
    outcomes.sort(key=lambda o: o.fold)
    return KFoldResult(
        mean=mean_report([o.report for o in outcomes]),
        folds=outcomes,
        global_noise=global_noise,
    )


def run_cross_project(index: DatasetIndex, embeddings, config: TrainConfig,
                      test_projects, ks=(1, 2, 3)) -> FoldOutcome:
    """Single train/test run where whole projects are held out."""
    train_commits, test_commits = cross_project_split(index, test_projects)
    kept = None
    if config.denoise and config.denoise_scope == "global":
        kept = set(
            denoise_commits(index, index.trainable_commits, embeddings, config).kept
        )
    return _run_fold(
        (index, embeddings, config, 0, train_commits, test_commits, tuple(ks), kept)
    )
