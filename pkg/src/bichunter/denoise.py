"""Confident-learning denoiser.

Given out-of-fold predicted probabilities and the observed (noisy) labels,
estimate the joint distribution of noisy versus latent true labels and prune
the samples most likely mislabeled. The pipeline:

1. out-of-fold probabilities via stratified cross-validation,
2. per-class confidence thresholds (class-conditional mean by default, or the
   global mean over all samples),
3. the confident joint: count samples into (noisy label, inferred true label)
   cells, inferring the true label as the argmax over classes whose predicted
   probability clears the class threshold,
4. normalization of the counts into a joint distribution summing to 1,
5. margin-ranked removal: each off-diagonal cell (i, j) removes its
   floor(n * Q[i][j]) samples of noisy class i with the largest
   P[:, j] - P[:, i] gap.

Removed samples are meant to be excluded from downstream training objectives;
evaluation always keeps the original labels.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

import numpy as np

from .baseclf import ClassifierSpec, fit


class DenoiseError(ValueError):
    """Invalid probability matrix, labels, or stratification request."""


@dataclass(frozen=True)
class NoiseRecord:
    """One pruned sample: which cell selected it and with what margin."""

    sample_id: object
    cell: tuple
    margin: float


@dataclass(frozen=True)
class NoiseReport:
    """Partition of the samples into removed (suspect) and kept."""

    removed: tuple
    kept: tuple

    def removed_ids(self) -> set:
        return {record.sample_id for record in self.removed}

    def to_jsonl(self, path) -> None:
        removed_by_id = {record.sample_id: record for record in self.removed}
        ids = list(removed_by_id) + list(self.kept)
        with open(path, "w", encoding="utf-8") as fh:
            for sample_id in sorted(ids, key=str):
                record = removed_by_id.get(sample_id)
                if record is None:
                    payload = {"node_id": sample_id, "decision": "kept",
                               "cell": None, "margin": None}
                else:
                    payload = {
                        "node_id": sample_id,
                        "decision": "removed",
                        "cell": list(record.cell),
                        "margin": record.margin,
                    }
                fh.write(json.dumps(payload, sort_keys=True))
                fh.write("\n")


def _check_prob_matrix(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise DenoiseError(f"probability matrix must be 2-D, got shape {probs.shape}")
    if not np.isfinite(probs).all():
        raise DenoiseError("probability matrix contains non-finite values")
    if (probs < -1e-12).any() or (probs > 1.0 + 1e-12).any():
        raise DenoiseError("probabilities must lie in [0, 1]")
    if probs.size and np.abs(probs.sum(axis=1) - 1.0).max() > 1e-9:
        raise DenoiseError("probability rows must sum to 1 within 1e-9")
    return probs


def _check_labels(labels, n_classes) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.ndim != 1:
        raise DenoiseError("labels must be a 1-D array of class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DenoiseError(f"labels must lie in [0, {n_classes})")
    return labels


def oof_probabilities(features, labels, spec: ClassifierSpec, folds: int = 5,
                      seed: int = 0) -> np.ndarray:
    """Out-of-fold class probabilities via stratified cross-validation.

    Fold assignment is per class: each class's sample indices are shuffled
    with the seeded RNG and dealt round-robin over the folds, so every fold's
    training complement retains every class. Row i of the result comes from
    the model trained without sample i.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if folds < 2:
        raise DenoiseError(f"folds must be >= 2, got {folds}")
    n = labels.shape[0]
    n_classes = int(labels.max()) + 1 if n else 0
    counts = np.bincount(labels, minlength=n_classes)
    for c, count in enumerate(counts):
        if count < folds:
            raise DenoiseError(
                f"class {c} has {int(count)} samples; needs >= folds={folds} "
                "to stratify"
            )
    rng = random.Random(seed)
    assignment = np.empty(n, dtype=int)
    for c in range(n_classes):
        members = np.flatnonzero(labels == c).tolist()
        rng.shuffle(members)
        for position, sample in enumerate(members):
            assignment[sample] = position % folds
    probs = np.zeros((n, n_classes))
    for fold in range(folds):
        test = assignment == fold
        model = fit(spec, features[~test], labels[~test])
        probs[test] = model.predict_proba(features[test])
    return probs


def compute_thresholds(probs, labels, mode: str = "class_conditional") -> np.ndarray:
    """Per-class confidence thresholds.

    class_conditional (default): t_j is the mean predicted probability of
    class j over the samples whose noisy label is j. global: t_j is the mean
    of column j over all samples.
    """
    probs = _check_prob_matrix(probs)
    n_classes = probs.shape[1]
    labels = _check_labels(labels, n_classes)
    if mode == "global":
        return probs.mean(axis=0)
    if mode != "class_conditional":
        raise DenoiseError(f"unknown threshold mode {mode!r}")
    thresholds = np.empty(n_classes)
    for j in range(n_classes):
        rows = labels == j
        if not rows.any():
            raise DenoiseError(
                f"class {j} has no samples; class_conditional thresholds undefined"
            )
        thresholds[j] = probs[rows, j].mean()
    return thresholds


def confident_joint(probs, labels, thresholds) -> np.ndarray:
    """Count matrix C of (noisy label, inferred true label).

    A sample with noisy label i contributes to C[i][j*] where j* is the
    argmax of its predicted probabilities restricted to classes meeting their
    thresholds (ties resolve to the lowest class index). Samples whose
    candidate set is empty contribute to no cell, so each row sums to at most
    the noisy-class size.
    """
    probs = _check_prob_matrix(probs)
    n_classes = probs.shape[1]
    labels = _check_labels(labels, n_classes)
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.shape != (n_classes,):
        raise DenoiseError(
            f"expected {n_classes} thresholds, got shape {thresholds.shape}"
        )
    counts = np.zeros((n_classes, n_classes), dtype=int)
    meets = probs >= thresholds[None, :]
    eligible = meets.any(axis=1)
    best = np.argmax(np.where(meets, probs, -np.inf), axis=1)
    np.add.at(counts, (labels[eligible], best[eligible]), 1)
    return counts


def estimate_joint(counts, labels) -> np.ndarray:
    """Joint distribution Q of noisy and true labels.

    Each row of the count matrix is normalized, rescaled by its noisy-class
    size, and the whole matrix normalized to sum to 1. All-zero count rows
    yield all-zero Q rows (guarding 0/0).
    """
    counts = np.asarray(counts, dtype=float)
    n_classes = counts.shape[0]
    if counts.shape != (n_classes, n_classes):
        raise DenoiseError(f"count matrix must be square, got shape {counts.shape}")
    if counts.sum() == 0:
        raise DenoiseError("count matrix is entirely zero")
    labels = _check_labels(labels, n_classes)
    sizes = np.bincount(labels, minlength=n_classes).astype(float)
    scaled = np.zeros_like(counts)
    row_sums = counts.sum(axis=1)
    for i in range(n_classes):
        if row_sums[i] > 0:
            scaled[i] = counts[i] / row_sums[i] * sizes[i]
    return scaled / scaled.sum()


def select_noise(probs, labels, joint, n: int | None = None) -> NoiseReport:
    """Margin-ranked pruning driven by the off-diagonal joint mass.

    For each cell (i, j) with i != j, the floor(n * Q[i][j]) samples of noisy
    class i with the largest margin P[:, j] - P[:, i] are marked as noise
    (margin ties break toward the lower sample id). A sample marked by any
    cell is removed once; cells are visited in row-major order and the first
    marking records the cell and margin.
    """
    probs = _check_prob_matrix(probs)
    n_classes = probs.shape[1]
    labels = _check_labels(labels, n_classes)
    joint = np.asarray(joint, dtype=float)
    if joint.shape != (n_classes, n_classes):
        raise DenoiseError(f"joint must be {n_classes}x{n_classes}")
    total = labels.shape[0] if n is None else int(n)
    marked: dict[int, NoiseRecord] = {}
    for i in range(n_classes):
        members = np.flatnonzero(labels == i)
        if members.size == 0:
            continue
        for j in range(n_classes):
            if i == j:
                continue
            quota = int(math.floor(total * joint[i, j]))
            if quota <= 0:
                continue
            margins = probs[members, j] - probs[members, i]
            order = sorted(
                range(members.size), key=lambda t: (-margins[t], members[t])
            )
            for t in order[:quota]:
                sample = int(members[t])
                if sample not in marked:
                    marked[sample] = NoiseRecord(sample, (i, j), float(margins[t]))
    removed = tuple(marked[s] for s in sorted(marked))
    kept = tuple(s for s in range(labels.shape[0]) if s not in marked)
    return NoiseReport(removed=removed, kept=kept)


def denoise_dataset(index, features, spec: ClassifierSpec, folds: int = 5,
                    seed: int = 0, threshold_mode: str = "class_conditional",
                    commit_ids=None) -> NoiseReport:
    """Run the full pipeline over a dataset's deleted nodes.

    ``features`` is either an EmbeddingMatrix or an array whose rows align
    with ``index.all_deleted_node_ids(commit_ids)`` (sorted node-id order).
    Labels are the root-cause booleans. The report is keyed by node id.
    """
    node_ids = index.all_deleted_node_ids(commit_ids)
    if hasattr(features, "rows_for"):
        rows = features.rows_for(node_ids)
    else:
        rows = np.asarray(features, dtype=float)
        if rows.shape[0] != len(node_ids):
            raise DenoiseError(
                f"features have {rows.shape[0]} rows for {len(node_ids)} deleted nodes"
            )
    labels = np.array(index.root_cause_labels(node_ids), dtype=int)
    probs = oof_probabilities(rows, labels, spec, folds=folds, seed=seed)
    thresholds = compute_thresholds(probs, labels, mode=threshold_mode)
    counts = confident_joint(probs, labels, thresholds)
    joint = estimate_joint(counts, labels)
    report = select_noise(probs, labels, joint)
    removed = tuple(
        NoiseRecord(node_ids[record.sample_id], record.cell, record.margin)
        for record in report.removed
    )
    kept = tuple(node_ids[s] for s in report.kept)
    return NoiseReport(removed=removed, kept=kept)
