"""Per-commit rankings and the Recall@N / mean-first-rank evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gcnrank import forward
from .graphbuild import build_commit_graph, normalized_operator


class MetricsError(ValueError):
    """Evaluation asked for inconsistent model/graph shapes."""


@dataclass(frozen=True)
class RankingResult:
    """A commit's deleted nodes ordered by descending score; score ties break
    toward the lexicographically smaller node id."""

    commit_id: str
    ranking: tuple  # ((node_id, score), ...)

    def node_order(self) -> tuple:
        return tuple(node_id for node_id, _ in self.ranking)


@dataclass(frozen=True)
class EvalReport:
    """Recall@N values, mean first rank, per-commit first ranks, and counts.

    Commits without any root-cause deleted node are skipped (counted in
    ``skipped``); ``mfr`` is None when no commit was evaluated.
    """

    recall: dict
    mfr: float | None
    first_ranks: tuple  # ((commit_id, rank), ...)
    evaluated: int
    skipped: int

    def to_dict(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in sorted(self.recall.items())},
            "mfr": self.mfr,
            "first_ranks": [[c, r] for c, r in self.first_ranks],
            "evaluated": self.evaluated,
            "skipped": self.skipped,
        }


def rank_commit(model, graph) -> RankingResult:
    """Forward pass over one commit graph; stable descending-score order."""
    operator = normalized_operator(graph.adjacency)
    scores, _ = forward(model, operator, graph.features, graph.n_deleted)
    order = sorted(
        range(graph.n_deleted), key=lambda i: (-scores[i], graph.node_ids[i])
    )
    return RankingResult(
        commit_id=graph.commit_id,
        ranking=tuple((graph.node_ids[i], float(scores[i])) for i in order),
    )


def _root_cause_set(labels) -> set:
    if isinstance(labels, dict):
        return {node_id for node_id, flag in labels.items() if flag}
    return set(labels)


def first_rank(result: RankingResult, labels) -> int | None:
    """1-based rank of the first root-cause node, or None if the commit has
    no root-cause deleted node."""
    root_causes = _root_cause_set(labels)
    for rank, (node_id, _) in enumerate(result.ranking, start=1):
        if node_id in root_causes:
            return rank
    return None


def _scan(results, labels):
    ranks = []
    skipped = 0
    root_causes = _root_cause_set(labels)
    for result in results:
        rank = first_rank(result, root_causes)
        if rank is None:
            skipped += 1
        else:
            ranks.append((result.commit_id, rank))
    return ranks, skipped


def recall_at_n(results, labels, n: int) -> float:
    """Fraction of evaluated commits whose top-n ranks contain a root cause."""
    ranks, _ = _scan(results, labels)
    if not ranks:
        return 0.0
    return sum(1 for _, rank in ranks if rank <= n) / len(ranks)


def mfr(results, labels) -> float:
    """Mean over evaluated commits of the first root-cause rank (1-based)."""
    ranks, _ = _scan(results, labels)
    if not ranks:
        raise MetricsError("no commit with a root-cause deleted node to evaluate")
    return sum(rank for _, rank in ranks) / len(ranks)


def evaluate(results, labels, ks=(1, 2, 3)) -> EvalReport:
    """Metrics over a set of per-commit rankings against root-cause labels."""
    ranks, skipped = _scan(results, labels)
    recall = {}
    for k in ks:
        recall[int(k)] = (
            sum(1 for _, rank in ranks if rank <= k) / len(ranks) if ranks else 0.0
        )
    mean_rank = sum(rank for _, rank in ranks) / len(ranks) if ranks else None
    return EvalReport(
        recall=recall,
        mfr=mean_rank,
        first_ranks=tuple(ranks),
        evaluated=len(ranks),
        skipped=skipped,
    )


def evaluate_model(model, index, commit_ids, embeddings, ks=(1, 2, 3),
                   default_edge_weight: float = 1.0) -> EvalReport:
    """Rank every commit with the model and score against the index labels."""
    results = []
    labels = set()
    for commit_id in sorted(commit_ids):
        graph = build_commit_graph(index, commit_id, embeddings, default_edge_weight)
        if graph.n_deleted == 0:
            continue
        results.append(rank_commit(model, graph))
        labels.update(
            node_id for node_id, flag in zip(graph.deleted_ids, graph.labels) if flag
        )
    return evaluate(results, labels, ks=ks)


def mean_report(reports) -> EvalReport:
    """Average fold reports: recalls and MFR are fold means, counts are sums."""
    reports = list(reports)
    if not reports:
        raise MetricsError("no reports to average")
    ks = sorted(reports[0].recall)
    recall = {
        k: float(np.mean([r.recall[k] for r in reports])) for k in ks
    }
    mfr_values = [r.mfr for r in reports if r.mfr is not None]
    mean_rank = float(np.mean(mfr_values)) if mfr_values else None
    first_ranks = tuple(
        sorted((pair for r in reports for pair in r.first_ranks))
    )
    return EvalReport(
        recall=recall,
        mfr=mean_rank,
        first_ranks=first_ranks,
        evaluated=sum(r.evaluated for r in reports),
        skipped=sum(r.skipped for r in reports),
    )
