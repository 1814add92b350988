"""Per-commit homogeneous graph assembly and the normalized propagation operator.

Each commit becomes one small dense graph: deleted lines first (sorted by id),
then context lines. Raw directed dependencies can be collapsed into undirected
edges via DFS reachability. The propagation operator is the self-looped
symmetric normalization (A + I) / sqrt(d~_i d~_j), whose spectrum lies in
[-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DatasetError, EdgeRecord


class GraphError(ValueError):
    """Graph construction over unknown commits or inconsistent matrices."""


@dataclass(frozen=True)
class CommitGraph:
    """One commit's graph: node order, symmetric weighted adjacency, features,
    and root-cause labels over the deleted nodes (the first n_deleted rows)."""

    commit_id: str
    node_ids: tuple
    n_deleted: int
    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    @property
    def deleted_ids(self) -> tuple:
        return self.node_ids[: self.n_deleted]


def derive_edges_by_reachability(raw_deps, sources, targets, weight: float = 1.0,
                                 nodes=None):
    """Undirected edges for every source/target pair joined by a directed path.

    raw_deps is an iterable of (src, dst) directed dependency pairs. For each
    u in sources and v in targets with u != v, an edge (u, v, weight) is
    emitted iff a directed path u -> ... -> v exists. Iterative DFS with a
    visited set, so cycles terminate. When ``nodes`` is given, every endpoint
    must belong to it.
    """
    adjacency: dict = {}
    for src, dst in raw_deps:
        if nodes is not None and (src not in nodes or dst not in nodes):
            bad = src if src not in nodes else dst
            raise GraphError(f"dependency endpoint {bad!r} is not a known node")
        adjacency.setdefault(src, []).append(dst)
    edges = []
    target_set = set(targets)
    for u in sorted(sources):
        seen = {u}
        stack = [u]
        while stack:
            for nxt in adjacency.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        for v in sorted(target_set):
            if v != u and v in seen:
                edges.append(EdgeRecord(src=u, dst=v, weight=weight, relation="path"))
    return edges


def build_commit_graph(index, commit_id, embeddings, default_weight: float = 1.0
                       ) -> CommitGraph:
    """Assemble one commit's graph from the index and an embedding matrix.

    Deleted nodes come first in the node order, then context nodes, each group
    sorted by node id. The adjacency is symmetrized: an edge in either
    direction sets both entries, conflicts resolve to the maximum weight.
    Edges without an explicit weight take ``default_weight``. Self-referential
    edge records are ignored (the diagonal stays zero; self-loops enter via
    the propagation operator). Isolated nodes are retained.
    """
    try:
        all_ids = index.commit_node_ids(commit_id)
    except DatasetError as exc:
        raise GraphError(str(exc)) from None
    deleted = sorted(n for n in all_ids if index.nodes[n].role == "deleted")
    context = sorted(n for n in all_ids if index.nodes[n].role == "context")
    order = deleted + context
    pos = {node_id: i for i, node_id in enumerate(order)}
    n = len(order)
    adjacency = np.zeros((n, n), dtype=float)
    for edge in index.edges_by_commit.get(commit_id, ()):
        i, j = pos[edge.src], pos[edge.dst]
        if i == j:
            continue
        w = default_weight if edge.weight is None else edge.weight
        if w > adjacency[i, j]:
            adjacency[i, j] = w
            adjacency[j, i] = w
    features = embeddings.rows_for(order)
    labels = np.array(
        [index.nodes[node_id].root_cause for node_id in deleted], dtype=bool
    )
    return CommitGraph(
        commit_id=commit_id,
        node_ids=tuple(order),
        n_deleted=len(deleted),
        adjacency=adjacency,
        features=features,
        labels=labels,
    )


def normalized_operator(graph) -> np.ndarray:
    """Dense symmetric propagation operator of a commit graph.

    With A the symmetric nonnegative adjacency, the operator is
    (A + I)[i][j] / sqrt(d~_i d~_j) where d~_i = (sum_j A[i][j]) + 1 is the
    weighted degree after adding the self-loop. d~_i >= 1 always, so no
    division by zero. Accepts a CommitGraph or a raw adjacency matrix.
    """
    adjacency = graph.adjacency if isinstance(graph, CommitGraph) else np.asarray(
        graph, dtype=float
    )
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {adjacency.shape}")
    if adjacency.size and (adjacency < 0).any():
        raise GraphError("adjacency must be nonnegative")
    if not np.allclose(adjacency, adjacency.T, rtol=0.0, atol=1e-12):
        raise GraphError("adjacency must be symmetric")
    n = adjacency.shape[0]
    degrees = adjacency.sum(axis=1) + 1.0
    scale = 1.0 / np.sqrt(degrees)
    return (adjacency + np.eye(n)) * np.outer(scale, scale)
