"""Synthetic corpora for demos and verification.

make_sentinel_corpus builds commits whose root-cause deleted line carries a
sentinel token, so a working pipeline must rank it first. make_scaled_corpus
produces a corpus with exact per-project commit/node/edge record counts,
useful for exercising validation at realistic scale.
"""

from __future__ import annotations

import random

from .dataset import DatasetIndex, EdgeRecord, LineNode

SENTINEL_TOKEN = "faultmarker"

_FILLER_VOCAB = [f"tok{i:02d}" for i in range(40)]


def _line(rng, n_tokens, extra=None):
    tokens = [rng.choice(_FILLER_VOCAB) for _ in range(n_tokens)]
    if extra is not None:
        tokens.insert(rng.randrange(len(tokens) + 1), extra)
    return " ".join(tokens)


def make_sentinel_corpus(n_commits: int = 100, min_deleted: int = 3,
                         max_deleted: int = 8, n_projects: int = 2,
                         seed: int = 0):
    """(nodes, edges) where each commit has one sentinel-marked root cause.

    Deleted lines are old-version; each commit also gets a handful of
    new-version context lines and a random set of intra-commit dependency
    edges (weights left implicit).
    """
    rng = random.Random(seed)
    nodes, edges = [], []
    for c in range(n_commits):
        commit_id = f"c{c:04d}"
        project_id = f"P{c % n_projects}"
        n_deleted = rng.randint(min_deleted, max_deleted)
        n_context = rng.randint(2, 5)
        root_pos = rng.randrange(n_deleted)
        commit_node_ids = []
        for d in range(n_deleted):
            node_id = f"{commit_id}:d{d:02d}"
            is_root = d == root_pos
            nodes.append(
                LineNode(
                    node_id=node_id,
                    commit_id=commit_id,
                    project_id=project_id,
                    role="deleted",
                    version="old",
                    text=_line(rng, 4, SENTINEL_TOKEN if is_root else None),
                    root_cause=is_root,
                )
            )
            commit_node_ids.append(node_id)
        for x in range(n_context):
            node_id = f"{commit_id}:x{x:02d}"
            nodes.append(
                LineNode(
                    node_id=node_id,
                    commit_id=commit_id,
                    project_id=project_id,
                    role="context",
                    version="new",
                    text=_line(rng, 4),
                )
            )
            commit_node_ids.append(node_id)
        n_edges = rng.randint(len(commit_node_ids), 2 * len(commit_node_ids))
        for _ in range(n_edges):
            src, dst = rng.sample(commit_node_ids, 2)
            edges.append(EdgeRecord(src=src, dst=dst, relation="dep"))
    return nodes, edges


def make_scaled_corpus(project_specs, seed: int = 0):
    """(nodes, edges) with exact record counts per project.

    project_specs: iterable of (project_id, n_commits, n_nodes, n_edges).
    Nodes are spread near-evenly over the commits (every commit needs at
    least 2); roughly a quarter of each commit's lines are deleted, one of
    them the root cause. Edge records are random intra-commit pairs and may
    repeat, which graph assembly resolves by maximum weight.
    """
    rng = random.Random(seed)
    nodes, edges = [], []
    for project_id, n_commits, n_nodes, n_edges in project_specs:
        if n_nodes < 2 * n_commits:
            raise ValueError(
                f"project {project_id!r}: {n_nodes} nodes cannot cover "
                f"{n_commits} commits with 2 nodes each"
            )
        base, extra = divmod(n_nodes, n_commits)
        sizes = [base + (1 if c < extra else 0) for c in range(n_commits)]
        edge_base, edge_extra = divmod(n_edges, n_commits)
        edge_counts = [edge_base + (1 if c < edge_extra else 0) for c in range(n_commits)]
        for c, (size, edge_count) in enumerate(zip(sizes, edge_counts)):
            commit_id = f"{project_id}-c{c:04d}"
            n_deleted = max(1, size // 4)
            root_pos = rng.randrange(n_deleted)
            commit_node_ids = []
            for t in range(size):
                deleted = t < n_deleted
                node_id = f"{commit_id}:n{t:03d}"
                nodes.append(
                    LineNode(
                        node_id=node_id,
                        commit_id=commit_id,
                        project_id=project_id,
                        role="deleted" if deleted else "context",
                        version="old" if deleted else "new",
                        text=_line(rng, rng.randint(3, 6)),
                        root_cause=deleted and t == root_pos,
                    )
                )
                commit_node_ids.append(node_id)
            for _ in range(edge_count):
                src, dst = rng.sample(commit_node_ids, 2)
                edges.append(EdgeRecord(src=src, dst=dst, relation="dep"))
    return nodes, edges


def as_index(nodes, edges) -> DatasetIndex:
    return DatasetIndex(nodes, edges)
