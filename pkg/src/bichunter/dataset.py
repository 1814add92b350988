"""Corpus data model: line nodes, dependency edges, validation, and splits.

A corpus is two JSONL files. Each node record describes one code line of a
bug-fixing commit (deleted by the fix or kept as context); each edge record is
a weighted dependency link between two lines of the same commit. Loading
validates cross-references and reports exact record counts; splits operate at
commit granularity so no line of a test commit can leak into training.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass

ROLES = ("deleted", "context")
VERSIONS = ("old", "new")


class DatasetError(ValueError):
    """A corpus file or record violates the node/edge schema."""


@dataclass(frozen=True)
class LineNode:
    """One code line of a commit."""

    node_id: str
    commit_id: str
    project_id: str
    role: str
    version: str
    text: str
    root_cause: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise DatasetError(f"node {self.node_id!r}: bad role {self.role!r}")
        if self.version not in VERSIONS:
            raise DatasetError(f"node {self.node_id!r}: bad version {self.version!r}")
        if self.root_cause and self.role != "deleted":
            raise DatasetError(
                f"node {self.node_id!r}: root_cause requires role='deleted'"
            )


@dataclass(frozen=True)
class EdgeRecord:
    """Weighted dependency edge between two lines of the same commit.

    weight None means the record did not carry an explicit weight; graph
    assembly substitutes the configured uniform default (1.0 unless
    overridden).
    """

    src: str
    dst: str
    weight: float | None = None
    relation: str = ""

    def __post_init__(self):
        if self.weight is not None and not self.weight > 0:
            raise DatasetError(
                f"edge {self.src!r}->{self.dst!r}: weight must be > 0, got {self.weight}"
            )


class DatasetIndex:
    """Validated, immutable view of a loaded corpus.

    Nodes are keyed by id, edges grouped by commit, commits grouped by
    project. Commits without any deleted node are kept in the index but
    excluded from ``trainable_commits`` (a warning is emitted). Safe to share
    read-only across parallel workers.
    """

    def __init__(self, nodes, edges):
        self.nodes: dict[str, LineNode] = {}
        for node in nodes:
            if node.node_id in self.nodes:
                raise DatasetError(f"duplicate node_id {node.node_id!r}")
            self.nodes[node.node_id] = node
        self.node_count = len(self.nodes)

        self.edges_by_commit: dict[str, list[EdgeRecord]] = {}
        self.edge_count = 0
        for edge in edges:
            src = self.nodes.get(edge.src)
            dst = self.nodes.get(edge.dst)
            if src is None or dst is None:
                missing = edge.src if src is None else edge.dst
                raise DatasetError(
                    f"edge {edge.src!r}->{edge.dst!r}: unknown node {missing!r}"
                )
            if src.commit_id != dst.commit_id:
                raise DatasetError(
                    f"edge {edge.src!r}->{edge.dst!r}: endpoints belong to different "
                    f"commits ({src.commit_id!r} vs {dst.commit_id!r})"
                )
            self.edges_by_commit.setdefault(src.commit_id, []).append(edge)
            self.edge_count += 1

        nodes_by_commit: dict[str, list[str]] = {}
        commit_project: dict[str, str] = {}
        for node in self.nodes.values():
            nodes_by_commit.setdefault(node.commit_id, []).append(node.node_id)
            prev = commit_project.setdefault(node.commit_id, node.project_id)
            if prev != node.project_id:
                raise DatasetError(
                    f"commit {node.commit_id!r} spans projects {prev!r} and "
                    f"{node.project_id!r}"
                )
        self._nodes_by_commit = {c: sorted(ids) for c, ids in nodes_by_commit.items()}
        self.commit_ids = tuple(sorted(self._nodes_by_commit))
        self.commits_by_project: dict[str, tuple[str, ...]] = {}
        for commit, project in sorted(commit_project.items()):
            self.commits_by_project.setdefault(project, [])
        for project in self.commits_by_project:
            self.commits_by_project[project] = tuple(
                c for c in self.commit_ids if commit_project[c] == project
            )
        self._commit_project = commit_project

        trainable = []
        for commit in self.commit_ids:
            if any(self.nodes[n].role == "deleted" for n in self._nodes_by_commit[commit]):
                trainable.append(commit)
            else:
                warnings.warn(
                    f"commit {commit!r} has no deleted node; excluded from training",
                    stacklevel=2,
                )
        self.trainable_commits = tuple(trainable)

    def commit_node_ids(self, commit_id: str) -> tuple[str, ...]:
        if commit_id not in self._nodes_by_commit:
            raise DatasetError(f"unknown commit {commit_id!r}")
        return tuple(self._nodes_by_commit[commit_id])

    def deleted_node_ids(self, commit_id: str) -> tuple[str, ...]:
        return tuple(
            n for n in self.commit_node_ids(commit_id) if self.nodes[n].role == "deleted"
        )

    def all_deleted_node_ids(self, commit_ids=None) -> tuple[str, ...]:
        commits = self.commit_ids if commit_ids is None else sorted(commit_ids)
        out = []
        for commit in commits:
            out.extend(self.deleted_node_ids(commit))
        return tuple(sorted(out))

    def root_cause_labels(self, node_ids) -> list[bool]:
        return [self.nodes[n].root_cause for n in node_ids]

    def project_of(self, commit_id: str) -> str:
        if commit_id not in self._commit_project:
            raise DatasetError(f"unknown commit {commit_id!r}")
        return self._commit_project[commit_id]

    def summary(self) -> dict:
        return {
            "nodes": self.node_count,
            "edges": self.edge_count,
            "commits": len(self.commit_ids),
            "trainable_commits": len(self.trainable_commits),
            "projects": len(self.commits_by_project),
            "deleted_nodes": sum(
                1 for n in self.nodes.values() if n.role == "deleted"
            ),
            "root_cause_nodes": sum(
                1 for n in self.nodes.values() if n.root_cause
            ),
        }


def _read_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require(obj, key, kind, path, lineno):
    if key not in obj:
        raise DatasetError(f"{path}:{lineno}: missing key {key!r}")
    value = obj[key]
    if not isinstance(value, kind):
        raise DatasetError(
            f"{path}:{lineno}: key {key!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def parse_node(obj, path="<memory>", lineno=0) -> LineNode:
    root_cause = obj.get("root_cause", False)
    if not isinstance(root_cause, bool):
        raise DatasetError(f"{path}:{lineno}: root_cause must be a boolean")
    try:
        return LineNode(
            node_id=_require(obj, "node_id", str, path, lineno),
            commit_id=_require(obj, "commit_id", str, path, lineno),
            project_id=_require(obj, "project_id", str, path, lineno),
            role=_require(obj, "role", str, path, lineno),
            version=_require(obj, "version", str, path, lineno),
            text=_require(obj, "text", str, path, lineno),
            root_cause=root_cause,
        )
    except DatasetError as exc:
        raise DatasetError(f"{path}:{lineno}: {exc}") from None


def parse_edge(obj, path="<memory>", lineno=0) -> EdgeRecord:
    weight = obj.get("weight")
    if weight is not None and not isinstance(weight, (int, float)):
        raise DatasetError(f"{path}:{lineno}: weight must be a number")
    relation = obj.get("relation", "")
    if not isinstance(relation, str):
        raise DatasetError(f"{path}:{lineno}: relation must be a string")
    try:
        return EdgeRecord(
            src=_require(obj, "src", str, path, lineno),
            dst=_require(obj, "dst", str, path, lineno),
            weight=None if weight is None else float(weight),
            relation=relation,
        )
    except DatasetError as exc:
        raise DatasetError(f"{path}:{lineno}: {exc}") from None


def load_dataset(nodes_path, edges_path) -> DatasetIndex:
    """Load and validate a corpus from its nodes and edges JSONL files."""
    nodes = [parse_node(obj, nodes_path, ln) for ln, obj in _read_jsonl(nodes_path)]
    edges = [parse_edge(obj, edges_path, ln) for ln, obj in _read_jsonl(edges_path)]
    return DatasetIndex(nodes, edges)


def node_to_record(node: LineNode) -> dict:
    return {
        "node_id": node.node_id,
        "commit_id": node.commit_id,
        "project_id": node.project_id,
        "role": node.role,
        "version": node.version,
        "text": node.text,
        "root_cause": node.root_cause,
    }


def edge_to_record(edge: EdgeRecord) -> dict:
    record = {"src": edge.src, "dst": edge.dst}
    if edge.weight is not None:
        record["weight"] = edge.weight
    if edge.relation:
        record["relation"] = edge.relation
    return record


def save_dataset(index: DatasetIndex, nodes_path, edges_path) -> None:
    """Serialize an index back to JSONL; reloading yields an identical index."""
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for node_id in sorted(index.nodes):
            fh.write(json.dumps(node_to_record(index.nodes[node_id]), sort_keys=True))
            fh.write("\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for commit in index.commit_ids:
            for edge in index.edges_by_commit.get(commit, ()):
                fh.write(json.dumps(edge_to_record(edge), sort_keys=True))
                fh.write("\n")


def kfold_split(index: DatasetIndex, k: int, seed: int):
    """Partition trainable commits into k near-equal folds.

    Commit ids are sorted, shuffled by a seeded Fisher-Yates, then cut into k
    slices whose sizes differ by at most one. Returns a list of
    (train_commits, test_commits) tuples, both sorted.
    """
    commits = list(index.trainable_commits)
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    if k > len(commits):
        raise DatasetError(f"k={k} exceeds commit count {len(commits)}")
    random.Random(seed).shuffle(commits)
    n = len(commits)
    base, extra = divmod(n, k)
    splits = []
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        test = commits[start : start + size]
        start += size
        test_set = set(test)
        train = tuple(sorted(c for c in commits if c not in test_set))
        splits.append((train, tuple(sorted(test))))
    return splits


def cross_project_split(index: DatasetIndex, test_projects):
    """All commits of test_projects go to test; every other commit to train."""
    test_projects = set(test_projects)
    if not test_projects:
        raise DatasetError("test_projects must be nonempty")
    known = set(index.commits_by_project)
    unknown = sorted(test_projects - known)
    if unknown:
        raise DatasetError(f"unknown project id {unknown[0]!r}")
    test = tuple(
        sorted(
            c
            for c in index.trainable_commits
            if index.project_of(c) in test_projects
        )
    )
    train = tuple(sorted(set(index.trainable_commits) - set(test)))
    if not train:
        raise DatasetError("test_projects cover every project; train set is empty")
    return train, test
