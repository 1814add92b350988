import pytest

from bichunter.dataset import DatasetIndex, EdgeRecord, LineNode


def node(node_id, commit="c1", project="P1", role="deleted", version="old",
         text="x = y", root_cause=False):
    return LineNode(
        node_id=node_id,
        commit_id=commit,
        project_id=project,
        role=role,
        version=version,
        text=text,
        root_cause=root_cause,
    )


def small_index():
    """Two commits over two projects; c1 has a labeled root cause."""
    nodes = [
        node("c1:d0", root_cause=True, text="free(ptr)"),
        node("c1:d1", text="i += 1"),
        node("c1:x0", role="context", version="new", text="return count"),
        node("c2:d0", commit="c2", project="P2", text="open(path)"),
        node("c2:d1", commit="c2", project="P2", root_cause=True, text="lock.release()"),
        node("c2:x0", commit="c2", project="P2", role="context", version="new",
             text="log.debug(msg)"),
    ]
    edges = [
        EdgeRecord("c1:d0", "c1:x0", weight=2.0, relation="data"),
        EdgeRecord("c1:d1", "c1:d0"),
        EdgeRecord("c2:d0", "c2:d1", weight=1.5),
        EdgeRecord("c2:d1", "c2:x0"),
    ]
    return DatasetIndex(nodes, edges)


@pytest.fixture
def index():
    return small_index()
