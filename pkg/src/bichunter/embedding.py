"""Line-text vectorization.

Two ways to get a fixed-dimension vector per code line: a built-in
deterministic signed feature hasher (no external model needed), or loading a
file of precomputed vectors produced offline (JSONL or the packed "BICEMB01"
binary format).
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
import warnings
from functools import lru_cache

import numpy as np

BINARY_MAGIC = b"BICEMB01"

_TOKEN_SPLIT = re.compile(r"[^0-9A-Za-z]+")


class EmbeddingError(ValueError):
    """An embedding file is malformed or does not cover the dataset."""


def _hash64(token: str, seed: int, purpose: bytes) -> int:
    """First 8 bytes (little-endian) of blake2b(token) keyed by the seed.

    The seed is reduced mod 2**64 and packed little-endian as the blake2b key;
    ``purpose`` goes into the personalization field so the index and sign
    hashes are independent evaluations.
    """
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=key, person=purpose
    ).digest()
    return int.from_bytes(digest, "little")


@lru_cache(maxsize=1 << 16)
def _token_slot(token: str, seed: int) -> tuple[int, int]:
    return _hash64(token, seed, b"idx"), _hash64(token, seed, b"sgn")


def hash_embed(text: str, dim: int = 768, seed: int = 0, *, signed: bool = True,
               normalize: bool = True) -> np.ndarray:
    """Hash one code line into a dim-length vector.

    Tokens are maximal runs of ASCII alphanumerics. Each token contributes at
    index ``_hash64(token, seed, b"idx") % dim``; the contribution is +1 when
    the low bit of the independent sign hash is 0, else -1. Nonzero vectors
    get unit L2 norm; the all-zero vector (no tokens) is returned as-is.

    ``signed=False, normalize=False`` yields raw token counts per bucket,
    the bag-of-words variant used for classifier features.
    """
    if dim < 1:
        raise EmbeddingError(f"dim must be >= 1, got {dim}")
    vec = np.zeros(dim, dtype=float)
    for token in _TOKEN_SPLIT.split(text):
        if not token:
            continue
        h_idx, h_sgn = _token_slot(token, seed)
        contribution = -1.0 if signed and h_sgn & 1 else 1.0
        vec[h_idx % dim] += contribution
    if normalize:
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
    return vec


class EmbeddingMatrix:
    """Dense per-node feature rows keyed by node id; one row per node."""

    __slots__ = ("node_ids", "matrix", "_row_of")

    def __init__(self, node_ids, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise EmbeddingError(f"matrix must be 2-D, got shape {matrix.shape}")
        node_ids = tuple(node_ids)
        if len(node_ids) != matrix.shape[0]:
            raise EmbeddingError(
                f"{len(node_ids)} node ids for {matrix.shape[0]} rows"
            )
        row_of: dict[str, int] = {}
        for i, node_id in enumerate(node_ids):
            if node_id in row_of:
                raise EmbeddingError(f"duplicate node entry {node_id!r}")
            row_of[node_id] = i
        self.node_ids = node_ids
        self.matrix = matrix
        self._row_of = row_of

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.node_ids)

    def __contains__(self, node_id) -> bool:
        return node_id in self._row_of

    def row(self, node_id) -> np.ndarray:
        try:
            return self.matrix[self._row_of[node_id]]
        except KeyError:
            raise EmbeddingError(f"no vector for node {node_id!r}") from None

    def rows_for(self, node_ids) -> np.ndarray:
        missing = [n for n in node_ids if n not in self._row_of]
        if missing:
            raise EmbeddingError(f"no vector for node {missing[0]!r}")
        return self.matrix[[self._row_of[n] for n in node_ids]]


def embed_index(index, dim: int = 768, seed: int = 0, *, signed: bool = True,
                normalize: bool = True) -> EmbeddingMatrix:
    """Hash-embed every node of a dataset index (rows in sorted node-id order)."""
    node_ids = sorted(index.nodes)
    rows = np.zeros((len(node_ids), dim), dtype=float)
    for i, node_id in enumerate(node_ids):
        rows[i] = hash_embed(
            index.nodes[node_id].text, dim, seed, signed=signed, normalize=normalize
        )
    return EmbeddingMatrix(node_ids, rows)


def _read_jsonl_vectors(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(
                    f"{path}:{lineno}: invalid JSON ({exc.msg})"
                ) from exc
            if not isinstance(obj, dict) or "node_id" not in obj or "vector" not in obj:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected object with node_id and vector"
                )
            vector = obj["vector"]
            if not isinstance(vector, list):
                raise EmbeddingError(f"{path}:{lineno}: vector must be an array")
            records.append((obj["node_id"], np.asarray(vector, dtype=float)))
    return records


def _read_binary_vectors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != BINARY_MAGIC:
        raise EmbeddingError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 20:
        raise EmbeddingError(f"{path}: truncated header")
    dim = struct.unpack_from("<I", blob, 8)[0]
    count = struct.unpack_from("<Q", blob, 12)[0]
    offset = 20
    records = []
    for _ in range(count):
        if offset + 4 > len(blob):
            raise EmbeddingError(f"{path}: truncated record header")
        id_len = struct.unpack_from("<I", blob, offset)[0]
        offset += 4
        if offset + id_len + 4 * dim > len(blob):
            raise EmbeddingError(f"{path}: truncated record payload")
        node_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vector = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).astype(float)
        offset += 4 * dim
        records.append((node_id, vector))
    if offset != len(blob):
        raise EmbeddingError(f"{path}: {len(blob) - offset} trailing bytes")
    return records


def load_precomputed(path, index) -> EmbeddingMatrix:
    """Load precomputed vectors and align them to a dataset index.

    Accepts either JSONL records ({"node_id": ..., "vector": [...]}) or the
    packed binary format (sniffed via the 8-byte magic). Every node of the
    index must be covered; vectors for unknown nodes are skipped with a
    warning.
    """
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == BINARY_MAGIC:
        records = _read_binary_vectors(path)
    else:
        records = _read_jsonl_vectors(path)

    dim = None
    seen: dict[str, np.ndarray] = {}
    unknown = 0
    for node_id, vector in records:
        if vector.ndim != 1:
            raise EmbeddingError(f"node {node_id!r}: vector must be 1-D")
        if dim is None:
            dim = vector.shape[0]
        elif vector.shape[0] != dim:
            raise EmbeddingError(
                f"node {node_id!r}: dimension {vector.shape[0]} != {dim}"
            )
        if node_id not in index.nodes:
            unknown += 1
            continue
        if node_id in seen:
            raise EmbeddingError(f"duplicate node entry {node_id!r}")
        seen[node_id] = vector
    if unknown:
        warnings.warn(f"{path}: skipped {unknown} vectors for nodes not in the dataset")

    node_ids = sorted(index.nodes)
    missing = [n for n in node_ids if n not in seen]
    if missing:
        more = f" and {len(missing) - 1} more" if len(missing) > 1 else ""
        raise EmbeddingError(f"missing vector for node {missing[0]!r}{more}")
    if dim is None:
        dim = 0
    rows = np.zeros((len(node_ids), dim), dtype=float)
    for i, node_id in enumerate(node_ids):
        rows[i] = seen[node_id]
    return EmbeddingMatrix(node_ids, rows)


def write_embeddings(path, node_ids, matrix, fmt: str = "binary") -> None:
    """Write vectors in either interchange format.

    Binary layout: magic "BICEMB01", u32 dim, u64 count, then per record a u32
    id byte-length, the UTF-8 node id, and dim little-endian float32 values.
    """
    matrix = np.asarray(matrix, dtype=float)
    node_ids = list(node_ids)
    if matrix.ndim != 2 or len(node_ids) != matrix.shape[0]:
        raise EmbeddingError("node ids and matrix rows must correspond")
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<I", matrix.shape[1]))
            fh.write(struct.pack("<Q", len(node_ids)))
            for node_id, row in zip(node_ids, matrix):
                raw = node_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(np.ascontiguousarray(row, dtype="<f4").tobytes())
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for node_id, row in zip(node_ids, matrix):
                fh.write(json.dumps({"node_id": node_id, "vector": row.tolist()}))
                fh.write("\n")
    else:
        raise EmbeddingError(f"unknown format {fmt!r}")
