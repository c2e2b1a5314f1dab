"""Frozen sentence encoders producing unit-norm vectors, plus the embedding file format.

Every encoder maps a raw sentence to a deterministic float32 vector with unit
L2 norm; encoders hold no trainable state. The binary embedding file keys
vectors by sha256 of the normalized sentence.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Callable, Mapping

import numpy as np

from .tokenization import normalize

EMBED_MAGIC = b"SMEM"
EMBED_VERSION = 1


def sentence_key(sentence: str) -> bytes:
    """32-byte lookup key: sha256 of the normalized sentence, UTF-8."""
    return hashlib.sha256(normalize(sentence).encode("utf-8")).digest()


def unit(vec: np.ndarray) -> np.ndarray:
    """L2-normalize to float32; zero or non-finite vectors are rejected."""
    v = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite embedding vector")
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return (v / n).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, computed in float64.

    Clamped to [-1, 1]: rounding can push the quotient a few ulp outside
    (e.g. a hashed vector against itself), which downstream range checks
    would reject.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return min(1.0, max(-1.0, float(np.dot(a, b) / (na * nb))))


def _token_hash(token: str, seed: int) -> int:
    # blake2b keyed by the seed gives a stable 64-bit hash across runs/platforms
    h = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=str(seed).encode("ascii")
    ).digest()
    return int.from_bytes(h, "little")


def hashed_token_vector(token: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic signed one-hot unit vector for a single token."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    h = _token_hash(token, seed)
    sign = 1.0 if h & 1 else -1.0
    idx = (h >> 1) % dim
    v = np.zeros(dim, dtype=np.float32)
    v[idx] = sign
    return v


class HashedTokenEmbedder:
    """Per-token embedder used by the token-matching metric; callable."""

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed

    def __call__(self, token: str) -> np.ndarray:
        return hashed_token_vector(token, self.dim, self.seed)


class HashedBagEncoder:
    """Bag-of-words encoder: sum of seeded signed hash positions, L2-normalized.

    Order-invariant by construction. A sentence that normalizes to nothing is
    embedded as the empty token so encode stays total and deterministic.
    """

    kind = "hashed-bag"

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed

    def encode(self, sentence: str) -> np.ndarray:
        toks = normalize(sentence).split() or [""]
        acc = np.zeros(self.dim, dtype=np.float64)
        for t in toks:
            h = _token_hash(t, self.seed)
            acc[(h >> 1) % self.dim] += 1.0 if h & 1 else -1.0
        if not acc.any():
            # signs cancelled exactly; fall back to the bag size position
            acc[len(toks) % self.dim] = 1.0
        return unit(acc)

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "seed": self.seed}


class FileBackedEncoder:
    """Encoder backed by a precomputed embedding table keyed by sentence hash."""

    kind = "file-backed"

    def __init__(self, table: Mapping[bytes, np.ndarray], dim: int, path: str | None = None):
        self.dim = dim
        self.path = path
        self._table = {k: unit(v) for k, v in table.items()}

    @classmethod
    def from_sentences(cls, pairs: Mapping[str, np.ndarray] | list[tuple[str, np.ndarray]]):
        items = pairs.items() if isinstance(pairs, Mapping) else pairs
        table = {}
        dim = None
        for sentence, vec in items:
            v = np.asarray(vec, dtype=np.float32)
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise ValueError("inconsistent embedding dimensions")
            table[sentence_key(sentence)] = v
        if dim is None:
            raise ValueError("empty embedding table")
        return cls(table, dim)

    @classmethod
    def load(cls, path: str) -> "FileBackedEncoder":
        table, dim = read_embedding_file(path)
        return cls(table, dim, path=path)

    def encode(self, sentence: str) -> np.ndarray:
        key = sentence_key(sentence)
        vec = self._table.get(key)
        if vec is None:
            raise KeyError(f"no embedding stored for sentence: {sentence!r}")
        return vec

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "path": self.path}


class ClusterOracleEncoder:
    """One-hot encoder for synthetic cluster corpora: sentence -> e_cluster.

    ``assignment`` maps normalized sentences (or anything ``key`` reduces a
    sentence to) to integer cluster ids; unknown sentences go to ``default``
    when given, otherwise raise. Only kind/dim persist in checkpoints; the
    assignment is runtime state for the test harness.
    """

    kind = "cluster-oracle"

    def __init__(
        self,
        dim: int,
        assignment: Mapping[str, int] | None = None,
        default: int | None = None,
        cluster_fn: Callable[[str], int] | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if (assignment is None) == (cluster_fn is None):
            raise ValueError("provide exactly one of assignment or cluster_fn")
        self.dim = dim
        self.assignment = dict(assignment) if assignment is not None else None
        self.default = default
        self.cluster_fn = cluster_fn

    def cluster_id(self, sentence: str) -> int:
        norm = normalize(sentence)
        if self.cluster_fn is not None:
            return self.cluster_fn(norm)
        cid = self.assignment.get(norm, self.default)
        if cid is None:
            raise KeyError(f"no cluster assigned for sentence: {sentence!r}")
        return cid

    def encode(self, sentence: str) -> np.ndarray:
        cid = self.cluster_id(sentence)
        v = np.zeros(self.dim, dtype=np.float32)
        v[cid % self.dim] = 1.0
        return v

    def spec(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


def write_embedding_file(path: str, entries: Mapping[str, np.ndarray] | list[tuple[str, np.ndarray]]) -> int:
    """Write sentence embeddings in the binary table format; returns entry count.

    Layout, all little-endian: magic "SMEM", u32 version, u32 count, u32 dim,
    then per entry a 32-byte sha256 of the normalized sentence followed by
    dim float32 values. Vectors are unit-normalized before writing.
    """
    items = entries.items() if isinstance(entries, Mapping) else entries
    rows = []
    dim = None
    for sentence, vec in items:
        v = unit(vec)
        if dim is None:
            dim = v.shape[0]
        elif v.shape[0] != dim:
            raise ValueError("inconsistent embedding dimensions")
        rows.append((sentence_key(sentence), v))
    if dim is None:
        raise ValueError("no entries to write")
    with open(path, "wb") as f:
        f.write(EMBED_MAGIC)
        f.write(struct.pack("<III", EMBED_VERSION, len(rows), dim))
        for key, v in rows:
            f.write(key)
            f.write(v.astype("<f4").tobytes())
    return len(rows)


def read_embedding_file(path: str) -> tuple[dict[bytes, np.ndarray], int]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != EMBED_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {EMBED_MAGIC!r}")
        version, count, dim = struct.unpack("<III", f.read(12))
        if version != EMBED_VERSION:
            raise ValueError(f"{path}: unsupported embedding file version {version}")
        table = {}
        for _ in range(count):
            key = f.read(32)
            raw = f.read(4 * dim)
            if len(key) != 32 or len(raw) != 4 * dim:
                raise ValueError(f"{path}: truncated embedding file")
            table[key] = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after {count} entries")
    return table, dim


def encoder_from_spec(spec: dict, **runtime) -> object:
    """Rebuild an encoder from its checkpoint spec blob.

    file-backed and cluster-oracle encoders need runtime state (a path or an
    assignment) that the blob does not carry; pass it via keyword arguments.
    """
    kind = spec.get("kind")
    if kind == "hashed-bag":
        return HashedBagEncoder(spec["dim"], spec.get("seed", 0))
    if kind == "file-backed":
        path = runtime.get("path") or spec.get("path")
        if not path:
            raise ValueError("file-backed encoder needs a path")
        return FileBackedEncoder.load(path)
    if kind == "cluster-oracle":
        return ClusterOracleEncoder(
            spec["dim"],
            assignment=runtime.get("assignment"),
            default=runtime.get("default"),
            cluster_fn=runtime.get("cluster_fn"),
        )
    raise ValueError(f"unknown encoder kind: {kind!r}")
