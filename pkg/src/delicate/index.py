"""Exact dense retrieval over precomputed entity embeddings.

Embedding files are little-endian binaries::

    b"DLEM" | u32 version | u64 n | u32 dim | n x (u64 id, dim x f32)

The same layout is used for mention-embedding sidecars, keyed by
:func:`mention_id`.
"""

import hashlib
import re
import struct
import unicodedata
from dataclasses import dataclass

import numpy as np

MAGIC = b"DLEM"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")


class IngestionError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class ProviderError(RuntimeError):
    """An embedding provider could not produce a vector."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


def _record_dtype(dim):
    return np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])


class EmbeddingMatrix:
    """Immutable ``n x dim`` float32 matrix with one uint64 id per row."""

    def __init__(self, ids, vectors):
        ids = np.asarray(ids, dtype=np.uint64)
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or len(ids) != vectors.shape[0]:
            raise IngestionError("ids and vectors disagree in length")
        if len(np.unique(ids)) != len(ids):
            raise IngestionError("duplicate ids in embedding matrix")
        bad = ~np.isfinite(vectors).all(axis=1)
        if bad.any():
            raise IngestionError(f"non-finite value in row {int(np.argmax(bad))}")
        self.ids = ids
        self.vectors = vectors
        self.ids.setflags(write=False)
        self.vectors.setflags(write=False)
        self._vectors64 = vectors.astype(np.float64)
        self._row_of = {int(i): r for r, i in enumerate(ids)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, key):
        return int(key) in self._row_of

    def vector(self, key):
        return self.vectors[self._row_of[int(key)]]


def write_embeddings(path, ids, vectors):
    vectors = np.asarray(vectors, dtype=np.float32)
    n, dim = vectors.shape
    rec = np.empty(n, dtype=_record_dtype(dim))
    rec["id"] = np.asarray(ids, dtype=np.uint64)
    rec["vec"] = vectors
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, dim))
        fh.write(rec.tobytes())


def ingest_embeddings(path):
    """Load and validate an embedding file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise IngestionError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, n, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise IngestionError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise IngestionError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise IngestionError(f"{path}: dim must be positive")
    dtype = _record_dtype(dim)
    body = memoryview(blob)[_HEADER.size:]
    expected = n * dtype.itemsize
    if len(body) < expected:
        complete = len(body) // dtype.itemsize
        raise IngestionError(
            f"{path}: truncated at row {complete}: header declares {n} rows of dim {dim}, "
            f"body holds {len(body)} of {expected} bytes"
        )
    if len(body) > expected:
        raise IngestionError(f"{path}: {len(body) - expected} trailing bytes after row {n - 1}")
    rec = np.frombuffer(body, dtype=dtype, count=n)
    vectors = rec["vec"].reshape(n, dim)
    bad = ~np.isfinite(vectors).all(axis=1)
    if bad.any():
        raise IngestionError(f"{path}: non-finite value in row {int(np.argmax(bad))}")
    ids = rec["id"].copy()
    if len(np.unique(ids)) != n:
        raise IngestionError(f"{path}: duplicate ids")
    return EmbeddingMatrix(ids, vectors.copy())


def _as_query(matrix, query):
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != matrix.dim:
        raise DimensionError(f"query has dim {q.shape[0]}, index has dim {matrix.dim}")
    if not np.isfinite(q).all():
        raise ValueError("query contains non-finite components")
    return q


def l2_distances(matrix, query):
    """Euclidean distance from ``query`` to every row, accumulated in float64."""
    q = _as_query(matrix, query)
    diff = matrix._vectors64 - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def knn(matrix, query, k):
    """Exact top-``k`` rows by Euclidean distance as ``[(entity_id, l2), ...]``.

    Ties are broken by the lower entity id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = l2_distances(matrix, query)
    n = len(dist)
    if n == 0:
        return []
    if k < n:
        cutoff = np.partition(dist, k - 1)[k - 1]
        pool = np.flatnonzero(dist <= cutoff)
    else:
        pool = np.arange(n)
    order = pool[np.lexsort((matrix.ids[pool], dist[pool]))][:k]
    return [(int(matrix.ids[r]), float(dist[r])) for r in order]


def knn_batch(matrix, queries, k):
    return [knn(matrix, q, k) for q in queries]


def dot_score(y_m, y_e):
    a = np.asarray(y_m, dtype=np.float64).ravel()
    b = np.asarray(y_e, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b))


def mention_id(key):
    """Stable uint64 id for a mention key, used to address sidecar files."""
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")


class FileEmbeddingProvider:
    """Replays mention vectors exported from an external encoder."""

    def __init__(self, path_or_matrix):
        if isinstance(path_or_matrix, EmbeddingMatrix):
            self.matrix = path_or_matrix
        else:
            self.matrix = ingest_embeddings(path_or_matrix)

    @property
    def dim(self):
        return self.matrix.dim

    def embed(self, mention):
        mid = mention_id(mention.key)
        if mid not in self.matrix:
            raise ProviderError(
                f"no stored embedding for mention {mention.key}",
                {"mention_key": mention.key, "mention_id": mid},
            )
        return self.matrix.vector(mid).astype(np.float64)


_WORD_RE = re.compile(r"\w+")


def _norm(text):
    return unicodedata.normalize("NFC", unicodedata.normalize("NFC", text).casefold())


class HashEmbeddingProvider:
    """Deterministic bag-of-features embedding for fixtures and tests.

    Each word and character trigram is hashed to a seeded Gaussian vector;
    context words get ``context_weight``. Output vectors have unit length.
    """

    def __init__(self, dim=64, seed=0, context_weight=0.15, trigram_weight=0.5):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.context_weight = context_weight
        self.trigram_weight = trigram_weight

    def _feature_vector(self, feature):
        digest = hashlib.blake2b(f"{self.seed}|{feature}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dim)

    def _accumulate(self, acc, text, weight, trigrams):
        for word in _WORD_RE.findall(_norm(text)):
            acc += weight * self._feature_vector("w:" + word)
            if trigrams:
                padded = f"#{word}#"
                for i in range(len(padded) - 2):
                    acc += self.trigram_weight * weight * self._feature_vector("c:" + padded[i:i + 3])

    def embed_text(self, text, context=""):
        acc = np.zeros(self.dim)
        self._accumulate(acc, text, 1.0, trigrams=True)
        if context and self.context_weight:
            self._accumulate(acc, context, self.context_weight, trigrams=False)
        norm = np.linalg.norm(acc)
        return acc / norm if norm > 0 else acc

    def embed(self, mention):
        context = f"{mention.left_context} {mention.right_context}".strip()
        return self.embed_text(mention.surface, context)


def embed(provider, mention):
    try:
        vec = provider.embed(mention)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"provider failed on {mention.key}: {exc}", {"mention_key": mention.key}) from exc
    vec = np.asarray(vec, dtype=np.float64)
    if not np.isfinite(vec).all():
        raise ProviderError(f"non-finite embedding for {mention.key}", {"mention_key": mention.key})
    return vec
