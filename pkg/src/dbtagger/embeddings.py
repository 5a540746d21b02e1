"""Pre-trained word vectors with a deterministic sub-word fallback.

Lookup order is exact match, lowercase match, then the mean of hashed
character n-gram bucket vectors (n in [3, 6], FNV-1a over the token padded
with ``<`` and ``>``).  Bucket vectors are drawn from a per-bucket seeded
generator so out-of-vocabulary embeddings are reproducible from the file
alone.
"""

from __future__ import annotations

import numpy as np

DEFAULT_BUCKETS = 1 << 21
DEFAULT_SUBWORD_SEED = 101
NGRAM_MIN = 3
NGRAM_MAX = 6

_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619


class EmbeddingFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def fnv1a(data: bytes) -> int:
    """32-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFF
    return h


def char_ngrams(token: str, n_min: int = NGRAM_MIN, n_max: int = NGRAM_MAX) -> list[str]:
    """All character n-grams of the boundary-padded token."""
    padded = f"<{token}>"
    grams = []
    for n in range(n_min, n_max + 1):
        for start in range(0, len(padded) - n + 1):
            grams.append(padded[start : start + n])
    return grams


class EmbeddingTable:
    def __init__(
        self,
        dimension: int,
        vectors: dict[str, np.ndarray],
        bucket_count: int = DEFAULT_BUCKETS,
        subword_seed: int = DEFAULT_SUBWORD_SEED,
    ):
        if dimension <= 0:
            raise ValueError(f"dimension must be positive, got {dimension}")
        self.dimension = dimension
        self.vectors = vectors
        self.bucket_count = bucket_count
        self.subword_seed = subword_seed
        self._bucket_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def _bucket_vector(self, bucket: int) -> np.ndarray:
        vec = self._bucket_cache.get(bucket)
        if vec is None:
            rng = np.random.default_rng([self.subword_seed, bucket])
            vec = rng.uniform(-1.0 / self.dimension, 1.0 / self.dimension, self.dimension)
            self._bucket_cache[bucket] = vec
        return vec

    def subword_vector(self, token: str) -> np.ndarray:
        grams = char_ngrams(token)
        total = np.zeros(self.dimension)
        for gram in grams:
            bucket = fnv1a(gram.encode("utf-8")) % self.bucket_count
            total += self._bucket_vector(bucket)
        return total / len(grams)

    def estimated_bytes(self) -> int:
        stored = sum(len(tok.encode("utf-8")) for tok in self.vectors)
        return stored + len(self.vectors) * self.dimension * 8


def embed_token(table: EmbeddingTable, token: str) -> np.ndarray:
    """Total lookup: exact, then lowercase, then sub-word mean."""
    if not token:
        raise ValueError("cannot embed an empty token")
    vec = table.vectors.get(token)
    if vec is not None:
        return vec
    vec = table.vectors.get(token.lower())
    if vec is not None:
        return vec
    return table.subword_vector(token)


def embed_query(table: EmbeddingTable, tokens: list[str]) -> np.ndarray:
    """Stack per-token embeddings into the query's input matrix (n x d)."""
    if not tokens:
        raise ValueError("cannot embed an empty query")
    return np.stack([embed_token(table, t) for t in tokens])


def load_embeddings(stream, expected_dim: int | None = None) -> EmbeddingTable:
    """Parse the text vector format: ``token v1 ... vd`` per line.

    An optional first line ``count dim`` is accepted, as is a
    ``#subword B=<buckets> seed=<u64>`` line pinning the hash parameters.
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in stream]

    bucket_count = DEFAULT_BUCKETS
    subword_seed = DEFAULT_SUBWORD_SEED
    dimension = None
    vectors: dict[str, np.ndarray] = {}

    body_started = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("#subword"):
                for part in line.split()[1:]:
                    key, _, value = part.partition("=")
                    if key == "B":
                        bucket_count = int(value)
                    elif key == "seed":
                        subword_seed = int(value)
            continue
        fields = line.split()
        if not body_started and len(fields) == 2:
            try:
                int(fields[0]), int(fields[1])
            except ValueError:
                pass
            else:
                dimension = int(fields[1])
                body_started = True
                continue
        body_started = True
        token, values = fields[0], fields[1:]
        if not values:
            raise EmbeddingFormatError(f"no vector components for token {token!r}", line=lineno)
        try:
            vec = np.array([float(v) for v in values])
        except ValueError:
            raise EmbeddingFormatError(
                f"non-numeric vector component for token {token!r}", line=lineno
            ) from None
        if dimension is None:
            dimension = len(vec)
        elif len(vec) != dimension:
            raise EmbeddingFormatError(
                f"token {token!r} has {len(vec)} components, expected {dimension}", line=lineno
            )
        vectors[token] = vec

    if not vectors:
        raise EmbeddingFormatError("no vectors found")
    if expected_dim is not None and dimension != expected_dim:
        raise EmbeddingFormatError(f"expected dimension {expected_dim}, file has {dimension}")
    return EmbeddingTable(
        dimension=dimension,
        vectors=vectors,
        bucket_count=bucket_count,
        subword_seed=subword_seed,
    )


def save_embeddings(table: EmbeddingTable) -> str:
    """Serialize back to the text format with the subword header pinned."""
    out = [f"#subword B={table.bucket_count} seed={table.subword_seed}"]
    out.append(f"{len(table.vectors)} {table.dimension}")
    for token in table.vectors:
        comps = " ".join(repr(float(v)) for v in table.vectors[token])
        out.append(f"{token} {comps}")
    return "\n".join(out) + "\n"
