"""Unsupervised keyword mappers used as comparison points: tf-idf over an
inverted word-n-gram value index, edit-distance matching against schema
names, embedding cosine similarity, and a capped row scan.

All mappers are pure functions of (index/snapshot, query).  Normalization
for indexing and lookup is lowercase, punctuation stripped, whitespace
collapsed.
"""

from __future__ import annotations

import string
import struct
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingTable, embed_token
from .schema import ContentSnapshot, Schema

INDEX_MAGIC = b"DBIX1"
INDEX_VERSION = 1
NGRAM_LIMIT = 3
SCAN_ROW_LIMIT = 2000

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def normalize(text: str) -> str:
    return " ".join(text.translate(_PUNCT_TABLE).lower().split())


def word_ngrams(words: list[str], max_n: int = NGRAM_LIMIT) -> list[str]:
    """All contiguous word n-grams for n = 1..max_n."""
    grams = []
    for n in range(1, min(max_n, len(words)) + 1):
        for start in range(len(words) - n + 1):
            grams.append(" ".join(words[start : start + n]))
    return grams


@dataclass(frozen=True)
class MappingResult:
    start: int
    end: int  # exclusive token index
    target: str
    kind: str  # "relation" | "value"
    score: float

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty span [{self.start}, {self.end})")
        if self.kind not in ("relation", "value"):
            raise ValueError(f"unknown mapping kind {self.kind!r}")


class InvertedValueIndex:
    """Phrase -> {column -> cell frequency} postings over database values.

    tf counts the cells of a column containing the phrase (each cell once);
    df is the number of columns with at least one such cell.
    """

    def __init__(self, postings: dict[str, dict[str, int]], columns: tuple[str, ...]):
        self.postings = postings
        self.columns = columns

    def lookup(self, phrase: str) -> dict[str, int] | None:
        return self.postings.get(phrase)

    def document_frequency(self, phrase: str) -> int:
        hit = self.postings.get(phrase)
        return len(hit) if hit else 0

    def tfidf(self, phrase: str, column: str) -> float:
        hit = self.postings.get(phrase)
        if not hit or column not in hit:
            return 0.0
        idf = np.log((1 + len(self.columns)) / (1 + len(hit)))
        return hit[column] * float(idf)

    def __len__(self) -> int:
        return len(self.postings)

    def estimated_bytes(self) -> int:
        total = 0
        for phrase, cols in self.postings.items():
            total += len(phrase.encode("utf-8")) + 16 * len(cols)
        total += sum(len(c.encode("utf-8")) for c in self.columns)
        return total


def build_value_index(snapshot: ContentSnapshot, schema: Schema) -> InvertedValueIndex:
    """Index every word n-gram (n <= 3) of every normalized cell value."""
    postings: dict[str, dict[str, int]] = {}
    columns = []
    for column, values in snapshot.text_columns():
        columns.append(column)
        for value in values:
            words = normalize(value).split()
            if not words:
                continue
            for phrase in set(word_ngrams(words)):
                cols = postings.setdefault(phrase, {})
                cols[column] = cols.get(column, 0) + 1
    return InvertedValueIndex(postings, tuple(columns))


def _pick_column(hits: dict[str, int]) -> str:
    """Biggest tf wins; ties go to the lexicographically smallest column."""
    return min(hits, key=lambda col: (-hits[col], col))


def tfidf_map(index: InvertedValueIndex, tokens: list[str]) -> list[MappingResult]:
    """Longest-first exact phrase lookup over the query's word n-grams;
    shorter matches inside an accepted span are suppressed."""
    n = len(tokens)
    covered = [False] * n
    results = []
    for length in range(NGRAM_LIMIT, 0, -1):
        for start in range(0, n - length + 1):
            end = start + length
            if any(covered[start:end]):
                continue
            phrase = normalize(" ".join(tokens[start:end]))
            if not phrase:
                continue
            hits = index.lookup(phrase)
            if not hits:
                continue
            column = _pick_column(hits)
            results.append(
                MappingResult(
                    start=start,
                    end=end,
                    target=column,
                    kind="value",
                    score=index.tfidf(phrase, column),
                )
            )
            for i in range(start, end):
                covered[i] = True
    return sorted(results, key=lambda r: r.start)


def edit_distance(a: str, b: str) -> int:
    """Classic dynamic-programming Levenshtein distance."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def _name_key(name: str) -> str:
    return name.lower().replace("_", " ")


def edit_distance_relation_map(
    token: str,
    schema: Schema,
    max_distance: int,
    token_index: int = 0,
) -> MappingResult | None:
    """Closest table or attribute name within ``max_distance`` edits
    (case-insensitive, underscores as spaces); ties prefer the shorter
    name, then the lexicographically smaller one."""
    if not token:
        raise ValueError("cannot match an empty token")
    needle = _name_key(token)
    candidates = []
    for table in schema.tables:
        candidates.append((table.name, table.name))
        for attr in table.attributes:
            candidates.append((attr.name, f"{table.name}.{attr.name}"))
    best = None
    for name, target in candidates:
        distance = edit_distance(needle, _name_key(name))
        key = (distance, len(name), name, target)
        if best is None or key < best[0]:
            best = (key, name, target)
    if best is None or best[0][0] > max_distance:
        return None
    return MappingResult(
        start=token_index,
        end=token_index + 1,
        target=best[2],
        kind="relation",
        score=float(best[0][0]),
    )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 0.0
    return float(np.dot(a, b)) / norm


def embedding_similarity_map(
    table: EmbeddingTable,
    token: str,
    candidates: list[tuple[str, str]],
    threshold: float,
    kind: str = "relation",
    token_index: int = 0,
) -> MappingResult | None:
    """Highest cosine similarity at or above the threshold wins.

    ``candidates`` are (surface text, target) pairs; multi-word surfaces
    embed as the mean of their word vectors.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    vec = embed_token(table, token)
    best = None
    for surface, target in candidates:
        words = _name_key(surface).split()
        if not words:
            continue
        cand_vec = np.mean([embed_token(table, w) for w in words], axis=0)
        sim = cosine_similarity(vec, cand_vec)
        key = (-sim, target)
        if best is None or key < best[0]:
            best = (key, sim, target)
    if best is None or best[1] < threshold:
        return None
    return MappingResult(
        start=token_index, end=token_index + 1, target=best[2], kind="value" if kind == "value" else "relation",
        score=best[1],
    )


def scan_map(
    snapshot: ContentSnapshot,
    token_ngrams: list[tuple[int, int, str]],
    row_limit: int = SCAN_ROW_LIMIT,
) -> list[MappingResult]:
    """Substring scan of every text column per query n-gram, counting at
    most ``row_limit`` matching rows per column; the column with the most
    matches wins, ties to the lexicographically smaller name."""
    results = []
    for start, end, phrase in token_ngrams:
        needle = normalize(phrase)
        if not needle:
            continue
        hits: dict[str, int] = {}
        for column, values in snapshot.text_columns():
            count = 0
            for value in values:
                if needle in normalize(value):
                    count += 1
                    if count >= row_limit:
                        break
            if count:
                hits[column] = count
        if hits:
            column = _pick_column(hits)
            results.append(
                MappingResult(
                    start=start, end=end, target=column, kind="value", score=float(hits[column])
                )
            )
    return results


# ---------------------------------------------------------------------------
# index persistence (magic DBIX1)


def save_index(index: InvertedValueIndex) -> bytes:
    out = [INDEX_MAGIC, struct.pack("<I", INDEX_VERSION)]
    out.append(struct.pack("<I", len(index.columns)))
    column_ids = {}
    for i, column in enumerate(index.columns):
        column_ids[column] = i
        raw = column.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
    out.append(struct.pack("<I", len(index.postings)))
    for phrase, cols in index.postings.items():
        raw = phrase.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", len(cols)))
        for column, tf in cols.items():
            out.append(struct.pack("<II", column_ids[column], tf))
    return b"".join(out)


def load_index(blob: bytes) -> InvertedValueIndex:
    if blob[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise ValueError("not an index file (bad magic)")
    pos = len(INDEX_MAGIC)

    def u32() -> int:
        nonlocal pos
        value = struct.unpack_from("<I", blob, pos)[0]
        pos += 4
        return value

    def text() -> str:
        nonlocal pos
        length = u32()
        raw = blob[pos : pos + length]
        pos += length
        return raw.decode("utf-8")

    version = u32()
    if version != INDEX_VERSION:
        raise ValueError(f"unsupported index version {version}")
    columns = tuple(text() for _ in range(u32()))
    postings: dict[str, dict[str, int]] = {}
    for _ in range(u32()):
        phrase = text()
        cols = {}
        for _ in range(u32()):
            col_id = u32()
            tf = u32()
            cols[columns[col_id]] = tf
        postings[phrase] = cols
    return InvertedValueIndex(postings, columns)
