"""The multi-task tagging network: shared bi-directional GRU encoder,
per-task uni-directional GRUs with cross-skip connections, and linear-chain
CRF output layers.

The GRU step and the CRF score/log-partition are registered on the tape as
fused primitives with hand-derived vector-Jacobian products (the CRF
gradient is the classic forward-backward marginal computation); their
correctness is pinned by finite-difference and enumeration tests.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .corpus import AnnotatedQuery, TagLevel, TagVocab
from .embeddings import EmbeddingTable, embed_query
from .numerics import Tape, Tensor

MODEL_MAGIC = b"DBTG1"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# GRU


class GruCell:
    """Gated recurrent unit with update/reset gates and a tanh candidate."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        u, d = hidden_size, input_size
        self.update_in = Tensor(_glorot(rng, (u, d)))
        self.update_rec = Tensor(_glorot(rng, (u, u)))
        self.update_bias = Tensor(np.zeros((u, 1)))
        self.reset_in = Tensor(_glorot(rng, (u, d)))
        self.reset_rec = Tensor(_glorot(rng, (u, u)))
        self.reset_bias = Tensor(np.zeros((u, 1)))
        self.cand_in = Tensor(_glorot(rng, (u, d)))
        self.cand_rec = Tensor(_glorot(rng, (u, u)))
        self.cand_bias = Tensor(np.zeros((u, 1)))

    def parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.update_in", self.update_in),
            (f"{prefix}.update_rec", self.update_rec),
            (f"{prefix}.update_bias", self.update_bias),
            (f"{prefix}.reset_in", self.reset_in),
            (f"{prefix}.reset_rec", self.reset_rec),
            (f"{prefix}.reset_bias", self.reset_bias),
            (f"{prefix}.cand_in", self.cand_in),
            (f"{prefix}.cand_rec", self.cand_rec),
            (f"{prefix}.cand_bias", self.cand_bias),
        ]


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_step(
    cell: GruCell,
    x: Tensor,
    h_prev: Tensor,
    tape: Tape | None = None,
    rec_mask: np.ndarray | None = None,
) -> Tensor:
    """One recurrence step: h_t from the input column and previous state.

    ``rec_mask`` (hidden x 1), when given, drops entries of the previous
    state wherever it feeds a weight matrix; the interpolation path keeps
    the unmasked state (variational recurrent dropout).
    """
    u, d = cell.hidden_size, cell.input_size
    if x.shape != (d, 1):
        raise nm.ShapeError(f"gru_step: input shape {x.shape}, expected {(d, 1)}")
    if h_prev.shape != (u, 1):
        raise nm.ShapeError(f"gru_step: state shape {h_prev.shape}, expected {(u, 1)}")

    xv, hv = x.data, h_prev.data
    hm = hv if rec_mask is None else hv * rec_mask
    uz, wz, bz = cell.update_in.data, cell.update_rec.data, cell.update_bias.data
    ur, wr, br = cell.reset_in.data, cell.reset_rec.data, cell.reset_bias.data
    uh, wh, bh = cell.cand_in.data, cell.cand_rec.data, cell.cand_bias.data

    z = _sigmoid(uz @ xv + wz @ hm + bz)
    r = _sigmoid(ur @ xv + wr @ hm + br)
    rh = r * hm
    c = np.tanh(uh @ xv + wh @ rh + bh)
    out = Tensor((1.0 - z) * hv + z * c)

    if tape is not None:
        def vjp(g):
            dh = g * (1.0 - z)
            dz = g * (c - hv)
            dc = g * z
            dah = dc * (1.0 - c * c)
            d_uh = dah @ xv.T
            d_wh = dah @ rh.T
            drh = wh.T @ dah
            dr = drh * hm
            dhm = drh * r
            dar = dr * r * (1.0 - r)
            d_ur = dar @ xv.T
            d_wr = dar @ hm.T
            dhm = dhm + wr.T @ dar
            daz = dz * z * (1.0 - z)
            d_uz = daz @ xv.T
            d_wz = daz @ hm.T
            dhm = dhm + wz.T @ daz
            dx = uz.T @ daz + ur.T @ dar + uh.T @ dah
            if rec_mask is not None:
                dhm = dhm * rec_mask
            dh = dh + dhm
            return (dx, dh, d_uz, d_wz, daz, d_ur, d_wr, dar, d_uh, d_wh, dah)

        tape.record(
            out,
            (
                x,
                h_prev,
                cell.update_in,
                cell.update_rec,
                cell.update_bias,
                cell.reset_in,
                cell.reset_rec,
                cell.reset_bias,
                cell.cand_in,
                cell.cand_rec,
                cell.cand_bias,
            ),
            vjp,
        )
    return out


def _run_gru(
    cell: GruCell,
    cols: list[Tensor],
    tape: Tape | None,
    rec_mask: np.ndarray | None = None,
    reverse: bool = False,
) -> list[Tensor]:
    """Run the cell over a column sequence; states come back in token order."""
    h = Tensor(np.zeros((cell.hidden_size, 1)))
    states = []
    for x in (reversed(cols) if reverse else cols):
        h = gru_step(cell, x, h, tape, rec_mask)
        states.append(h)
    return states[::-1] if reverse else states


class BiGruLayer:
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        self.forward_cell = GruCell(input_size, hidden_size, rng)
        self.backward_cell = GruCell(input_size, hidden_size, rng)

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    def parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return self.forward_cell.parameters(f"{prefix}.fwd") + self.backward_cell.parameters(
            f"{prefix}.bwd"
        )


def matrix_columns(matrix) -> list[Tensor]:
    """Split an (n x d) array into n constant (d x 1) column tensors."""
    data = matrix.data if isinstance(matrix, Tensor) else np.asarray(matrix, dtype=np.float64)
    return [Tensor(data[t].reshape(-1, 1)) for t in range(data.shape[0])]


def bigru_forward(
    layer: BiGruLayer,
    X,
    tape: Tape | None = None,
    rec_masks: tuple[np.ndarray | None, np.ndarray | None] = (None, None),
) -> Tensor:
    """Encode an (n x d) input into (n x 2u): forward and backward states
    concatenated per token, both directions starting from a zero state.

    A Tensor input produced on the tape keeps its gradient path; raw
    arrays (frozen embeddings) become constant columns.
    """
    if isinstance(X, Tensor) and tape is not None and tape.produced(X):
        n, width = X.shape
        flipped = nm.transpose(X, tape)
        cols = [nm.slice_(flipped, (0, width), (t, t + 1), tape) for t in range(n)]
    else:
        cols = matrix_columns(X)
    fwd = _run_gru(layer.forward_cell, cols, tape, rec_masks[0])
    bwd = _run_gru(layer.backward_cell, cols, tape, rec_masks[1], reverse=True)
    stacked = nm.concat(
        [nm.concat(fwd, axis=1, tape=tape), nm.concat(bwd, axis=1, tape=tape)], axis=0, tape=tape
    )
    return nm.transpose(stacked, tape)


# ---------------------------------------------------------------------------
# CRF


class CrfLayer:
    """Linear-chain CRF with learned transitions and an affine emission map.

    The transition matrix is (k+2) x (k+2) with the boundary symbols at
    rows/columns k (START) and k+1 (STOP).  Transitions out of STOP and
    into START are structurally masked: no computation ever reads them,
    and ``effective_transitions`` reports them as -inf.
    """

    def __init__(self, tag_count: int, feature_size: int, rng: np.random.Generator):
        self.tag_count = tag_count
        self.feature_size = feature_size
        self.emit_weight = Tensor(_glorot(rng, (feature_size, tag_count)))
        self.emit_bias = Tensor(np.zeros((1, tag_count)))
        self.transitions = Tensor(np.zeros((tag_count + 2, tag_count + 2)))

    @property
    def start_index(self) -> int:
        return self.tag_count

    @property
    def stop_index(self) -> int:
        return self.tag_count + 1

    def effective_transitions(self) -> np.ndarray:
        eff = self.transitions.data.copy()
        eff[self.stop_index, :] = -np.inf
        eff[:, self.start_index] = -np.inf
        return eff

    def emissions(self, features: Tensor, tape: Tape | None = None) -> Tensor:
        if features.shape[1] != self.feature_size:
            raise nm.ShapeError(
                f"emission features have width {features.shape[1]}, expected {self.feature_size}"
            )
        return nm.add(nm.matmul(features, self.emit_weight, tape), self.emit_bias, tape)

    def parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.emit_weight", self.emit_weight),
            (f"{prefix}.emit_bias", self.emit_bias),
            (f"{prefix}.transitions", self.transitions),
        ]


def _check_tags(crf: CrfLayer, emissions: Tensor, tags: list[int]):
    n, k = emissions.shape
    if k != crf.tag_count:
        raise nm.ShapeError(f"emissions have {k} tags, CRF has {crf.tag_count}")
    if len(tags) != n:
        raise ValueError(f"tag sequence length {len(tags)} != {n} tokens")
    for t in tags:
        if not 0 <= t < k:
            raise ValueError(f"tag index {t} outside 0..{k - 1}")


def crf_score(crf: CrfLayer, emissions: Tensor, tags: list[int], tape: Tape | None = None) -> Tensor:
    """Path score: boundary and adjacent transitions plus per-token emissions."""
    _check_tags(crf, emissions, tags)
    n, k = emissions.shape
    G, A = emissions.data, crf.transitions.data
    start, stop = crf.start_index, crf.stop_index
    value = A[start, tags[0]] + A[tags[-1], stop]
    for i, tag in enumerate(tags):
        value += G[i, tag]
    for i in range(n - 1):
        value += A[tags[i], tags[i + 1]]
    out = Tensor(np.array([[value]]))
    if tape is not None:
        def vjp(g):
            w = g[0, 0]
            dG = np.zeros((n, k))
            dA = np.zeros_like(A)
            for i, tag in enumerate(tags):
                dG[i, tag] += w
            dA[start, tags[0]] += w
            dA[tags[-1], stop] += w
            for i in range(n - 1):
                dA[tags[i], tags[i + 1]] += w
            return (dG, dA)

        tape.record(out, (emissions, crf.transitions), vjp)
    return out


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis=axis)


def crf_log_partition(crf: CrfLayer, emissions: Tensor, tape: Tape | None = None) -> Tensor:
    """log sum over all tag sequences of exp(path score), by the forward
    algorithm in log space; the gradient is the forward-backward marginals."""
    n, k = emissions.shape
    if k != crf.tag_count:
        raise nm.ShapeError(f"emissions have {k} tags, CRF has {crf.tag_count}")
    G, A = emissions.data, crf.transitions.data
    start, stop = crf.start_index, crf.stop_index
    inner = A[:k, :k]
    alpha = np.empty((n, k))
    alpha[0] = A[start, :k] + G[0]
    for t in range(1, n):
        alpha[t] = _lse(alpha[t - 1][:, None] + inner, axis=0) + G[t]
    log_z = float(_lse((alpha[n - 1] + A[:k, stop])[None, :], axis=1)[0])
    out = Tensor(np.array([[log_z]]))

    if tape is not None:
        def vjp(g):
            w = g[0, 0]
            beta = np.empty((n, k))
            beta[n - 1] = A[:k, stop]
            for t in range(n - 2, -1, -1):
                beta[t] = _lse(inner + (G[t + 1] + beta[t + 1])[None, :], axis=1)
            unary = np.exp(alpha + beta - log_z)
            dG = unary * w
            dA = np.zeros_like(A)
            for t in range(n - 1):
                pair = np.exp(
                    alpha[t][:, None] + inner + (G[t + 1] + beta[t + 1])[None, :] - log_z
                )
                dA[:k, :k] += pair
            dA[:k, :k] *= w
            dA[start, :k] = unary[0] * w
            dA[:k, stop] = unary[n - 1] * w
            return (dG, dA)

        tape.record(out, (emissions, crf.transitions), vjp)
    return out


def crf_nll(crf: CrfLayer, emissions: Tensor, tags: list[int], tape: Tape | None = None) -> Tensor:
    """Negative log-probability of the gold sequence; non-negative."""
    log_z = crf_log_partition(crf, emissions, tape)
    gold = crf_score(crf, emissions, tags, tape)
    return nm.add(log_z, nm.scale(gold, -1.0, tape), tape)


def viterbi_decode(crf: CrfLayer, emissions) -> tuple[list[int], float]:
    """Highest-scoring tag sequence; ties resolve to the lowest tag index."""
    G = emissions.data if isinstance(emissions, Tensor) else np.asarray(emissions, dtype=np.float64)
    n, k = G.shape
    if k != crf.tag_count:
        raise nm.ShapeError(f"emissions have {k} tags, CRF has {crf.tag_count}")
    A = crf.transitions.data
    start, stop = crf.start_index, crf.stop_index
    inner = A[:k, :k]
    delta = A[start, :k] + G[0]
    back = np.zeros((n, k), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + inner
        back[t] = cand.argmax(axis=0)
        delta = cand[back[t], np.arange(k)] + G[t]
    final = delta + A[:k, stop]
    last = int(final.argmax())
    score = float(final[last])
    tags = [last]
    for t in range(n - 1, 0, -1):
        last = int(back[t, last])
        tags.append(last)
    return tags[::-1], score


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class TaskWeights:
    pos: float
    type: float
    schema: float

    def __post_init__(self):
        if min(self.pos, self.type, self.schema) < 0:
            raise ValueError("task weights must be non-negative")
        if math.fsum((self.pos, self.type, self.schema)) != 1.0:
            raise ValueError(
                f"task weights must sum to 1, got {self.pos} + {self.type} + {self.schema}"
            )

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.pos, self.type, self.schema)


class TaskHead:
    def __init__(self, level: TagLevel, cell: GruCell, crf: CrfLayer, skip_width: int):
        if crf.feature_size != cell.hidden_size + skip_width:
            raise nm.ShapeError(
                f"{level.value} head: CRF expects {crf.feature_size} features, "
                f"head provides {cell.hidden_size + skip_width}"
            )
        self.level = level
        self.cell = cell
        self.crf = crf
        self.skip_width = skip_width

    def parameters(self) -> list[tuple[str, Tensor]]:
        prefix = f"head.{self.level.value}"
        return self.cell.parameters(f"{prefix}.gru") + self.crf.parameters(f"{prefix}.crf")


class MaskStream:
    """Seeded source of inverted-scale Bernoulli dropout masks."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._rng = rng

    def row(self, width: int) -> np.ndarray:
        if self.rate == 0.0:
            return np.ones((1, width))
        keep = (self._rng.random(width) >= self.rate).astype(np.float64)
        return (keep / (1.0 - self.rate)).reshape(1, width)

    def column(self, height: int) -> np.ndarray:
        return self.row(height).reshape(height, 1)


HEAD_ORDER = (TagLevel.POS, TagLevel.TYPE, TagLevel.SCHEMA)


class DBTaggerModel:
    """Shared bi-GRU encoder feeding POS, TYPE and SCHEMA heads in order,
    each head a uni-directional GRU plus CRF, with the previous head's GRU
    outputs concatenated into the next head's emission features."""

    def __init__(
        self,
        embeddings: EmbeddingTable,
        shared: BiGruLayer,
        heads: list[TaskHead],
        vocabs: dict[TagLevel, TagVocab],
        weights: TaskWeights,
        dropout_rate: float,
    ):
        if tuple(h.level for h in heads) != HEAD_ORDER:
            raise ValueError("heads must be ordered POS, TYPE, SCHEMA")
        for head in heads:
            if vocabs[head.level].size != head.crf.tag_count:
                raise ValueError(
                    f"{head.level.value} vocabulary size {vocabs[head.level].size} != "
                    f"CRF tag count {head.crf.tag_count}"
                )
        self.embeddings = embeddings
        self.shared = shared
        self.heads = heads
        self.vocabs = vocabs
        self.weights = weights
        self.dropout_rate = dropout_rate

    @classmethod
    def build(
        cls,
        embeddings: EmbeddingTable,
        vocabs: dict[TagLevel, TagVocab],
        hidden: int = 100,
        weights: TaskWeights = TaskWeights(0.1, 0.2, 0.7),
        dropout_rate: float = 0.5,
        seed: int = 0,
    ) -> "DBTaggerModel":
        rng = np.random.default_rng(seed)
        d, u = embeddings.dimension, hidden
        shared = BiGruLayer(d, u, rng)
        heads = []
        for i, level in enumerate(HEAD_ORDER):
            skip = 0 if i == 0 else u
            cell = GruCell(2 * u, u, rng)
            crf = CrfLayer(vocabs[level].size, u + skip, rng)
            heads.append(TaskHead(level, cell, crf, skip))
        return cls(embeddings, shared, heads, vocabs, weights, dropout_rate)

    @property
    def hidden_size(self) -> int:
        return self.shared.hidden_size

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = self.shared.parameters("shared")
        for head in self.heads:
            params += head.parameters()
        return params

    def estimated_bytes(self) -> int:
        return (
            sum(t.data.size * 8 for _, t in self.parameters())
            + self.embeddings.estimated_bytes()
        )

    # trainable protocol -----------------------------------------------------

    def query_loss(self, query: AnnotatedQuery, mask_stream: MaskStream | None):
        return total_loss(self, query, mask_stream)

    def predict_tags(self, tokens: list[str]) -> list[str]:
        tagged = tag_query(self, tokens)
        return [t.schema_tag for t in tagged.tokens]

    def gold_tags(self, query: AnnotatedQuery) -> list[str]:
        return query.tags(TagLevel.SCHEMA)


def model_forward(
    model: DBTaggerModel,
    tokens: list[str],
    mode: str = "infer",
    mask_stream: MaskStream | None = None,
) -> tuple[Tensor, Tensor, Tensor, Tape]:
    """Emission matrices for the three heads, plus the tape that built them.

    Dropout (shared-encoder recurrent states and outputs) applies only in
    train mode, with masks drawn from ``mask_stream`` in a fixed order:
    forward recurrent, backward recurrent, encoder output.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if not tokens:
        raise ValueError("cannot tag an empty token list")
    tape = Tape()
    X = embed_query(model.embeddings, tokens)
    n = len(tokens)
    u = model.hidden_size

    rec_masks: tuple[np.ndarray | None, np.ndarray | None] = (None, None)
    out_mask = None
    if mode == "train":
        if mask_stream is None:
            raise ValueError("train mode needs a mask stream")
        rec_masks = (mask_stream.column(u), mask_stream.column(u))
        out_mask = mask_stream.row(2 * u)

    H = bigru_forward(model.shared, X, tape, rec_masks)
    if out_mask is not None:
        H = nm.dropout(H, np.tile(out_mask, (n, 1)), tape)
    Ht = nm.transpose(H, tape)
    cols = [nm.slice_(Ht, (0, 2 * u), (t, t + 1), tape) for t in range(n)]

    emissions = []
    prev_states: list[Tensor] | None = None
    for head in model.heads:
        states = _run_gru(head.cell, cols, tape)
        if prev_states is None:
            feats = states
        else:
            feats = [nm.concat([s, p], axis=0, tape=tape) for s, p in zip(states, prev_states)]
        F = nm.transpose(nm.concat(feats, axis=1, tape=tape), tape)
        emissions.append(head.crf.emissions(F, tape))
        prev_states = states
    return emissions[0], emissions[1], emissions[2], tape


def total_loss(
    model: DBTaggerModel,
    query: AnnotatedQuery,
    mask_stream: MaskStream | None = None,
) -> tuple[Tensor, Tape]:
    """Weighted sum of the three per-task CRF losses for one query."""
    tokens = query.words
    mode = "train" if mask_stream is not None else "infer"
    g_pos, g_type, g_schema, tape = model_forward(model, tokens, mode, mask_stream)
    losses = []
    for head, emission in zip(model.heads, (g_pos, g_type, g_schema)):
        vocab = model.vocabs[head.level]
        gold = [vocab.index_of(t) for t in query.tags(head.level)]
        losses.append(crf_nll(head.crf, emission, gold, tape))
    w_pos, w_type, w_schema = model.weights.as_tuple()
    weighted = nm.add(
        nm.add(nm.scale(losses[0], w_pos, tape), nm.scale(losses[1], w_type, tape), tape),
        nm.scale(losses[2], w_schema, tape),
        tape,
    )
    return weighted, tape


@dataclass(frozen=True)
class TaggedToken:
    text: str
    type_tag: str
    schema_tag: str


@dataclass(frozen=True)
class ValueSpan:
    start: int
    end: int  # exclusive
    attribute: str
    text: str


@dataclass(frozen=True)
class TaggedQuery:
    tokens: tuple[TaggedToken, ...]
    value_spans: tuple[ValueSpan, ...]

    def pairs(self) -> list[tuple[str, str]]:
        return [(t.type_tag, t.schema_tag) for t in self.tokens]


def merge_value_spans(tokens: list[TaggedToken]) -> tuple[ValueSpan, ...]:
    """Consecutive VALUE tokens sharing a schema tag form one keyword span."""
    spans = []
    i = 0
    while i < len(tokens):
        if tokens[i].type_tag != "VALUE":
            i += 1
            continue
        j = i + 1
        while (
            j < len(tokens)
            and tokens[j].type_tag == "VALUE"
            and tokens[j].schema_tag == tokens[i].schema_tag
        ):
            j += 1
        spans.append(
            ValueSpan(
                start=i,
                end=j,
                attribute=tokens[i].schema_tag,
                text=" ".join(t.text for t in tokens[i:j]),
            )
        )
        i = j
    return tuple(spans)


def tag_query(model: DBTaggerModel, tokens: list[str]) -> TaggedQuery:
    """Decode TYPE and SCHEMA tags for a tokenized query and merge value
    spans.  The POS head only shapes training; its output is discarded here."""
    _, g_type, g_schema, _ = model_forward(model, tokens, mode="infer")
    type_head = model.heads[1]
    schema_head = model.heads[2]
    type_idx, _ = viterbi_decode(type_head.crf, g_type)
    schema_idx, _ = viterbi_decode(schema_head.crf, g_schema)
    type_vocab = model.vocabs[TagLevel.TYPE]
    schema_vocab = model.vocabs[TagLevel.SCHEMA]
    tagged = [
        TaggedToken(
            text=tok,
            type_tag=type_vocab.symbols[ti],
            schema_tag=schema_vocab.symbols[si],
        )
        for tok, ti, si in zip(tokens, type_idx, schema_idx)
    ]
    return TaggedQuery(tokens=tuple(tagged), value_spans=merge_value_spans(tagged))


# ---------------------------------------------------------------------------
# serialization (magic DBTG1, little-endian, bit-exact round trip)


def _pack_str(out: list[bytes], s: str):
    raw = s.encode("utf-8")
    out.append(struct.pack("<I", len(raw)))
    out.append(raw)


def _pack_matrix(out: list[bytes], data: np.ndarray):
    rows, cols = data.shape
    out.append(struct.pack("<II", rows, cols))
    out.append(np.ascontiguousarray(data, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError("truncated model file")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def matrix(self) -> np.ndarray:
        rows, cols = struct.unpack("<II", self.take(8))
        flat = np.frombuffer(self.take(rows * cols * 8), dtype="<f8")
        return flat.reshape(rows, cols).astype(np.float64)


def save_model(model: DBTaggerModel) -> bytes:
    """Serialize the model, embedding table included, to the versioned
    binary layout."""
    out: list[bytes] = [MODEL_MAGIC, struct.pack("<I", MODEL_VERSION)]
    emb = model.embeddings
    out.append(struct.pack("<IQQ", emb.dimension, emb.bucket_count, emb.subword_seed))
    out.append(struct.pack("<I", len(emb.vectors)))
    for token, vec in emb.vectors.items():
        _pack_str(out, token)
        out.append(np.ascontiguousarray(vec, dtype="<f8").tobytes())
    for level in HEAD_ORDER:
        vocab = model.vocabs[level]
        out.append(struct.pack("<I", vocab.size))
        for symbol in vocab.symbols:
            _pack_str(out, symbol)
    out.append(struct.pack("<I", model.hidden_size))
    out.append(struct.pack("<ddd", *model.weights.as_tuple()))
    out.append(struct.pack("<d", model.dropout_rate))
    params = model.parameters()
    out.append(struct.pack("<I", len(params)))
    for name, tensor in params:
        _pack_str(out, name)
        _pack_matrix(out, tensor.data)
    return b"".join(out)


def load_model(blob: bytes) -> DBTaggerModel:
    reader = _Reader(blob)
    if reader.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise ValueError("not a model file (bad magic)")
    version = reader.u32()
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    dim = reader.u32()
    buckets = reader.u64()
    subword_seed = reader.u64()
    vectors = {}
    for _ in range(reader.u32()):
        token = reader.string()
        vec = np.frombuffer(reader.take(dim * 8), dtype="<f8").astype(np.float64)
        vectors[token] = vec
    embeddings = EmbeddingTable(dim, vectors, bucket_count=buckets, subword_seed=subword_seed)
    vocabs = {}
    for level in HEAD_ORDER:
        symbols = tuple(reader.string() for _ in range(reader.u32()))
        vocabs[level] = TagVocab(level=level, symbols=symbols)
    hidden = reader.u32()
    weights = TaskWeights(reader.f64(), reader.f64(), reader.f64())
    dropout_rate = reader.f64()
    model = DBTaggerModel.build(
        embeddings, vocabs, hidden=hidden, weights=weights, dropout_rate=dropout_rate, seed=0
    )
    stored = {}
    for _ in range(reader.u32()):
        name = reader.string()
        stored[name] = reader.matrix()
    expected = model.parameters()
    if set(stored) != {name for name, _ in expected}:
        raise ValueError("model file parameter set does not match the architecture")
    for name, tensor in expected:
        if stored[name].shape != tensor.data.shape:
            raise ValueError(
                f"parameter {name} has shape {stored[name].shape}, expected {tensor.data.shape}"
            )
        tensor.data = stored[name]
    return model
