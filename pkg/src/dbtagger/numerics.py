"""Dense float64 matrix primitives with reverse-mode differentiation.

Everything is a rank-2 array (scalars are 1x1, vectors are rows or
columns).  Primitives optionally record onto an explicit tape; a tape is
an execution-ordered list of records, so reversing it is already a valid
topological order for accumulating vector-Jacobian products.  A tape is
single-threaded; independent tapes can run concurrently.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """A 2-D float64 value with an optional gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.grad = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def add_grad(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def scalar(value: float) -> Tensor:
    return Tensor(np.array([[float(value)]]))


class Tape:
    """Execution-ordered record of primitive applications."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._output_ids: set[int] = set()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        """Register ``out = f(inputs)`` with ``vjp(grad_out) -> input grads``.

        ``vjp`` returns one array (or None) per input.
        """
        self._records.append((out, inputs, vjp))
        self._output_ids.add(id(out))

    def __len__(self) -> int:
        return len(self._records)

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._output_ids


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every involved Tensor's grad slot.

    The seed gradient is 1.0; results are *added* into existing .grad so a
    caller can sum gradients over a batch of per-query tapes.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be scalar (1x1), got {loss.shape}")
    if not tape.produced(loss):
        raise ValueError("loss tensor was not produced on this tape")
    flowing: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    touched: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, vjp in reversed(tape._records):
        grad_out = flowing.get(id(out))
        if grad_out is None:
            continue
        input_grads = vjp(grad_out)
        for tensor, grad in zip(inputs, input_grads):
            if grad is None:
                continue
            key = id(tensor)
            if key in flowing:
                flowing[key] = flowing[key] + grad
            else:
                flowing[key] = grad
                touched[key] = tensor
    for key, tensor in touched.items():
        tensor.add_grad(flowing[key])


# ---------------------------------------------------------------------------
# primitives


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape} do not match")
    out = Tensor(a.data @ b.data)
    if tape is not None:
        a_data, b_data = a.data, b.data
        tape.record(out, (a, b), lambda g: (g @ b_data.T, a_data.T @ g))
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise sum; ``b`` may also be a broadcastable row (1 x n) or
    column (m x 1) vector."""
    if a.shape == b.shape:
        mode = "full"
    elif b.shape == (1, a.shape[1]):
        mode = "row"
    elif b.shape == (a.shape[0], 1):
        mode = "col"
    else:
        raise ShapeError(f"add: cannot broadcast {b.shape} onto {a.shape}")
    out = Tensor(a.data + b.data)
    if tape is not None:
        def vjp(g, mode=mode):
            if mode == "full":
                return g, g
            if mode == "row":
                return g, g.sum(axis=0, keepdims=True)
            return g, g.sum(axis=1, keepdims=True)
        tape.record(out, (a, b), vjp)
    return out


def hadamard(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_same_shape(a, b, "hadamard")
    out = Tensor(a.data * b.data)
    if tape is not None:
        a_data, b_data = a.data, b.data
        tape.record(out, (a, b), lambda g: (g * b_data, g * a_data))
    return out


def concat(parts: list[Tensor], axis: int, tape: Tape | None = None) -> Tensor:
    if not parts:
        raise ShapeError("concat: no parts")
    if axis not in (0, 1):
        raise ShapeError(f"concat: axis must be 0 or 1, got {axis}")
    fixed = 1 - axis
    first = parts[0].shape[fixed]
    for p in parts[1:]:
        if p.shape[fixed] != first:
            raise ShapeError(
                f"concat: mismatched shapes {[p.shape for p in parts]} along axis {axis}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    if tape is not None:
        sizes = [p.shape[axis] for p in parts]
        def vjp(g):
            grads, offset = [], 0
            for size in sizes:
                grads.append(g[offset : offset + size] if axis == 0 else g[:, offset : offset + size])
                offset += size
            return tuple(grads)
        tape.record(out, tuple(parts), vjp)
    return out


def slice_(t: Tensor, rows: tuple[int, int], cols: tuple[int, int], tape: Tape | None = None) -> Tensor:
    r0, r1 = rows
    c0, c1 = cols
    m, n = t.shape
    if not (0 <= r0 < r1 <= m and 0 <= c0 < c1 <= n):
        raise ShapeError(f"slice: window rows={rows} cols={cols} outside shape {t.shape}")
    out = Tensor(t.data[r0:r1, c0:c1].copy())
    if tape is not None:
        def vjp(g):
            full = np.zeros((m, n))
            full[r0:r1, c0:c1] = g
            return (full,)
        tape.record(out, (t,), vjp)
    return out


def transpose(t: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(t.data.T.copy())
    if tape is not None:
        tape.record(out, (t,), lambda g: (g.T,))
    return out


def sigmoid(t: Tensor, tape: Tape | None = None) -> Tensor:
    # stable both tails
    x = t.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(out_data)
    if tape is not None:
        tape.record(out, (t,), lambda g: (g * out_data * (1.0 - out_data),))
    return out


def tanh(t: Tensor, tape: Tape | None = None) -> Tensor:
    out_data = np.tanh(t.data)
    out = Tensor(out_data)
    if tape is not None:
        tape.record(out, (t,), lambda g: (g * (1.0 - out_data * out_data),))
    return out


def exp(t: Tensor, tape: Tape | None = None) -> Tensor:
    out_data = np.exp(t.data)
    out = Tensor(out_data)
    if tape is not None:
        tape.record(out, (t,), lambda g: (g * out_data,))
    return out


def log(t: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.log(t.data))
    if tape is not None:
        t_data = t.data
        tape.record(out, (t,), lambda g: (g / t_data,))
    return out


def logsumexp_rows(t: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise log-sum-exp with the max-shift trick, (m x n) -> (m x 1)."""
    x = t.data
    row_max = x.max(axis=1, keepdims=True)
    shifted = np.exp(x - row_max)
    sums = shifted.sum(axis=1, keepdims=True)
    out = Tensor(row_max + np.log(sums))
    if tape is not None:
        softmax = shifted / sums
        tape.record(out, (t,), lambda g: (g * softmax,))
    return out


def scale(t: Tensor, factor: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(t.data * factor)
    if tape is not None:
        tape.record(out, (t,), lambda g: (g * factor,))
    return out


def dropout(t: Tensor, mask: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Apply a precomputed (inverted-scale) dropout mask elementwise."""
    if mask.shape != t.data.shape:
        raise ShapeError(f"dropout: mask shape {mask.shape} != value shape {t.shape}")
    out = Tensor(t.data * mask)
    if tape is not None:
        tape.record(out, (t,), lambda g: (g * mask,))
    return out


def sum_all(t: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.array([[t.data.sum()]]))
    if tape is not None:
        shape = t.data.shape
        tape.record(out, (t,), lambda g: (np.full(shape, g[0, 0]),))
    return out


# ---------------------------------------------------------------------------
# finite-difference verification


def finite_diff_check(
    make_loss,
    params: list[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max deviation of analytic gradients from central finite differences.

    ``make_loss`` rebuilds the computation and returns ``(loss, tape)``;
    it must be deterministic (dropout disabled).  Errors are normalized by
    max(|analytic|, |numeric|, 1) so near-zero gradients do not blow up
    the ratio.  For large parameter sets a random coordinate subset of
    size ``max_coords`` is checked.
    """
    for p in params:
        p.zero_grad()
    loss, tape = make_loss()
    if not np.isfinite(loss.item()):
        raise ValueError(f"non-finite loss {loss.item()}")
    backward(tape, loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros(p.shape) for p in params]

    coords = [
        (pi, i, j)
        for pi, p in enumerate(params)
        for i in range(p.shape[0])
        for j in range(p.shape[1])
    ]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picks]

    worst = 0.0
    for pi, i, j in coords:
        p = params[pi]
        saved = p.data[i, j]
        p.data[i, j] = saved + h
        f_plus = make_loss()[0].item()
        p.data[i, j] = saved - h
        f_minus = make_loss()[0].item()
        p.data[i, j] = saved
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError("non-finite loss during finite differencing")
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic[pi][i, j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
        worst = max(worst, err)
    return worst
