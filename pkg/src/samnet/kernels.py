"""Dense numeric kernels with a minimal reverse-mode tape.

Every kernel consumes and produces :class:`Tensor` objects wrapping
row-major numpy arrays (float64 in tests and training; float32 is allowed
for benchmark-only runs). Forward values are computed with a fixed
summation order, so identical inputs give bitwise-identical outputs. While
a :class:`Tape` is active, each kernel records a closure that propagates
adjoints to its inputs; without a tape, kernels are plain (instrumented)
numpy computations, which is what the no-grad scoring and benchmark paths
use.

Kernels are pure and safe to call concurrently on disjoint data. A Tape is
single-owner and single-threaded.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, TapeError
from .instrument import current_meter

_TLS = threading.local()


def current_tape() -> "Tape | None":
    return getattr(_TLS, "tape", None)


class Tensor:
    """A numpy array plus the bookkeeping for reverse-mode differentiation.

    ``grad`` is lazily allocated; for parameters it doubles as the
    per-step gradient accumulator (zeroed by clearing it between steps).
    """

    __slots__ = ("data", "grad", "grad_owned", "requires", "parents", "vjp", "op", "name")

    def __init__(self, data: np.ndarray, requires: bool = False, name: str | None = None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.grad_owned = False
        self.requires = requires
        self.parents: tuple = ()
        self.vjp: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def constant(data, dtype=np.float64) -> Tensor:
    """A leaf tensor that never receives gradients."""
    return Tensor(np.asarray(data, dtype=dtype), requires=False)


def parameter(data, name: str, dtype=np.float64) -> Tensor:
    """A learnable leaf tensor; gradients accumulate on ``grad``."""
    return Tensor(np.asarray(data, dtype=dtype), requires=True, name=name)


class Tape:
    """Ordered record of kernel applications for one forward pass.

    The reverse pass visits records in exact reverse of forward order,
    which is a valid reverse topological order because the graph is built
    by evaluation.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._prev = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_TLS, "tape", None)
        _TLS.tape = self
        return self

    def __exit__(self, *exc) -> bool:
        _TLS.tape = self._prev
        return False


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(tensor) to every tensor recorded on the tape.

    Gradients land on the ``grad`` attribute of each requiring tensor;
    parameter accumulators must be cleared by the caller between steps.
    """
    if not tape.nodes:
        raise TapeError("cannot run a reverse pass over an empty tape")
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(tape.nodes):
        if node.grad is None or node.vjp is None:
            continue
        node.vjp(node.grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    # First accumulation aliases g (vjp outputs are never mutated later);
    # a second accumulation materializes an owned array before adding.
    if not t.requires:
        return
    if t.grad is None:
        t.grad = g
        t.grad_owned = False
    elif t.grad_owned:
        t.grad += g
    else:
        t.grad = t.grad + g
        t.grad_owned = True


def _make(data: np.ndarray, op: str, parents: tuple, vjp, flops: int) -> Tensor:
    meter = current_meter()
    if meter is not None:
        meter.add_flops(flops)
        meter.alloc(data.nbytes)
    requires = any(p.requires for p in parents)
    out = Tensor(data, requires=requires)
    out.op = op
    tape = current_tape()
    if requires and tape is not None:
        out.parents = parents
        out.vjp = vjp
        tape.nodes.append(out)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _rows(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


# ---------------------------------------------------------------------------
# Element-wise kernels
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out_data = a.data + b.data

    def vjp(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out_data, "add", (a, b), vjp, out_data.size)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out_data = a.data - b.data

    def vjp(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(out_data, "sub", (a, b), vjp, out_data.size)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out_data = a.data * b.data

    def vjp(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out_data, "mul", (a, b), vjp, out_data.size)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def vjp(g):
        _accum(a, g * c)

    return _make(out_data, "scale", (a,), vjp, out_data.size)


def rsub_const(c: float, a: Tensor) -> Tensor:
    """c - a, used for the (1 - z) gate complement."""
    out_data = c - a.data

    def vjp(g):
        _accum(a, -g)

    return _make(out_data, "rsub_const", (a,), vjp, out_data.size)


def mul_arr(a: Tensor, arr: np.ndarray) -> Tensor:
    """Element-wise product with a constant array (e.g. a padding mask)."""
    if a.data.shape != arr.shape:
        raise ShapeError(f"mul_arr: shape mismatch {a.data.shape} vs {arr.shape}")
    out_data = a.data * arr

    def vjp(g):
        _accum(a, g * arr)

    return _make(out_data, "mul_arr", (a,), vjp, out_data.size)


def add_bcast(a: Tensor, b: Tensor) -> Tensor:
    """a + b where b's shape equals the trailing dims of a (bias add)."""
    bs = b.data.shape
    if a.data.shape[a.data.ndim - b.data.ndim:] != bs:
        raise ShapeError(f"add_bcast: {bs} does not broadcast over trailing dims of {a.data.shape}")
    out_data = a.data + b.data
    lead = tuple(range(a.data.ndim - b.data.ndim))

    def vjp(g):
        _accum(a, g)
        _accum(b, g.sum(axis=lead) if lead else g)

    return _make(out_data, "add_bcast", (a, b), vjp, out_data.size)


def sigmoid(a: Tensor) -> Tensor:
    # exp may overflow to inf for very negative inputs; 1/(1+inf) is the
    # correct 0.0, so the warning is suppressed rather than branched away.
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        _accum(a, g * s * (1.0 - s))

    return _make(s, "sigmoid", (a,), vjp, 4 * a.data.size)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def vjp(g):
        _accum(a, g * (1.0 - t * t))

    return _make(t, "tanh", (a,), vjp, 6 * a.data.size)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def vjp(g):
        _accum(a, g * (a.data > 0))

    return _make(out_data, "relu", (a,), vjp, a.data.size)


# ---------------------------------------------------------------------------
# Query-broadcast kernels (a query vector against every sequence row)
# ---------------------------------------------------------------------------


def _query_view(e: Tensor, q: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if e.data.shape == q.data.shape:
        return q.data, False
    if q.data.ndim + 1 == e.data.ndim and e.data.shape[:-2] + e.data.shape[-1:] == q.data.shape:
        return np.expand_dims(q.data, -2), True
    raise ShapeError(f"{op}: query {q.data.shape} incompatible with rows {e.data.shape}")


def sub_q(e: Tensor, q: Tensor) -> Tensor:
    """Row-wise e - q; q broadcasts over the second-to-last axis."""
    qd, expanded = _query_view(e, q, "sub_q")
    out_data = e.data - qd

    def vjp(g):
        _accum(e, g)
        _accum(q, -g.sum(axis=-2) if expanded else -g)

    return _make(out_data, "sub_q", (e, q), vjp, out_data.size)


def mul_q(e: Tensor, q: Tensor) -> Tensor:
    """Row-wise e * q; q broadcasts over the second-to-last axis."""
    qd, expanded = _query_view(e, q, "mul_q")
    out_data = e.data * qd

    def vjp(g):
        _accum(e, g * qd)
        _accum(q, (g * e.data).sum(axis=-2) if expanded else g * e.data)

    return _make(out_data, "mul_q", (e, q), vjp, out_data.size)


def rowdot_q(e: Tensor, q: Tensor) -> Tensor:
    """Dot product of each sequence row with a query: (..., L, d)·(..., d) -> (..., L)."""
    if e.data.shape[:-2] + e.data.shape[-1:] != q.data.shape:
        raise ShapeError(f"rowdot_q: query {q.data.shape} incompatible with rows {e.data.shape}")
    out_data = np.einsum("...ld,...d->...l", e.data, q.data)

    def vjp(g):
        _accum(e, g[..., None] * np.expand_dims(q.data, -2))
        _accum(q, np.einsum("...l,...ld->...d", g, e.data))

    return _make(out_data, "rowdot_q", (e, q), vjp, 2 * e.data.size)


# ---------------------------------------------------------------------------
# Contractions
# ---------------------------------------------------------------------------


def matvec(m: Tensor, v: Tensor) -> Tensor:
    """Matrix-vector product (r, c) @ (c,) -> (r,)."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {m.data.shape} and {v.data.shape}")
    out_data = m.data @ v.data

    def vjp(g):
        _accum(m, np.outer(g, v.data))
        _accum(v, m.data.T @ g)

    return _make(out_data, "matvec", (m, v), vjp, 2 * m.data.size)


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """(..., k) @ (k, q) -> (..., q); weights stored input-major."""
    if w.data.ndim != 2 or a.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {w.data.shape}")
    a2 = _rows(a.data)
    out_data = (a2 @ w.data).reshape(a.data.shape[:-1] + (w.data.shape[1],))

    def vjp(g):
        g2 = _rows(g)
        _accum(w, a2.T @ g2)
        _accum(a, (g2 @ w.data.T).reshape(a.data.shape))

    return _make(out_data, "matmul", (a, w), vjp, 2 * a2.shape[0] * w.data.size)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """(..., i) @ (o, i)^T -> (..., o); weights stored output-major."""
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.data.shape} and {w.data.shape}")
    x2 = _rows(x.data)
    out_data = (x2 @ w.data.T).reshape(x.data.shape[:-1] + (w.data.shape[0],))

    def vjp(g):
        g2 = _rows(g)
        _accum(w, g2.T @ x2)
        _accum(x, (g2 @ w.data).reshape(x.data.shape))

    return _make(out_data, "linear", (x, w), vjp, 2 * x2.shape[0] * w.data.size)


def matvec_last(a: Tensor, w: Tensor) -> Tensor:
    """Contract the last axis with a vector: (..., k) @ (k,) -> (...)."""
    if w.data.ndim != 1 or a.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"matvec_last: incompatible shapes {a.data.shape} and {w.data.shape}")
    a2 = _rows(a.data)
    out_data = (a2 @ w.data).reshape(a.data.shape[:-1])

    def vjp(g):
        gf = g.reshape(-1)
        _accum(w, a2.T @ gf)
        _accum(a, np.outer(gf, w.data).reshape(a.data.shape))

    return _make(out_data, "matvec_last", (a, w), vjp, 2 * a2.size)


def pool_weighted(e: Tensor, w: Tensor) -> Tensor:
    """Weighted sum of sequence rows: (..., L, d), (..., L) -> (..., d)."""
    if e.data.shape[:-1] != w.data.shape:
        raise ShapeError(f"pool_weighted: weights {w.data.shape} do not match rows {e.data.shape}")
    out_data = np.einsum("...ld,...l->...d", e.data, w.data)

    def vjp(g):
        _accum(e, np.einsum("...l,...d->...ld", w.data, g))
        _accum(w, np.einsum("...ld,...d->...l", e.data, g))

    return _make(out_data, "pool_weighted", (e, w), vjp, 2 * e.data.size)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def vjp(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _make(out_data, "sum_all", (a,), vjp, a.data.size)


# ---------------------------------------------------------------------------
# Structural kernels
# ---------------------------------------------------------------------------


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last: leading dims differ, {parts[0].data.shape} vs {p.data.shape}"
            )
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def vjp(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[..., off:off + w])
            off += w

    return _make(out_data, "concat_last", tuple(parts), vjp, 0)


def gather(table: Tensor, idx: np.ndarray, what: str = "id") -> Tensor:
    """Row lookup: (R, d) indexed by an integer array -> (*idx.shape, d)."""
    idx = np.asarray(idx)
    if table.data.ndim != 2:
        raise ShapeError(f"gather: table must be 2-D, got {table.data.shape}")
    rows = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        bad = int(idx.max() if idx.max() >= rows else idx.min())
        raise ShapeError(f"gather: {what} {bad} out of range for table with {rows} rows")
    out_data = table.data[idx]

    def vjp(g):
        if not table.requires:
            return
        if table.grad is None or not table.grad_owned:
            base = table.grad
            table.grad = np.zeros_like(table.data) if base is None else base.copy()
            table.grad_owned = True
        flat_idx = idx.reshape(-1)
        g2 = np.ascontiguousarray(g.reshape(-1, table.data.shape[1]))
        # bincount per column is a deterministic scatter-add, much faster
        # than np.add.at for repeated ids.
        for c in range(g2.shape[1]):
            table.grad[:, c] += np.bincount(flat_idx, weights=g2[:, c],
                                            minlength=table.data.shape[0])

    return _make(out_data, "gather", (table,), vjp, 0)


def select_rows(gate: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Per-row blend: rows where gate is 1 come from a, otherwise from b."""
    _check_same_shape("select_rows", a, b)
    if gate.shape != a.data.shape[:1]:
        raise ShapeError(f"select_rows: gate {gate.shape} does not match rows {a.data.shape}")
    g1 = gate.reshape((-1,) + (1,) * (a.data.ndim - 1))
    out_data = np.where(g1 > 0, a.data, b.data)

    def vjp(g):
        _accum(a, g * (g1 > 0))
        _accum(b, g * (g1 <= 0))

    return _make(out_data, "select_rows", (a, b), vjp, 0)


# ---------------------------------------------------------------------------
# Fused recurrent cell
# ---------------------------------------------------------------------------


def gru_cell(x: Tensor, h: Tensor,
             w_r: Tensor, w_z: Tensor, w_h: Tensor,
             u_r: Tensor, u_z: Tensor, u_h: Tensor,
             b_r: Tensor, b_z: Tensor, b_h: Tensor) -> Tensor:
    """One GRU update as a single kernel (reset-before-candidate form):

        r = sigmoid(x Wr^T + h Ur^T + br)
        z = sigmoid(x Wz^T + h Uz^T + bz)
        c = tanh(x Wh^T + (r * h) Uh^T + bh)
        h' = (1 - z) * h + z * c

    Fusing the ~20 constituent kernels into one keeps small-state updates
    from being call-overhead bound.
    """
    xs, hs = x.data, h.data
    x2 = xs.reshape(-1, xs.shape[-1])
    h2 = hs.reshape(-1, hs.shape[-1])
    with np.errstate(over="ignore"):
        r = 1.0 / (1.0 + np.exp(-(x2 @ w_r.data.T + h2 @ u_r.data.T + b_r.data)))
        z = 1.0 / (1.0 + np.exp(-(x2 @ w_z.data.T + h2 @ u_z.data.T + b_z.data)))
    rh = r * h2
    c = np.tanh(x2 @ w_h.data.T + rh @ u_h.data.T + b_h.data)
    out2 = (1.0 - z) * h2 + z * c
    rows, hid = h2.shape
    flops = 6 * rows * (w_r.data.size + u_r.data.size) + 14 * rows * hid

    def vjp(g):
        g2 = g.reshape(-1, hid)
        dz = g2 * (c - h2) * z * (1.0 - z)
        dc = g2 * z * (1.0 - c * c)
        drh = dc @ u_h.data
        dr = drh * h2 * r * (1.0 - r)
        dh2 = g2 * (1.0 - z) + drh * r + dr @ u_r.data + dz @ u_z.data
        dx2 = dc @ w_h.data + dr @ w_r.data + dz @ w_z.data
        _accum(w_r, dr.T @ x2)
        _accum(w_z, dz.T @ x2)
        _accum(w_h, dc.T @ x2)
        _accum(u_r, dr.T @ h2)
        _accum(u_z, dz.T @ h2)
        _accum(u_h, dc.T @ rh)
        _accum(b_r, dr.sum(axis=0))
        _accum(b_z, dz.sum(axis=0))
        _accum(b_h, dc.sum(axis=0))
        _accum(x, dx2.reshape(xs.shape))
        _accum(h, dh2.reshape(hs.shape))

    parents = (x, h, w_r, w_z, w_h, u_r, u_z, u_h, b_r, b_z, b_h)
    return _make(out2.reshape(hs.shape), "gru_cell", parents, vjp, flops)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

CLAMP_EPS = 1e-12


def bce_mean(y_hat: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross entropy; predictions clamped to [eps, 1-eps]."""
    if y_hat.data.shape != y.shape:
        raise ShapeError(f"bce_mean: predictions {y_hat.data.shape} vs labels {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_mean: labels must be 0 or 1")
    p = np.clip(y_hat.data, CLAMP_EPS, 1.0 - CLAMP_EPS)
    n = max(p.size, 1)
    out_data = np.asarray(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum() / n)

    def vjp(g):
        inside = (y_hat.data > CLAMP_EPS) & (y_hat.data < 1.0 - CLAMP_EPS)
        _accum(y_hat, float(g) * inside * (p - y) / (p * (1.0 - p)) / n)

    return _make(out_data, "bce_mean", (y_hat,), vjp, 10 * p.size)
