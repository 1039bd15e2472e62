"""Dense-tensor engine with reverse-mode automatic differentiation.

Covers exactly what a plain convolutional classifier needs: 3x3
same-padding convolution, 2x2 max pooling, affine layers, inverted
dropout, softmax cross-entropy, and a few elementwise helpers. Forward
operations are recorded on an explicit :class:`Tape`; calling
``tape.backward(loss)`` replays the records in reverse and accumulates
gradients additively into ``Tensor.grad``.

Two kernel families exist for conv2d and linear, selected by dtype:

* float32 (the training path): im2col plus BLAS matmul.
* float64 (the verification path): fixed-order accumulation whose
  summation order matches a naive nested-loop evaluation bit for bit,
  and whose per-sample results are independent of the rest of the batch.

All other operations are elementwise or per-sample and therefore exact
and batch-independent in both dtypes.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

__all__ = [
    "DEFAULT_DTYPE",
    "ShapeError",
    "Tensor",
    "Tape",
    "record_op",
    "add",
    "mul",
    "scale",
    "tsum",
    "reshape",
    "conv2d",
    "maxpool2",
    "linear",
    "dropout",
    "softmax_cross_entropy",
    "gradcheck",
    "has_nonfinite",
]


class ShapeError(ValueError):
    """An operation received tensors of incompatible shape."""


class Tensor:
    """Dense N-dimensional float array with optional gradient storage.

    ``data`` is always a float32 or float64 numpy array; anything else is
    cast to the package default (float32). ``grad`` starts as None and is
    allocated by the first backward pass that touches this tensor.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return self.data.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


class Tape:
    """Ordered record of forward operations for one backward pass.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are recorded. Backward traversal visits the
    records in exact reverse order of recording, and a tensor consumed k
    times receives the sum of its k contributions.

    The active-tape stack is thread-local: recording and backward are
    single-threaded per tape, while tensors themselves may be handed
    freely between threads.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]):
        self._records.append((output, tuple(inputs), backward_fn))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/dt into ``t.grad`` for tensors on this tape.

        ``loss`` must be a scalar. Tensors recorded on the tape that do
        not influence the loss end up with all-zero gradients.
        """
        if loss.data.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        involved: set[Tensor] = set()
        for out, inputs, _ in self._records:
            if out.requires_grad:
                involved.add(out)
            involved.update(t for t in inputs if t.requires_grad)
        involved.add(loss)
        for t in involved:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
        loss.grad = loss.grad + np.ones_like(loss.data)
        for out, _inputs, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)


def record_op(output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Attach ``output`` to the innermost active tape, if gradients are wanted."""
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        stack[-1].record(output, inputs, backward_fn)
    return output


def _check(cond: bool, msg: str):
    if not cond:
        raise ShapeError(msg)


def _same_dtype(*tensors: Tensor):
    dtypes = {t.data.dtype for t in tensors}
    _check(len(dtypes) == 1, f"operands must share one dtype, got {sorted(str(d) for d in dtypes)}")


def has_nonfinite(arrays: Iterable[np.ndarray]) -> bool:
    """True if any array contains NaN or Inf. Detection only, never repair."""
    return any(not np.isfinite(a).all() for a in arrays)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add needs matching shapes, got {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward_fn(g: np.ndarray):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g

    return record_op(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"mul needs matching shapes, got {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def backward_fn(g: np.ndarray):
        if a.requires_grad:
            a.grad += g * b.data
        if b.requires_grad:
            b.grad += g * a.data

    return record_op(out, (a, b), backward_fn)


def scale(a: Tensor, k: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(k))

    def backward_fn(g: np.ndarray):
        if a.requires_grad:
            a.grad += g * a.data.dtype.type(k)

    return record_op(out, (a,), backward_fn)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(np.sum(a.data))

    def backward_fn(g: np.ndarray):
        if a.requires_grad:
            a.grad += g

    return record_op(out, (a,), backward_fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def backward_fn(g: np.ndarray):
        if a.requires_grad:
            a.grad += g.reshape(a.shape)

    return record_op(out, (a,), backward_fn)


# ---------------------------------------------------------------------------
# conv2d: 3x3, stride 1, zero padding 1
# ---------------------------------------------------------------------------


def _pad1(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    return xp


def _im2col(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """(N, C, H+2, W+2) padded input -> (N*H*W, C*9) patch matrix.

    Column order is (channel, kernel row, kernel col) row-major, matching
    ``weight.reshape(c_out, -1)``.
    """
    n, c = xp.shape[:2]
    cols = np.empty((n, c, 3, 3, h, w), dtype=xp.dtype)
    for kh in range(3):
        for kw in range(3):
            cols[:, :, kh, kw] = xp[:, :, kh : kh + h, kw : kw + w]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * h * w, c * 9)


def _conv_forward_exact(xp: np.ndarray, w: np.ndarray, b: np.ndarray, h: int, wd: int) -> np.ndarray:
    # One fused multiply-accumulate per kernel tap, in (c_in, kh, kw) order.
    # Summation order is therefore identical to a scalar nested loop that
    # starts from the bias, which makes the result bitwise comparable to a
    # brute-force oracle and independent of batch composition.
    n = xp.shape[0]
    c_out = w.shape[0]
    out = np.broadcast_to(b.reshape(1, c_out, 1, 1), (n, c_out, h, wd)).astype(xp.dtype).copy()
    for ci in range(w.shape[1]):
        for kh in range(3):
            for kw in range(3):
                out += w[:, ci, kh, kw].reshape(1, c_out, 1, 1) * xp[:, ci : ci + 1, kh : kh + h, kw : kw + wd]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation with stride 1 and zero padding 1.

    Shapes: x [N, C_in, H, W], weight [C_out, C_in, 3, 3], bias [C_out];
    output [N, C_out, H, W]. Backward fills gradients for all three
    inputs.
    """
    _check(x.ndim == 4, f"conv2d input must be 4-d [N,C,H,W], got shape {x.shape}")
    n, c_in, h, w = x.shape
    _check(
        weight.ndim == 4 and weight.shape[2:] == (3, 3),
        f"conv2d weight must be [C_out,C_in,3,3], got shape {weight.shape}",
    )
    _check(
        weight.shape[1] == c_in,
        f"conv2d channel mismatch: input has C_in={c_in}, weight expects C_in={weight.shape[1]}",
    )
    c_out = weight.shape[0]
    _check(bias.shape == (c_out,), f"conv2d bias must have shape ({c_out},), got {bias.shape}")
    _check(h >= 1 and w >= 1, f"conv2d spatial dims must be >= 1, got {h}x{w}")
    _same_dtype(x, weight, bias)

    xp = _pad1(x.data)
    if x.data.dtype == np.float64:
        out_data = _conv_forward_exact(xp, weight.data, bias.data, h, w)
    else:
        cols = _im2col(xp, h, w)
        out_data = cols @ weight.data.reshape(c_out, c_in * 9).T + bias.data
        out_data = out_data.reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
    out = Tensor(out_data)

    def backward_fn(g: np.ndarray):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        if weight.requires_grad or x.requires_grad:
            cols_b = _im2col(xp, h, w)
        if weight.requires_grad:
            weight.grad += (gmat.T @ cols_b).reshape(c_out, c_in, 3, 3)
        if bias.requires_grad:
            bias.grad += g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = gmat @ weight.data.reshape(c_out, c_in * 9)
            gc = gcols.reshape(n, h, w, c_in, 3, 3).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for kh in range(3):
                for kw in range(3):
                    gxp[:, :, kh : kh + h, kw : kw + w] += gc[:, :, kh, kw]
            x.grad += gxp[:, :, 1 : h + 1, 1 : w + 1]

    return record_op(out, (x, weight, bias), backward_fn)


# ---------------------------------------------------------------------------
# max pooling 2x2, stride 2
# ---------------------------------------------------------------------------


def maxpool2(x: Tensor) -> Tensor:
    """2x2 window maximum with stride 2.

    Backward routes the incoming gradient to the window argmax; ties go
    to the first element in row-major scan order of the window.
    """
    _check(x.ndim == 4, f"maxpool2 input must be 4-d [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    _check(h % 2 == 0 and w % 2 == 0, f"maxpool2 needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = np.argmax(windows, axis=-1)
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])

    def backward_fn(g: np.ndarray):
        if not x.requires_grad:
            return
        gwin = np.zeros_like(windows)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        x.grad += gwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)

    return record_op(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# affine layer
# ---------------------------------------------------------------------------


def _linear_forward_exact(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Accumulate one input feature at a time, starting from the bias, so the
    # per-element summation order matches a scalar nested loop exactly.
    n = x.shape[0]
    f_out = w.shape[0]
    out = np.broadcast_to(b.reshape(1, f_out), (n, f_out)).astype(x.dtype).copy()
    for k in range(x.shape[1]):
        out += x[:, k].reshape(n, 1) * w[:, k].reshape(1, f_out)
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x [N, F_in] -> x @ weight.T + bias, weight [F_out, F_in]."""
    _check(x.ndim == 2, f"linear input must be 2-d [N,F_in], got shape {x.shape}")
    n, f_in = x.shape
    _check(weight.ndim == 2, f"linear weight must be 2-d [F_out,F_in], got shape {weight.shape}")
    _check(
        weight.shape[1] == f_in,
        f"linear feature mismatch: input has F_in={f_in}, weight expects F_in={weight.shape[1]}",
    )
    f_out = weight.shape[0]
    _check(bias.shape == (f_out,), f"linear bias must have shape ({f_out},), got {bias.shape}")
    _same_dtype(x, weight, bias)

    if x.data.dtype == np.float64:
        out_data = _linear_forward_exact(x.data, weight.data, bias.data)
    else:
        out_data = x.data @ weight.data.T + bias.data
    out = Tensor(out_data)

    def backward_fn(g: np.ndarray):
        if weight.requires_grad:
            weight.grad += g.T @ x.data
        if bias.requires_grad:
            bias.grad += g.sum(axis=0)
        if x.requires_grad:
            x.grad += g @ weight.data

    return record_op(out, (x, weight, bias), backward_fn)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero each element with probability p, scale
    survivors by 1/(1-p). Identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        out = Tensor(x.data.copy())

        def backward_identity(g: np.ndarray):
            if x.requires_grad:
                x.grad += g

        return record_op(out, (x,), backward_identity)

    if rng is None:
        raise ValueError("dropout in training mode needs a seeded rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.data.dtype) * x.data.dtype.type(1.0 / (1.0 - p))
    out = Tensor(x.data * mask)

    def backward_fn(g: np.ndarray):
        if x.requires_grad:
            x.grad += g * mask

    return record_op(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Computed with max-subtraction for stability. Backward places
    (softmax - onehot) / N into the logits gradient.
    """
    _check(logits.ndim == 2, f"logits must be 2-d [N,K], got shape {logits.shape}")
    n, k = logits.shape
    lab = np.asarray(labels)
    _check(lab.shape == (n,), f"labels must have shape ({n},), got {lab.shape}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {lab.dtype}")
    bad = (lab < 0) | (lab >= k)
    if bad.any():
        where = int(np.flatnonzero(bad)[0])
        raise ValueError(f"label out of range [0,{k}): labels[{where}] = {int(lab[where])}")

    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    sez = ez.sum(axis=1, keepdims=True)
    nll = np.log(sez)[:, 0] - shifted[np.arange(n), lab]
    out = Tensor(np.asarray(nll.mean(), dtype=z.dtype))

    def backward_fn(g: np.ndarray):
        if not logits.requires_grad:
            return
        p = ez / sez
        p[np.arange(n), lab] -= 1.0
        logits.grad += g * p / z.dtype.type(n)

    return record_op(out, (logits,), backward_fn)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    sample_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the given tensors to a scalar Tensor and is rebuilt on
    every call; use float64 inputs for meaningful tolerances. The error
    for one coordinate is |analytic - numeric| / max(1, |analytic|,
    |numeric|). ``sample_per_tensor`` caps how many coordinates of each
    input get probed (None probes all of them).
    """
    out1 = fn(*inputs)
    out2 = fn(*inputs)
    if not np.array_equal(out1.data, out2.data):
        raise ValueError("gradcheck requires a deterministic function, got differing outputs for identical inputs")

    saved_flags = [t.requires_grad for t in inputs]
    saved_grads = [t.grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        with Tape() as tape:
            loss = fn(*inputs)
            tape.backward(loss)
        analytic = [
            np.array(t.grad, copy=True) if t.grad is not None else np.zeros_like(t.data) for t in inputs
        ]
    finally:
        for t, flag, grad in zip(inputs, saved_flags, saved_grads):
            t.requires_grad = flag
            t.grad = grad

    if rng is None:
        rng = np.random.default_rng(0)
    max_err = 0.0
    for t, an in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        if sample_per_tensor is not None and flat.size > sample_per_tensor:
            coords = np.sort(rng.choice(flat.size, size=sample_per_tensor, replace=False))
        else:
            coords = np.arange(flat.size)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(fn(*inputs).data)
            flat[c] = orig - h
            f_minus = float(fn(*inputs).data)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(an_flat[c])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
