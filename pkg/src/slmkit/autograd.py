"""Dense tensors with tape-based reverse-mode differentiation.

Deliberately small and CPU-only: enough 2-D tensor arithmetic for a toy
transformer, backed by numpy arrays (float64 by default, float32 available
for faster training). Operations record themselves onto the innermost
active :class:`Tape`; with no tape active they run forward-only, which is
the scoring path.

Typical use::

    with Tape() as tape:
        loss = cross_entropy(logits, targets)
    tape.backward(loss)     # populates .grad on every requires_grad Tensor
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from slmkit.errors import ContractError, DimensionError, FullyMaskedRowError

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    """The innermost active tape on this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array plus autograd bookkeeping.

    ``data`` is always a numpy array; ``grad`` stays None until a backward
    pass deposits one. Construction rejects non-finite values so NaN/Inf
    surface as errors instead of propagating silently.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        arr = np.asarray(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor holds non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal fast path for op outputs; skips the finiteness check
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive ops for one reverse-mode sweep.

    Nodes are appended in execution order, so inputs always precede the ops
    that consume them; ``backward`` replays them exactly once in reverse.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every tensor reachable from ``loss``."""
        if not isinstance(loss, Tensor) or loss.data.ndim != 0:
            raise ContractError("backward requires a scalar loss tensor")
        if loss.tape is not self:
            raise ContractError("loss was not produced on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, backfn in reversed(self.nodes):
            if out.grad is not None:
                backfn(out.grad)


def _needs_grad(*tensors: Tensor) -> bool:
    if active_tape() is None:
        return False
    return any(t.requires_grad for t in tensors)


def _record(out: Tensor, backfn: Callable[[np.ndarray], None]) -> Tensor:
    tape = active_tape()
    out.tape = tape
    tape.nodes.append((out, backfn))
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} x {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor._wrap(a.data @ b.data, _needs_grad(a, b))
    if not out.requires_grad:
        return out

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _record(out, backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.shape}")
    out = Tensor._wrap(a.data.T, _needs_grad(a))
    if not out.requires_grad:
        return out

    def backward(g):
        _accum(a, g.T)

    return _record(out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D ``b`` broadcast over the rows of 2-D ``a``."""
    bias_like = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias_like and a.data.shape != b.data.shape:
        raise DimensionError(f"add shapes disagree: {a.shape} + {b.shape}")
    out = Tensor._wrap(a.data + b.data, _needs_grad(a, b))
    if not out.requires_grad:
        return out

    def backward(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0) if bias_like else g)

    return _record(out, backward)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors (used to combine per-sequence losses)."""
    if not tensors:
        raise ContractError("add_n of an empty sequence")
    shape = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != shape:
            raise DimensionError("add_n shapes disagree")
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data
    out = Tensor._wrap(acc, _needs_grad(*tensors))
    if not out.requires_grad:
        return out

    def backward(g):
        for t in tensors:
            _accum(t, g)

    return _record(out, backward)


def mul_const(a: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or array; no gradient flows into ``c``."""
    c = np.asarray(c, dtype=a.data.dtype) if isinstance(c, np.ndarray) else c
    out = Tensor._wrap(a.data * c, _needs_grad(a))
    if not out.requires_grad:
        return out

    def backward(g):
        _accum(a, g * c)

    return _record(out, backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(a.data, 0.0), _needs_grad(a))
    if not out.requires_grad:
        return out
    pos = a.data > 0

    def backward(g):
        _accum(a, g * pos)

    return _record(out, backward)


def square(a: Tensor) -> Tensor:
    out = Tensor._wrap(a.data * a.data, _needs_grad(a))
    if not out.requires_grad:
        return out

    def backward(g):
        _accum(a, 2.0 * a.data * g)

    return _record(out, backward)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    out = Tensor._wrap(np.asarray(a.data.sum(), dtype=a.data.dtype), _needs_grad(a))
    if not out.requires_grad:
        return out

    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _record(out, backward)


def masked_softmax(scores: Tensor, allow: np.ndarray) -> Tensor:
    """Row-wise softmax restricted to the permitted entries of ``allow``.

    Disallowed entries come out exactly 0. Max-subtraction is done over the
    allowed entries only, so permitted probabilities are unaffected by the
    values parked at disallowed positions. A row with no allowed entry is
    rejected by name: that is how a degenerate query context surfaces.
    """
    squeeze = scores.data.ndim == 1
    sdata = scores.data[None, :] if squeeze else scores.data
    allow = np.asarray(allow, dtype=bool)
    amat = allow[None, :] if allow.ndim == 1 else allow
    if sdata.ndim != 2 or amat.shape != sdata.shape:
        raise DimensionError(f"masked_softmax shapes disagree: {scores.shape} vs {allow.shape}")
    row_ok = amat.any(axis=1)
    if not row_ok.all():
        row = int(np.argmin(row_ok))
        raise FullyMaskedRowError(f"softmax row {row} has no allowed entries")

    shifted = np.where(amat, sdata, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    if squeeze:
        probs = probs[0]
    out = Tensor._wrap(probs, _needs_grad(scores))
    if not out.requires_grad:
        return out

    def backward(g):
        p = probs[None, :] if squeeze else probs
        gg = g[None, :] if squeeze else g
        d = p * (gg - (gg * p).sum(axis=1, keepdims=True))
        _accum(scores, d[0] if squeeze else d)

    return _record(out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine.

    Epsilon 1e-5 sits inside the square root.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm needs a 2-D input, got {x.shape}")
    d = x.data.shape[1]
    if d < 2:
        raise DimensionError("layer_norm needs at least 2 features per row")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError("layer_norm gain/bias must be 1-D of width d")
    eps = 1e-5
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = Tensor._wrap(xhat * gain.data + bias.data, _needs_grad(x, gain, bias))
    if not out.requires_grad:
        return out

    def backward(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum(x, (dxhat - m1 - xhat * m2) * inv_std)

    return _record(out, backward)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Stable row-wise log-softmax of a plain array (scoring helper, no tape)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of ``targets`` under row-wise softmax of ``logits``.

    ``mean`` averages over rows (the per-position objective); ``sum`` is the
    building block for weighted batch means.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy needs 2-D logits, got {logits.shape}")
    idx = np.asarray(targets, dtype=np.int64)
    n, v = logits.data.shape
    if idx.ndim != 1 or idx.shape[0] != n:
        raise DimensionError("cross_entropy needs one target per logits row")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise IndexError(f"target index out of range for vocabulary of {v}")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"unknown reduction {reduction!r}")
    logp = log_softmax_rows(logits.data)
    rows = np.arange(n)
    total = -logp[rows, idx].sum()
    value = total / n if reduction == "mean" else total
    out = Tensor._wrap(np.asarray(value, dtype=logits.data.dtype), _needs_grad(logits))
    if not out.requires_grad:
        return out

    def backward(g):
        d = np.exp(logp)
        d[rows, idx] -= 1.0
        if reduction == "mean":
            d /= n
        _accum(logits, d * g)

    return _record(out, backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup into an embedding table; gradients scatter-add back."""
    return gather_rows(table, ids)


def gather_rows(x: Tensor, ids) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D tensor, got {x.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows needs a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(f"row index out of range for table of {x.data.shape[0]}")
    out = Tensor._wrap(x.data[idx], _needs_grad(x))
    if not out.requires_grad:
        return out

    def backward(g):
        d = np.zeros_like(x.data)
        np.add.at(d, idx, g)
        _accum(x, d)

    return _record(out, backward)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= lo < hi <= x.data.shape[1]):
        raise DimensionError(f"slice_cols [{lo}:{hi}] invalid for shape {x.shape}")
    out = Tensor._wrap(x.data[:, lo:hi], _needs_grad(x))
    if not out.requires_grad:
        return out

    def backward(g):
        d = np.zeros_like(x.data)
        d[:, lo:hi] = g
        _accum(x, d)

    return _record(out, backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise DimensionError(f"concat_rows widths disagree: {a.shape} vs {b.shape}")
    out = Tensor._wrap(np.concatenate([a.data, b.data], axis=0), _needs_grad(a, b))
    if not out.requires_grad:
        return out
    na = a.data.shape[0]

    def backward(g):
        if a.requires_grad:
            _accum(a, g[:na])
        if b.requires_grad:
            _accum(b, g[na:])

    return _record(out, backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols of an empty sequence")
    if len(parts) == 1:
        return parts[0]
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise DimensionError("concat_cols heights disagree")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=1), _needs_grad(*parts))
    if not out.requires_grad:
        return out
    splits = np.cumsum([p.data.shape[1] for p in parts])[:-1]

    def backward(g):
        for p, chunk in zip(parts, np.split(g, splits, axis=1)):
            _accum(p, chunk)

    return _record(out, backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or no generator is supplied."""
    if p <= 0.0 or rng is None:
        return x
    if p >= 1.0:
        raise ContractError("dropout rate must be < 1")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return mul_const(x, mask.astype(x.data.dtype))


def finite_diff_grad(f: Callable[[], float], params: Sequence[Tensor], h: float = 1e-5):
    """Central-difference gradient estimate of ``f`` for every coordinate.

    ``f`` takes no arguments and must read the current contents of
    ``params`` (it is re-evaluated with each coordinate nudged by +/- h).
    Returns one array per parameter, matching shapes.
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f())
            flat[i] = orig - h
            fm = float(f())
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(p.data.shape))
    return grads


def global_grad_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads))
