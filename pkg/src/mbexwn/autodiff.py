"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Operations are recorded on the active :class:`Tape` (a thread-local stack,
entered with ``with Tape(): ...``). Each record holds the input node ids, the
output node id and a VJP closure. ``Tape.backward`` walks the records in
reverse order.

Complex tensors follow the convention that the gradient of a real loss with
respect to ``z`` is stored as ``dL/dRe(z) + 1j * dL/dIm(z)``. Under that
convention the VJP of a holomorphic ``y = f(z)`` is ``conj(f'(z)) * g``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

_local = threading.local()

REAL_DTYPES = {"float64": np.float64, "float32": np.float32}
_COMPLEX_OF = {np.dtype(np.float64): np.complex128, np.dtype(np.float32): np.complex64}


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


def default_dtype() -> np.dtype:
    tape = current_tape()
    return tape.dtype if tape is not None else np.dtype(np.float64)


def _cast(arr: np.ndarray, real_dtype: np.dtype) -> np.ndarray:
    if np.iscomplexobj(arr):
        return arr.astype(_COMPLEX_OF[np.dtype(real_dtype)], copy=False)
    if arr.dtype.kind in "fiub":
        return arr.astype(real_dtype, copy=False)
    return arr


class Tensor:
    """Immutable dense array that may take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "_tape", "_node")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, copy=True)
        arr = _cast(arr, np.dtype(dtype) if dtype is not None else default_dtype())
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._tape = None
        self._node = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t._tape = None
        t._node = None
        return t

    @property
    def node_id(self) -> int | None:
        return self._node

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple[int | None, ...]
    output: int
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable operations.

    The numeric mode is fixed at construction: ``"float64"`` for gradient
    checking, ``"float32"`` for runtime.
    """

    def __init__(self, dtype: str = "float64"):
        if dtype not in REAL_DTYPES:
            raise ValueError(f"unsupported tape dtype {dtype!r}")
        self.dtype = np.dtype(REAL_DTYPES[dtype])
        self.records: list[Record] = []
        self._leaves: dict[int, tuple[int, Tensor]] = {}
        self._shapes: dict[int, tuple] = {}
        self._next = 0

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def _new_id(self, shape) -> int:
        nid = self._next
        self._next += 1
        self._shapes[nid] = shape
        return nid

    def watch(self, t: Tensor) -> int:
        """Register ``t`` as a differentiation leaf and return its node id."""
        if t._tape is self:
            return t._node
        if not t.requires_grad:
            raise ValueError("only tensors with requires_grad=True can be watched")
        key = id(t)
        if key not in self._leaves:
            self._leaves[key] = (self._new_id(t.shape), t)
        return self._leaves[key][0]

    def node_of(self, t: Tensor) -> int | None:
        if t._tape is self:
            return t._node
        entry = self._leaves.get(id(t))
        return entry[0] if entry is not None else None

    def leaves(self) -> list[Tensor]:
        return [t for _, t in self._leaves.values()]

    def record(self, op: str, out: np.ndarray, inputs: Sequence, vjp) -> Tensor:
        ids = []
        for x in inputs:
            if isinstance(x, Tensor) and x.requires_grad:
                ids.append(self.watch(x))
            else:
                ids.append(None)
        out = _cast(np.asarray(out), self.dtype)
        if all(i is None for i in ids):
            return Tensor._wrap(out, False)
        t = Tensor._wrap(out, True)
        t._tape = self
        t._node = self._new_id(out.shape)
        self.records.append(Record(op, tuple(ids), t._node, vjp))
        return t

    def backward(self, output: Tensor, seed=None) -> dict[int, np.ndarray]:
        """Gradient of ``<seed, output>`` w.r.t. every leaf watched by this tape."""
        if output._tape is not self and self.node_of(output) is None:
            raise ValueError("output was not produced on this tape")
        seed = np.ones(output.shape) if seed is None else np.asarray(
            seed.data if isinstance(seed, Tensor) else seed)
        if seed.shape != output.shape:
            raise ValueError(f"seed shape {seed.shape} != output shape {output.shape}")
        grads: dict[int, np.ndarray] = {self.node_of(output): seed.astype(
            output.dtype if output.is_complex else np.result_type(seed, output.dtype))}
        for rec in reversed(self.records):
            g = grads.pop(rec.output, None)
            if g is None:
                continue
            in_grads = rec.vjp(g)
            for nid, gi in zip(rec.inputs, in_grads):
                if nid is None or gi is None:
                    continue
                if nid in grads:
                    grads[nid] = grads[nid] + gi
                else:
                    grads[nid] = gi
        result = {}
        for nid, t in self._leaves.values():
            g = grads.get(nid)
            if g is None:
                g = np.zeros(t.shape, dtype=t.dtype)
            elif not t.is_complex and np.iscomplexobj(g):
                g = g.real
            result[nid] = np.asarray(g, dtype=t.dtype).reshape(t.shape)
        return result

    def grad(self, output: Tensor, wrt: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        g = self.backward(output, seed)
        out = []
        for t in wrt:
            nid = self.node_of(t)
            out.append(g[nid] if nid is not None else np.zeros(t.shape, t.dtype))
        return out


def record_op(op: str, out: np.ndarray, inputs: Sequence, vjp) -> Tensor:
    tape = current_tape()
    if tape is None:
        return Tensor._wrap(np.asarray(out), False)
    return tape.record(op, out, inputs, vjp)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _realify(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(g) and not np.iscomplexobj(like):
        return g.real
    return g


# elementwise binary ---------------------------------------------------------

def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (_realify(_unbroadcast(g, ad.shape), ad), _realify(_unbroadcast(g, bd.shape), bd))

    return record_op("add", ad + bd, (a, b), vjp)


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (_realify(_unbroadcast(g, ad.shape), ad), _realify(_unbroadcast(-g, bd.shape), bd))

    return record_op("sub", ad - bd, (a, b), vjp)


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        return (_realify(_unbroadcast(g * np.conj(bd), ad.shape), ad),
                _realify(_unbroadcast(g * np.conj(ad), bd.shape), bd))

    return record_op("mul", ad * bd, (a, b), vjp)


def div(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad / bd

    def vjp(g):
        ga = g / np.conj(bd)
        gb = -g * np.conj(out / bd)
        return (_realify(_unbroadcast(ga, ad.shape), ad), _realify(_unbroadcast(gb, bd.shape), bd))

    return record_op("div", out, (a, b), vjp)


def neg(a) -> Tensor:
    return record_op("neg", -_data(a), (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    ad = _data(a)

    def vjp(g):
        return (g * p * ad ** (p - 1),)

    return record_op("power", ad ** p, (a,), vjp)


def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def vjp(g):
        ga = g @ np.conj(np.swapaxes(bd, -1, -2)) if bd.ndim > 1 else np.multiply.outer(g, np.conj(bd))
        if ad.ndim > 1:
            gb = np.conj(np.swapaxes(ad, -1, -2)) @ g
        else:
            gb = np.conj(ad)[:, None] * g[..., None, :] if g.ndim else np.conj(ad) * g
        return (_realify(_unbroadcast(ga, ad.shape), ad), _realify(_unbroadcast(gb, bd.shape), bd))

    return record_op("matmul", ad @ bd, (a, b), vjp)


# elementwise unary ----------------------------------------------------------

def exp(a) -> Tensor:
    out = np.exp(_data(a))
    return record_op("exp", out, (a,), lambda g: (g * np.conj(out),))


def log(a) -> Tensor:
    ad = _data(a)
    return record_op("log", np.log(ad), (a,), lambda g: (g / np.conj(ad),))


def sqrt(a) -> Tensor:
    out = np.sqrt(_data(a))

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(out > 0, g / (2 * np.where(out > 0, out, 1)), 0.0)
        return (r,)

    return record_op("sqrt", out, (a,), vjp)


def tabs(a) -> Tensor:
    """Absolute value (complex modulus for complex input); subgradient 0 at 0."""
    ad = _data(a)
    out = np.abs(ad)
    if np.iscomplexobj(ad):
        def vjp(g):
            safe = np.where(out > 0, out, 1)
            return (np.where(out > 0, g * ad / safe, 0),)
    else:
        def vjp(g):
            return (g * np.sign(ad),)
    return record_op("abs", out, (a,), vjp)


def clamp_min(a, floor: float) -> Tensor:
    """``max(a, floor)`` with zero gradient where the floor is active."""
    ad = _data(a)
    active = ad > floor
    return record_op("clamp_min", np.where(active, ad, floor), (a,), lambda g: (g * active,))


def relu(a) -> Tensor:
    ad = _data(a)
    active = ad > 0
    return record_op("relu", np.where(active, ad, 0), (a,), lambda g: (g * active,))


def sigmoid(a) -> Tensor:
    ad = _data(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * ad))
    return record_op("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a) -> Tensor:
    out = np.tanh(_data(a))
    return record_op("tanh", out, (a,), lambda g: (g * (1 - out * out),))


def real(a) -> Tensor:
    return record_op("real", np.real(_data(a)), (a,), lambda g: (g.astype(_data(a).dtype),))


def imag(a) -> Tensor:
    return record_op("imag", np.imag(_data(a)), (a,), lambda g: (1j * g,))


def conj(a) -> Tensor:
    return record_op("conj", np.conj(_data(a)), (a,), lambda g: (np.conj(g),))


def to_complex(a) -> Tensor:
    ad = _data(a)
    return record_op("to_complex", ad.astype(_COMPLEX_OF[np.dtype(ad.dtype)]), (a,), lambda g: (np.real(g),))


# reductions and shape ops -----------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return record_op("sum", out, (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    ad = _data(a)
    n = ad.size if axis is None else np.prod([ad.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    ad = _data(a)
    return record_op("reshape", ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def transpose(a, axes=None) -> Tensor:
    ad = _data(a)
    inv = None if axes is None else np.argsort(axes)
    return record_op("transpose", np.transpose(ad, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    ad = _data(a)
    if isinstance(index, Tensor):
        index = index.data

    def vjp(g):
        out = np.zeros(ad.shape, dtype=np.result_type(g, ad.dtype))
        np.add.at(out, index, g)
        return (out,)

    return record_op("getitem", ad[index], (a,), vjp)


def gather(a, index: np.ndarray) -> Tensor:
    """``a[index]`` along the first axis of a 1-D tensor; fast scatter-add VJP."""
    ad = _data(a)
    if ad.ndim != 1:
        raise ValueError("gather expects a 1-D tensor")
    index = np.asarray(index)

    def vjp(g):
        flat = index.ravel()
        if np.iscomplexobj(g):
            return (np.bincount(flat, g.real.ravel(), ad.size)
                    + 1j * np.bincount(flat, g.imag.ravel(), ad.size),)
        return (np.bincount(flat, g.ravel(), ad.size),)

    return record_op("gather", ad[index], (a,), vjp)


def scatter_add(a, index: np.ndarray, size: int) -> Tensor:
    """Sum the entries of real ``a`` into a length-``size`` vector at ``index``."""
    ad = _data(a)
    index = np.asarray(index)
    if index.shape != ad.shape:
        raise ValueError("index must have the shape of the scattered tensor")
    out = np.bincount(index.ravel(), ad.ravel(), size)
    return record_op("scatter_add", out, (a,), lambda g: (g[index],))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    arrs = [_data(t) for t in tensors]
    bounds = np.cumsum([0] + [x.shape[axis] for x in arrs])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(arrs)))

    return record_op("concat", np.concatenate(arrs, axis=axis), tuple(tensors), vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    arrs = [_data(t) for t in tensors]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(arrs)))

    return record_op("stack", np.stack(arrs, axis=axis), tuple(tensors), vjp)


def pad(a, widths, mode: str = "constant") -> Tensor:
    """Zero padding; ``widths`` as for ``np.pad``."""
    if mode != "constant":
        raise ValueError("only constant padding is differentiable here; use gather for reflection")
    ad = _data(a)
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, ad.shape))
    return record_op("pad", np.pad(ad, widths), (a,), lambda g: (g[slices],))


def cumsum(a, axis: int = -1) -> Tensor:
    ad = _data(a)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return record_op("cumsum", np.cumsum(ad, axis=axis), (a,), vjp)


# FFT --------------------------------------------------------------------------

def rfft(a, n: int | None = None) -> Tensor:
    """Real FFT along the last axis (input zero-padded/truncated to ``n``)."""
    ad = _data(a)
    length = ad.shape[-1]
    n = length if n is None else n
    out = np.fft.rfft(ad, n=n, axis=-1)

    def vjp(g):
        y = g.copy()
        y[..., 1:(n + 1) // 2] *= 0.5
        gx = np.fft.irfft(y, n=n, axis=-1) * n
        if length <= n:
            return (gx[..., :length],)
        return (np.concatenate([gx, np.zeros(gx.shape[:-1] + (length - n,))], axis=-1),)

    return record_op("rfft", out, (a,), vjp)


def irfft(a, n: int) -> Tensor:
    """Inverse real FFT along the last axis; ``n`` is the (even) output length."""
    ad = _data(a)
    if n % 2:
        raise ValueError("irfft here requires an even length")
    out = np.fft.irfft(ad, n=n, axis=-1)

    def vjp(g):
        y = np.fft.rfft(g, axis=-1) / n
        y[..., 1:n // 2] *= 2.0
        return (y,)

    return record_op("irfft", out, (a,), vjp)


# gradient checking --------------------------------------------------------------

@dataclass
class CheckReport:
    max_rel_err: float
    max_abs_err: float
    argmax_index: int
    n_coords: int
    name: str = ""
    passed: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class GradCheckError(ValueError):
    pass


def value_and_grad(f: Callable, x: np.ndarray, dtype: str = "float64"):
    """Evaluate scalar ``f`` at ``x`` and return ``(value, gradient)``."""
    with Tape(dtype) as tape:
        xt = Tensor(x, requires_grad=True)
        y = f(xt)
        if y.size != 1:
            raise ValueError("f must be scalar-valued")
        (g,) = tape.grad(y, [xt])
    return float(np.real(y.data).reshape(())), g


def grad_check(f: Callable, x, epsilon: float = 1e-5, *, exclude=None,
               max_coords: int = 512, subset: int = 128, rng=None,
               rel_floor: float = 1e-3) -> CheckReport:
    """Compare the reverse-mode gradient of scalar ``f`` against central differences.

    ``exclude`` is an optional boolean mask of coordinates to skip (kinks).
    When ``x`` has more than ``max_coords`` elements a random subset of
    ``subset`` coordinates is checked. The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, rel_floor * max|n|)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.array(x, dtype=np.float64)
    value, analytic = value_and_grad(f, x)
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise GradCheckError("non-finite value or gradient")
    candidates = np.arange(x.size)
    if exclude is not None:
        candidates = candidates[~np.asarray(exclude, bool).ravel()]
    if candidates.size > max_coords:
        rng = np.random.default_rng(0) if rng is None else rng
        candidates = np.sort(rng.choice(candidates, size=max(subset, 64), replace=False))

    def evaluate(v):
        with Tape("float64"):
            y = f(Tensor(v))
        val = float(np.real(y.data).reshape(()))
        if not np.isfinite(val):
            raise GradCheckError("non-finite function value during differencing")
        return val

    flat = x.ravel()
    numeric = np.empty(candidates.size)
    for j, i in enumerate(candidates):
        xp = flat.copy()
        xp[i] += epsilon
        xm = flat.copy()
        xm[i] -= epsilon
        numeric[j] = (evaluate(xp.reshape(x.shape)) - evaluate(xm.reshape(x.shape))) / (2 * epsilon)
    a = analytic.ravel()[candidates]
    abs_err = np.abs(a - numeric)
    scale = np.max(np.abs(numeric)) if numeric.size else 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), max(rel_floor * scale, 1e-300))
    rel = abs_err / denom
    k = int(np.argmax(rel)) if rel.size else 0
    return CheckReport(
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        max_abs_err=float(abs_err.max()) if abs_err.size else 0.0,
        argmax_index=int(candidates[k]) if rel.size else -1,
        n_coords=int(candidates.size),
    )
