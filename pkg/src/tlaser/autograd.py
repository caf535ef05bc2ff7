"""Dense tensors with tape-based reverse-mode differentiation.

Every operation in this module takes :class:`Tensor` inputs and returns a new
:class:`Tensor`.  When a :class:`Tape` is active and at least one input
requires a gradient, the operation appends a backward closure to the tape.
:func:`backward` replays those closures in exact reverse order.

Broadcasting is deliberately narrow: a second operand may only match the
*trailing* dimensions of the first (bias / gain style).  Anything else raises
:class:`ShapeError`.  Use :func:`expand` when a broadcast is really wanted.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "DegenerateMaskError",
    "TapeError",
    "NumericError",
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "precision",
    "get_default_dtype",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "getitem",
    "take",
    "concat",
    "expand",
    "relu",
    "dropout",
    "softmax_rows",
    "layer_norm",
    "square",
    "reciprocal",
    "sum",
    "mean",
    "frobenius_norm",
    "row_norms",
    "hinge",
    "smoothed_cross_entropy",
    "grad_check",
    "GradCheckReport",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateMaskError(ValueError):
    """A softmax row has every entry masked."""


class TapeError(RuntimeError):
    """Misuse of a gradient tape (stale, inactive or non-scalar loss)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


_DEFAULT_DTYPE = [np.float32]


def get_default_dtype():
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    _DEFAULT_DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


class Tensor:
    """An immutable n-d array with an optional gradient slot.

    ``data`` is a numpy array; operations never write into it.  Parameters
    are the only tensors whose ``data`` is replaced, and only between tape
    lifetimes (by the optimizer or the gradient checker).
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; use scale()")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    """Build a tensor, copying ``data`` at the current default precision."""
    arr = np.array(data, dtype=dtype or get_default_dtype())
    if arr.ndim and 0 in arr.shape:
        raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
    return Tensor(arr, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return tensor(data, requires_grad=True, dtype=dtype, name=name)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_ACTIVE_TAPES: list["Tape"] = []


@dataclass
class _Entry:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of executed operations.

    Use as a context manager around the forward pass, then call
    :func:`backward` once.  A tape cannot be replayed twice.
    """

    entries: list[_Entry] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape already consumed; run a new forward pass")
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)


def _record(out: Tensor, inputs: tuple[Tensor, ...], fn) -> Tensor:
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].entries.append(_Entry(out, inputs, fn))
    return out


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Replay ``tape`` in reverse and return ``{leaf parameter: gradient}``.

    Gradients are also stored on each leaf's ``grad`` attribute, overwriting
    any previous value.  Leaves that the loss does not depend on receive a
    zero gradient.
    """
    if tape.consumed:
        raise TapeError("stale tape: backward already ran; re-run the forward pass")
    if loss.data.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.entries or not any(e.out is loss for e in reversed(tape.entries)):
        raise TapeError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(e.out) for e in tape.entries}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.out), None)
        for t in entry.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)
        if g is None:
            continue
        in_grads = entry.backward(g)
        for t, gi in zip(entry.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    tape.consumed = True

    result = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.astype(leaf.data.dtype, copy=False)
        result[leaf] = leaf.grad
    return result


# --------------------------------------------------------------------------
# elementwise / structural ops
# --------------------------------------------------------------------------


def _check_trailing(a: Tensor, b: Tensor, op: str) -> bool:
    """True if ``b`` broadcasts along leading dims of ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    if b.ndim == 0:
        return _record(Tensor(a.data + b.data), (a, b), lambda g: (g, np.sum(g)))
    bcast = _check_trailing(a, b, "add")
    out = Tensor(a.data + b.data)
    shape = b.shape
    return _record(out, (a, b), lambda g: (g, _reduce_to(g, shape) if bcast else g))


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    if b.ndim == 0:
        return _record(Tensor(a.data - b.data), (a, b), lambda g: (g, -np.sum(g)))
    bcast = _check_trailing(a, b, "sub")
    out = Tensor(a.data - b.data)
    shape = b.shape
    return _record(out, (a, b), lambda g: (g, -(_reduce_to(g, shape) if bcast else g)))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    bcast = _check_trailing(a, b, "mul") if b.ndim else None
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)

    def fn(g):
        ga = g * bd
        gb = g * ad
        if b.ndim == 0:
            gb = np.sum(gb)
        elif bcast:
            gb = _reduce_to(gb, bd.shape)
        return ga, gb

    return _record(out, (a, b), fn)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant."""
    c = a.dtype.type(c)
    return _record(Tensor(a.data * c), (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return _record(Tensor(-a.data), (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        r = 1.0 / a.data
    return _record(Tensor(r.astype(a.dtype)), (a,), lambda g: (-g * r * r,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(Tensor(ad * ad), (a,), lambda g: (2 * g * ad,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` is ``(..., m, k)``; ``b`` is either ``(k, n)`` (shared weight) or
    has exactly the same leading dims as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)

    def fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(out, (a, b), fn)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(Tensor(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _record(Tensor(a.data.reshape(shape)), (a,), lambda g: (g.reshape(old),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice / integer) indexing."""
    ad = a.data

    def fn(g):
        full = np.zeros_like(ad)
        full[index] = g
        return (full,)

    return _record(Tensor(ad[index]), (a,), fn)


def take(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-d ``table`` by an integer id array of any shape."""
    if table.ndim != 2:
        raise ShapeError(f"take expects a 2-d table, got {table.shape}")
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")
    td = table.data

    def fn(g):
        full = np.zeros_like(td)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, td.shape[1]))
        return (full,)

    return _record(Tensor(td[ids]), (table,), fn)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    datas = [p.data for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]
    return _record(out, parts, lambda g: tuple(np.split(g, sizes, axis=axis)))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly broadcast ``a`` over new leading axes or size-1 axes."""
    shape = tuple(shape)
    ad = a.data
    if ad.ndim > len(shape):
        raise ShapeError(f"expand: cannot expand {ad.shape} to {shape}")
    lead = len(shape) - ad.ndim
    for s, t in zip(ad.shape, shape[lead:]):
        if s != t and s != 1:
            raise ShapeError(f"expand: cannot expand {ad.shape} to {shape}")
    out = Tensor(np.broadcast_to(ad, shape).copy())

    def fn(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, s in enumerate(ad.shape) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _record(out, (a,), fn)


def relu(a: Tensor) -> Tensor:
    ad = a.data
    mask = ad > 0
    return _record(Tensor(np.where(mask, ad, 0).astype(ad.dtype)), (a,), lambda g: (g * mask,))


def hinge(a: Tensor) -> Tensor:
    """``max(0, a)`` with subgradient 0 at the kink."""
    return relu(a)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``p == 0``."""
    if rng is None or p <= 0.0:
        return a
    keep = (rng.random(a.shape, dtype=np.float32) >= p).astype(a.dtype) / a.dtype.type(1.0 - p)
    return _record(Tensor(a.data * keep), (a,), lambda g: (g * keep,))


def softmax_rows(m: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` marks entries that may be attended.

    Masked entries come out exactly zero.  A row with no allowed entry
    raises :class:`DegenerateMaskError`.
    """
    x = m.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise DegenerateMaskError("softmax row has every entry masked")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(m.dtype)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(Tensor(y), (m,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm: last dimension must be positive")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},), got {gain.shape}, {bias.shape}")
    xd = x.data
    xc = xd - xd.sum(axis=-1, keepdims=True) / d
    var = (xc * xc).sum(axis=-1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = Tensor((xhat * gd + bias.data).astype(xd.dtype))

    def fn(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.sum(axis=-1, keepdims=True) / d
                    - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / d)
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, (x, gain, bias), fn)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    ad = a.data
    if axis is None:
        return _record(Tensor(np.asarray(ad.sum())), (a,), lambda g: (np.broadcast_to(g, ad.shape).copy(),))
    ax = axis % ad.ndim
    return _record(Tensor(ad.sum(axis=ax)), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, ax), ad.shape).copy(),))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def frobenius_norm(x: Tensor) -> Tensor:
    """sqrt(sum(x**2)) as a scalar; gradient is 0 at the origin."""
    xd = x.data
    n = np.sqrt((xd * xd).sum())

    def fn(g):
        if n == 0:
            return (np.zeros_like(xd),)
        return (g * xd / n,)

    return _record(Tensor(np.asarray(n, dtype=xd.dtype)), (x,), fn)


def row_norms(x: Tensor) -> Tensor:
    """Euclidean norm of each vector along the last axis."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=-1))

    def fn(g):
        safe = np.where(n > 0, n, 1)
        return (np.where(n[..., None] > 0, xd * (g / safe)[..., None], 0),)

    return _record(Tensor(n), (x,), fn)


def smoothed_cross_entropy(logits: Tensor, targets: np.ndarray, smoothing: float,
                           weights: np.ndarray) -> Tensor:
    """Sum over positions of ``weights * CE(smoothed one-hot, softmax(logits))``.

    ``logits`` is ``(..., V)``; ``targets`` and ``weights`` share its leading
    shape.  The smoothed target puts ``1 - s + s/V`` on gold and ``s/V``
    elsewhere.
    """
    z = logits.data
    V = z.shape[-1]
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    logp = z - lse
    gold = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    per_pos = -((1.0 - smoothing) * gold + (smoothing / V) * logp.sum(axis=-1))
    w = weights.astype(z.dtype)
    value = np.asarray((per_pos * w).sum(), dtype=z.dtype)

    def fn(g):
        q = np.full(z.shape, smoothing / V, dtype=z.dtype)
        np.put_along_axis(q, targets[..., None], 1.0 - smoothing + smoothing / V, axis=-1)
        grad = (np.exp(logp) - q) * (w * g)[..., None]
        return (grad.astype(z.dtype),)

    return _record(Tensor(value), (logits,), fn)


# --------------------------------------------------------------------------
# finite-difference checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    failures: dict[str, int]
    rel_tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return not any(self.failures.values())

    def summary(self) -> str:
        lines = [f"grad-check: {'PASS' if self.passed else 'FAIL'} "
                 f"(rel_tol={self.rel_tol:g}, {self.n_checked} entries)"]
        for name, err in self.max_rel_error.items():
            lines.append(f"  {name:40s} max_rel={err:.3e} failures={self.failures[name]}")
        return "\n".join(lines)


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor] | Iterable[Tensor],
               step: float = 1e-5, rel_tol: float = 1e-4, abs_floor: float = 1e-8,
               analytic: dict[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``f`` with central differences.

    ``f`` takes no arguments and reads the current values of ``params``.
    Parameters must be float64.  ``analytic`` overrides the tape gradients
    (used to feed deliberately wrong gradients as a negative control).
    """
    if not isinstance(params, dict):
        params = {p.name or f"param{i}": p for i, p in enumerate(params)}
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.dtype}")

    if analytic is None:
        with Tape() as tape:
            loss = f()
        grads = backward(loss, tape)
        analytic = {name: grads.get(p, np.zeros_like(p.data)) for name, p in params.items()}

    def probe() -> float:
        v = float(f().data)
        if not math.isfinite(v):
            raise NumericError("objective is not finite at a probe point")
        return v

    max_err, failures, n = {}, {}, 0
    for name, p in params.items():
        base = p.data
        flat_grad = np.asarray(analytic[name]).reshape(-1)
        worst, bad = 0.0, 0
        for i in range(base.size):
            work = base.copy().reshape(-1)
            work[i] += step
            p.data = work.reshape(base.shape)
            hi = probe()
            work[i] -= 2 * step
            p.data = work.reshape(base.shape)
            lo = probe()
            p.data = base
            numeric = (hi - lo) / (2 * step)
            a = float(flat_grad[i])
            diff = abs(a - numeric)
            err = diff / max(abs(a), abs(numeric), abs_floor)
            worst = max(worst, err)
            # entries whose absolute disagreement is below the floor pass
            bad += err > rel_tol and diff > abs_floor
            n += 1
        max_err[name] = worst
        failures[name] = bad
    return GradCheckReport(max_err, failures, rel_tol, n)
