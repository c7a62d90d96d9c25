"""Dense float64 primitives with an explicit reverse-mode tape.

Every public op accepts plain arrays or :class:`Var` nodes. With plain arrays
it is a pure forward function returning an ``ndarray``; as soon as one input
is a ``Var`` the application is recorded on that variable's :class:`Tape` and
a new ``Var`` is returned.

Ops broadcast over leading axes, so a "vector" op such as :func:`cosine_sim`
applied to ``(k, n, p)`` inputs works row by row along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ContractViolation, DegenerateInputError

DEGENERATE_NORM = 1e-12


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", name: str | None = None):
        self.value = value
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


@dataclass
class Primitive:
    name: str
    forward: Callable[..., tuple[np.ndarray, dict]]
    # vjp(g, cache, *input_values, **kw) -> one gradient (or None) per input
    vjp: Callable[..., tuple]


@dataclass
class TapeEntry:
    op: Primitive
    inputs: tuple
    output: Var
    cache: dict
    kwargs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive applications for one differentiation pass."""

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self.params: dict[str, Var] = {}

    def param(self, value, name: str) -> Var:
        if name in self.params:
            raise ContractViolation(f"parameter {name!r} registered twice")
        var = Var(_as_array(value).copy(), self, name)
        self.params[name] = var
        return var

    def replay(self) -> bool:
        """Re-run every recorded forward step and check outputs are bit-identical."""
        for entry in self.entries:
            vals = [_value(x) for x in entry.inputs]
            out, _ = entry.op.forward(*vals, **entry.kwargs)
            if out.shape != entry.output.value.shape or not np.array_equal(out, entry.output.value):
                return False
        return True

    def backward(self, loss: Var, seed=None) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` with respect to every registered parameter."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractViolation("loss node is not recorded on this tape")
        if loss.value.size != 1:
            raise ContractViolation(f"loss must be scalar, got shape {loss.value.shape}")
        if seed is None:
            seed = np.ones_like(loss.value)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(seed, dtype=np.float64).reshape(loss.value.shape)}
        for entry in reversed(self.entries):
            g = grads.get(id(entry.output))
            if g is None:
                continue
            vals = [_value(x) for x in entry.inputs]
            in_grads = entry.op.vjp(g, entry.cache, *vals, **entry.kwargs)
            for x, gx in zip(entry.inputs, in_grads):
                if gx is None or not isinstance(x, Var):
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        return {
            name: grads.get(id(var), np.zeros_like(var.value))
            for name, var in self.params.items()
        }


def _as_array(x) -> np.ndarray:
    # float64 unless the caller supplied extended precision
    a = np.asarray(x)
    return a.astype(np.promote_types(a.dtype, np.float64), copy=False)


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def _apply(op: Primitive, *args, **kwargs):
    tape = None
    vals = []
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ContractViolation(f"{op.name}: inputs recorded on different tapes")
            vals.append(a.value)
        else:
            vals.append(_as_array(a))
    out, cache = op.forward(*vals, **kwargs)
    if tape is None:
        return out
    node = Var(out, tape)
    inputs = tuple(a if isinstance(a, Var) else v for a, v in zip(args, vals))
    tape.entries.append(TapeEntry(op, inputs, node, cache, kwargs))
    return node


def value(x) -> np.ndarray:
    """Plain array behind ``x`` (a ``Var`` or array-like)."""
    return _value(x) if isinstance(x, Var) else _as_array(x)


def is_recorded(x) -> bool:
    return isinstance(x, Var)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def _add_fwd(a, b):
    return a + b, {}


def _add_vjp(g, cache, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_fwd(a, b):
    return a - b, {}


def _sub_vjp(g, cache, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_fwd(a, b):
    return a * b, {}


def _mul_vjp(g, cache, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _relu_fwd(x):
    mask = x > 0
    return np.where(mask, x, 0.0), {"mask": mask}


def _relu_vjp(g, cache, x):
    return (np.where(cache["mask"], g, 0.0),)


def _hinge_fwd(x, *, margin):
    slack = margin - x
    active = slack > 0
    return np.where(active, slack, 0.0), {"active": active}


def _hinge_vjp(g, cache, x, *, margin):
    return (np.where(cache["active"], -g, 0.0),)


ADD = Primitive("add", _add_fwd, _add_vjp)
SUB = Primitive("sub", _sub_fwd, _sub_vjp)
MUL = Primitive("mul", _mul_fwd, _mul_vjp)
RELU = Primitive("relu", _relu_fwd, _relu_vjp)
HINGE = Primitive("hinge", _hinge_fwd, _hinge_vjp)


def add(a, b):
    return _apply(ADD, a, b)


def sub(a, b):
    return _apply(SUB, a, b)


def mul(a, b):
    return _apply(MUL, a, b)


def scale(a, c: float):
    return _apply(MUL, a, np.float64(c))


def relu(x):
    """Elementwise ``max(0, x)``; the subgradient at exactly 0 is 0."""
    return _apply(RELU, x)


def hinge(x, margin: float):
    """Elementwise ``max(margin - x, 0)``."""
    return _apply(HINGE, x, margin=float(margin))


# --- shape ---------------------------------------------------------------

def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, {}


def _matmul_vjp(g, cache, a, b):
    return g @ b.T, a.T @ g


def _transpose_fwd(a):
    if a.ndim != 2:
        raise ContractViolation(f"transpose expects a matrix, got shape {a.shape}")
    return np.ascontiguousarray(a.T), {}


def _transpose_vjp(g, cache, a):
    return (np.ascontiguousarray(g.T),)


def _reshape_fwd(a, *, shape):
    return a.reshape(shape), {}


def _reshape_vjp(g, cache, a, *, shape):
    return (g.reshape(a.shape),)


MATMUL = Primitive("matmul", _matmul_fwd, _matmul_vjp)
TRANSPOSE = Primitive("transpose", _transpose_fwd, _transpose_vjp)
RESHAPE = Primitive("reshape", _reshape_fwd, _reshape_vjp)


def matmul(a, b):
    """Matrix product of two 2-D operands."""
    return _apply(MATMUL, a, b)


def transpose(a):
    return _apply(TRANSPOSE, a)


def reshape(a, shape: tuple[int, ...]):
    return _apply(RESHAPE, a, shape=tuple(shape))


# --- reductions ------------------------------------------------------------

def _sum_fwd(a):
    return np.asarray(a.sum()), {}


def _sum_vjp(g, cache, a):
    return (np.broadcast_to(g, a.shape).copy(),)


def _mean_fwd(a):
    if a.size == 0:
        raise ContractViolation("mean of an empty array")
    return np.asarray(a.mean()), {}


def _mean_vjp(g, cache, a):
    return (np.full(a.shape, g / a.size),)


def _sum_squares_fwd(a):
    return np.asarray(np.sum(a * a)), {}


def _sum_squares_vjp(g, cache, a):
    return (2.0 * g * a,)


SUM = Primitive("sum", _sum_fwd, _sum_vjp)
MEAN = Primitive("mean", _mean_fwd, _mean_vjp)
SUM_SQUARES = Primitive("sum_squares", _sum_squares_fwd, _sum_squares_vjp)


def total(a):
    """Sum of all entries, as a 0-d scalar."""
    return _apply(SUM, a)


def mean(a):
    """Mean of all entries, as a 0-d scalar."""
    return _apply(MEAN, a)


def sum_squares(a):
    return _apply(SUM_SQUARES, a)


# --- vector ops along the last axis ---------------------------------------

def _softmax_fwd(v):
    if v.ndim == 0 or v.shape[-1] == 0:
        raise ContractViolation("softmax of an empty vector")
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)
    return out, {"out": out}


def _softmax_vjp(g, cache, v):
    out = cache["out"]
    return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)


def _cosine_fwd(u, v, *, floor, power):
    if u.shape[-1] != v.shape[-1]:
        raise ContractViolation(f"cosine_sim: length mismatch {u.shape} vs {v.shape}")
    nu = np.sqrt(np.sum(u * u, axis=-1))
    nv = np.sqrt(np.sum(v * v, axis=-1))
    if floor is None:
        if np.any(nu < DEGENERATE_NORM) or np.any(nv < DEGENERATE_NORM):
            raise DegenerateInputError("cosine_sim: vector norm below 1e-12")
        fu, fv = nu, nv
    else:
        fu, fv = np.maximum(nu, floor), np.maximum(nv, floor)
    dot = np.sum(u * v, axis=-1)
    denom = (fu * fv) ** power
    out = dot / denom
    return out, {"nu": nu, "nv": nv, "fu": fu, "fv": fv, "denom": denom, "out": out}


def _cosine_vjp(g, cache, u, v, *, floor, power):
    c = cache["out"]
    denom = cache["denom"]
    # d|u|/du vanishes where the floor replaced the norm
    live_u = cache["fu"] == cache["nu"] if floor is not None else np.ones_like(c, dtype=bool)
    live_v = cache["fv"] == cache["nv"] if floor is not None else np.ones_like(c, dtype=bool)
    ku = np.where(live_u, power * c / np.where(live_u, cache["fu"] ** 2, 1.0), 0.0)
    kv = np.where(live_v, power * c / np.where(live_v, cache["fv"] ** 2, 1.0), 0.0)
    gu = g[..., None] * (v / denom[..., None] - ku[..., None] * u)
    gv = g[..., None] * (u / denom[..., None] - kv[..., None] * v)
    return _unbroadcast(gu, u.shape), _unbroadcast(gv, v.shape)


def _sq_dist_fwd(u, v):
    if u.shape[-1] != v.shape[-1]:
        raise ContractViolation(f"sq_dist: length mismatch {u.shape} vs {v.shape}")
    d = u - v
    return np.sum(d * d, axis=-1), {"d": d}


def _sq_dist_vjp(g, cache, u, v):
    gd = 2.0 * g[..., None] * cache["d"]
    return _unbroadcast(gd, u.shape), _unbroadcast(-gd, v.shape)


def _mean_rows_fwd(x):
    if x.ndim < 2 or x.shape[-2] == 0 or x.shape[-1] == 0:
        raise ContractViolation(f"mean_rows: empty or non-matrix input {x.shape}")
    return x.mean(axis=-2), {}


def _mean_rows_vjp(g, cache, x):
    n = x.shape[-2]
    return (np.broadcast_to(g[..., None, :] / n, x.shape).copy(),)


def _weighted_rows_fwd(x, w):
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ContractViolation(f"weighted_sum_rows: empty or non-matrix input {x.shape}")
    if w.shape[-1] != x.shape[-2]:
        raise ContractViolation(
            f"weighted_sum_rows: {w.shape[-1]} weights for {x.shape[-2]} rows"
        )
    return np.sum(w[..., :, None] * x, axis=-2), {}


def _weighted_rows_vjp(g, cache, x, w):
    gx = w[..., :, None] * g[..., None, :]
    gw = np.sum(x * g[..., None, :], axis=-1)
    return _unbroadcast(gx, x.shape), _unbroadcast(gw, w.shape)


SOFTMAX = Primitive("softmax", _softmax_fwd, _softmax_vjp)
COSINE = Primitive("cosine_sim", _cosine_fwd, _cosine_vjp)
SQ_DIST = Primitive("sq_dist", _sq_dist_fwd, _sq_dist_vjp)
MEAN_ROWS = Primitive("mean_rows", _mean_rows_fwd, _mean_rows_vjp)
WEIGHTED_ROWS = Primitive("weighted_sum_rows", _weighted_rows_fwd, _weighted_rows_vjp)


def softmax(v):
    """Softmax along the last axis, computed with max subtraction."""
    return _apply(SOFTMAX, v)


def cosine_sim(u, v, floor: float | None = None, squared_norms: bool = False):
    """Cosine similarity along the last axis.

    With ``floor=None`` a norm below 1e-12 raises :class:`DegenerateInputError`.
    Training passes ``floor=1e-12`` so that the norms are clamped instead.
    ``squared_norms`` divides by the product of squared norms.
    """
    return _apply(COSINE, u, v, floor=floor, power=2 if squared_norms else 1)


def sq_dist(u, v):
    """Squared Euclidean distance along the last axis."""
    return _apply(SQ_DIST, u, v)


def mean_rows(x):
    """Average of the rows of ``x`` (second-to-last axis)."""
    return _apply(MEAN_ROWS, x)


def weighted_sum_rows(x, w):
    """``sum_j w[j] * x[j]`` over the rows of ``x``."""
    return _apply(WEIGHTED_ROWS, x, w)


def finite_difference_gradient(
    f: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, Any],
    eps: float = 1e-5,
    dtype=np.float64,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of scalar ``f`` at ``params``.

    ``dtype=np.longdouble`` evaluates ``f`` on extended-precision copies of the
    parameters, which keeps round-off well below the truncation error when
    some gradient entries are tiny compared with ``f`` itself.
    """
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    work = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    grads = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = np.asarray(f(work), dtype=dtype)
            flat[i] = orig - eps
            lo = np.asarray(f(work), dtype=dtype)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * dtype(eps))
        grads[name] = g
    return grads


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a = _as_array(a)
    b = _as_array(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
