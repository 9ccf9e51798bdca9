"""
Define-by-run reverse-mode differentiation on float64 numpy arrays.

Every op returns a new :class:`Tensor`. When any input requires a gradient,
the output records its parents and a closure mapping the upstream gradient to
per-parent gradients. :func:`backward` walks that graph in reverse
topological order.

Broadcasting is deliberately narrow: operands of a binary op must have equal
shapes, or one of them must be a scalar, a row vector ``(1, n)`` / ``(n,)``
matching the trailing extent of an ``(m, n)`` matrix, or a column vector
``(m, 1)`` matching its leading extent.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from ..errors import DomainError, NonFiniteError, ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array that optionally participates in differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def grad(self) -> np.ndarray | None:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        if value is None:
            self._grad = None
            return
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError(f"grad shape {value.shape} != tensor shape {self.data.shape}")
        self._grad = value

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced by a primitive op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out._grad = None
    parents = tuple(parents)
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# -- broadcasting ------------------------------------------------------------

def _check_broadcast(sa: tuple, sb: tuple) -> tuple:
    if sa == sb:
        return sa
    for small, big in ((sa, sb), (sb, sa)):
        if int(np.prod(small)) == 1 and len(small) <= len(big):
            return big
        if len(big) == 2:
            m, n = big
            if small in ((n,), (1, n)) or small == (m, 1):
                return big
    raise ShapeError(f"operands with shapes {sa} and {sb} are not broadcast-compatible")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.full(shape, grad.sum())
    if len(shape) == 1:
        return grad.sum(axis=0)
    if shape[0] == 1:
        return grad.sum(axis=0, keepdims=True)
    return grad.sum(axis=1, keepdims=True)


# -- elementwise binary ops -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DomainError("division by zero")
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,))


def blockdiag_matmul(blocks: np.ndarray, x) -> Tensor:
    """Multiply a stack of constant ``(B, n, n)`` blocks into ``x`` of shape ``(B*n, d)``.

    Equivalent to ``block_diag(*blocks) @ x`` without materialising the
    block-diagonal matrix.
    """
    x = as_tensor(x)
    blocks = np.asarray(blocks, dtype=np.float64)
    nb, n, n2 = blocks.shape
    if n != n2 or x.ndim != 2 or x.shape[0] != nb * n:
        raise ShapeError(f"blockdiag_matmul: blocks {blocks.shape} incompatible with {x.shape}")
    d = x.shape[1]
    out = np.matmul(blocks, x.data.reshape(nb, n, d)).reshape(nb * n, d)

    def _bw(g):
        return (np.matmul(blocks.transpose(0, 2, 1), g.reshape(nb, n, d)).reshape(nb * n, d),)

    return _make(out, (x,), _bw)


# -- unary ops ------------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):  # overflow is reported by _make
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.logaddexp(0.0, xd), (x,), lambda g: (g * special.expit(xd),))


def normal_cdf(x) -> Tensor:
    """Standard normal CDF, elementwise."""
    x = as_tensor(x)
    xd = x.data
    pdf = np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)
    return _make(special.ndtr(xd), (x,), lambda g: (g * pdf,))


# -- reductions -------------------------------------------------------------

def tensor_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), _bw)


def tensor_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return scale(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def mean_rows(x) -> Tensor:
    """Average the rows of a matrix, returning a vector of its column extent."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_rows expects a nonempty matrix, got {x.shape}")
    return tensor_mean(x, axis=0)


def l2_normalize(x, eps: float = 0.0) -> Tensor:
    """Scale each row (or a lone vector) to unit Euclidean norm.

    With ``eps > 0`` rows are divided by ``max(norm, eps)`` instead, so a
    zero row maps to zero rather than raising.
    """
    x = as_tensor(x)
    xd = x.data if x.ndim == 2 else x.data.reshape(1, -1)
    norms = np.sqrt((xd * xd).sum(axis=1, keepdims=True))
    if eps <= 0 and np.any(norms == 0):
        raise DomainError("cannot normalize a zero-norm row")
    floored = norms < eps
    denom = np.where(floored, eps, norms)
    y = xd / denom

    def _bw(g):
        g2 = g.reshape(y.shape)
        radial = np.where(floored, 0.0, y * (g2 * y).sum(axis=1, keepdims=True))
        gx = (g2 - radial) / denom
        return (gx.reshape(x.shape),)

    return _make(y.reshape(x.shape), (x,), _bw)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    """Concatenate matrices along rows (``axis=0``) or columns (``axis=1``)."""
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("concat of empty sequence")
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return _make(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def _bw(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), _bw)


def scatter_rows(x, idx, n_rows: int) -> Tensor:
    """Place the rows of ``x`` at positions ``idx`` of a zero ``(n_rows, d)`` matrix."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if x.ndim != 2 or len(idx) != x.shape[0]:
        raise ShapeError(f"scatter_rows: {len(idx)} indices for shape {x.shape}")
    out = np.zeros((n_rows, x.shape[1]))
    np.add.at(out, idx, x.data)
    return _make(out, (x,), lambda g: (g[idx],))


# -- softmax family -------------------------------------------------------------

def _as_rows(xd: np.ndarray) -> np.ndarray:
    return xd if xd.ndim == 2 else xd.reshape(1, -1)


def row_softmax(x) -> Tensor:
    x = as_tensor(x)
    xd = _as_rows(x.data)
    z = np.exp(xd - xd.max(axis=1, keepdims=True))
    p = z / z.sum(axis=1, keepdims=True)

    def _bw(g):
        g2 = g.reshape(p.shape)
        return ((p * (g2 - (g2 * p).sum(axis=1, keepdims=True))).reshape(x.shape),)

    return _make(p.reshape(x.shape), (x,), _bw)


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    xd = _as_rows(x.data)
    shifted = xd - xd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def _bw(g):
        g2 = g.reshape(out.shape)
        return ((g2 - p * g2.sum(axis=1, keepdims=True)).reshape(x.shape),)

    return _make(out.reshape(x.shape), (x,), _bw)


def masked_softmax(x, mask) -> Tensor:
    """Row softmax restricted to entries where ``mask`` is true; zeros elsewhere.

    Every row must keep at least one entry.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    xd = _as_rows(x.data)
    m2 = mask.reshape(xd.shape)
    if not np.all(m2.any(axis=1)):
        raise ShapeError("masked_softmax: a row has no kept entries")
    masked = np.where(m2, xd, -np.inf)
    z = np.where(m2, np.exp(masked - masked.max(axis=1, keepdims=True)), 0.0)
    p = z / z.sum(axis=1, keepdims=True)

    def _bw(g):
        g2 = g.reshape(p.shape)
        return ((p * (g2 - (g2 * p).sum(axis=1, keepdims=True))).reshape(x.shape),)

    return _make(p.reshape(x.shape), (x,), _bw)


# -- reverse sweep ----------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every ``t`` reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node._grad = g.copy() if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
