"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on a tensor that requires gradients records a node holding
the op tag, its inputs and a closure over whatever the backward rule needs.
:func:`backward` replays those nodes in reverse topological order.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "create", "as_tensor", "no_grad",
    "add", "sub", "neg", "hadamard", "scale", "matmul", "conv2d",
    "relu", "sum", "mean", "permute", "reshape", "slice", "pad", "concat",
    "gather2d", "batch_norm", "softmax", "softmax_cross_entropy",
    "backward", "grad_check",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Callable):
        self.op = op
        self.inputs = inputs
        # maps output grad -> tuple of input grads (None where not needed)
        self.backward = backward

    def __repr__(self):
        return f"Node({self.op!r}, inputs={len(self.inputs)})"


class Tensor:
    """An n-dimensional float64 array that may take part in a recorded graph."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(as_tensor(other), self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(as_tensor(other), self)
    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)
    __rmul__ = __mul__
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axes=None, keepdims=False): return sum(self, axes, keepdims)
    def mean(self, axes=None, keepdims=False): return mean(self, axes, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def permute(self, *order):
        if len(order) == 1 and isinstance(order[0], (tuple, list)):
            order = tuple(order[0])
        return permute(self, order)
    def relu(self): return relu(self)
    def backward(self): backward(self)


def create(shape: Sequence[int], data: Iterable[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from a shape and flat row-major data."""
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative extent in shape {shape}")
    flat = np.asarray(list(data) if not isinstance(data, np.ndarray) else data, dtype=np.float64).reshape(-1)
    if flat.size != math.prod(shape):
        raise ValueError(f"data length {flat.size} does not match shape {shape}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], bw: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, bw)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum away leading axes, then axes that were stretched from size 1
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, "add", (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, "sub", (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, "neg", (a,), lambda g: (-g,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with size-1 / leading-axis broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "hadamard")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad * bd, "hadamard", (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, "scale", (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # batch axes come from a alone: fold them into rows, one gemm each way
        rows = ad.reshape(-1, ad.shape[-1])
        out = (rows @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))

        def bw2(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = rows.T @ g2 if b.requires_grad else None
            return ga, gb

        return _record(out, "matmul", (a, b), bw2)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _record(ad @ bd, "matmul", (a, b), bw)


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-size 2-D cross-correlation over the last two axes.

    ``x`` is ``[..., h, w]``, ``kernel`` is ``[k, k]`` with ``k`` odd; the input
    is zero padded by ``(k - 1) // 2`` on every side.  No kernel flip.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"conv2d kernel must be square, got {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd, got {k}")
    if x.ndim < 2:
        raise ValueError(f"conv2d input must be at least 2-D, got {x.shape}")
    r = (k - 1) // 2
    h, w = x.shape[-2:]
    pad_width = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x.data, pad_width)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(-2, -1))
    kd = kernel.data
    out = np.einsum("...ijab,ab->...ij", win, kd)

    def bw(g):
        gx = gk = None
        if kernel.requires_grad:
            gk = np.einsum("nijab,nij->ab", win.reshape((-1, h, w, k, k)), g.reshape((-1, h, w)))
        if x.requires_grad:
            # scatter each output grad back through every kernel tap
            gxp = np.zeros_like(xp)
            for a in range(k):
                for b in range(k):
                    gxp[..., a:a + h, b:b + w] += kd[a, b] * g
            gx = gxp[..., r:r + h, r:r + w]
        return gx, gk

    return _record(out, "conv2d", (x, kernel), bw)


# ---------------------------------------------------------------- reductions

def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-D tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axes, x.ndim)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(x.data.sum(axis=axes, keepdims=keepdims), "sum", (x,), bw)


def mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    if count == 0:
        raise ValueError("mean over an empty extent")
    return scale(sum(x, axes, keepdims), 1.0 / count)


# ---------------------------------------------------------------- shape ops

def permute(x: Tensor, order: Sequence[int]) -> Tensor:
    order = tuple(int(o) for o in order)
    if sorted(order) != list(range(x.ndim)):
        raise ValueError(f"invalid permutation {order} for {x.ndim}-D tensor")
    inverse = tuple(np.argsort(order))
    return _record(np.transpose(x.data, order), "permute", (x,),
                   lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def slice(x: Tensor, axis: int, start: int, stop: int, step: int = 1) -> Tensor:  # noqa: A001
    """Basic strided slice ``x[..., start:stop:step, ...]`` along one axis."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for {x.ndim}-D tensor")
    axis %= x.ndim
    n = x.shape[axis]
    if step < 1:
        raise ValueError("slice step must be positive")
    if not (0 <= start <= n and start <= stop <= n):
        raise ValueError(f"slice [{start}:{stop}] out of range for extent {n}")
    key = (np.s_[:],) * axis + (np.s_[start:stop:step],)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _record(x.data[key], "slice", (x,), bw)


def pad(x: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero padding along a single axis."""
    axis %= x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    n = x.shape[axis]
    key = (np.s_[:],) * axis + (np.s_[before:before + n],)
    return _record(np.pad(x.data, widths), "pad", (x,), lambda g: (g[key],))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    axis %= xs[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(xs)))

    return _record(np.concatenate([t.data for t in xs], axis=axis), "concat", tuple(xs), bw)


def gather2d(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """``x[..., rows, cols]`` with integer index arrays of equal shape."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    h, w = x.shape[-2:]
    if rows.size and (rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w):
        raise ValueError("gather2d index out of range")
    lead = x.shape[:-2]

    def bw(g):
        full = np.zeros((math.prod(lead), h, w))
        np.add.at(full, (np.s_[:], rows, cols), g.reshape((-1,) + rows.shape))
        return (full.reshape(x.shape),)

    return _record(x.data[..., rows, cols], "gather2d", (x,), bw)


# ---------------------------------------------------------------- normalization

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, axis: int = 1,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization; ``running_*`` arrays are updated in place
    when ``training`` is set."""
    axis %= x.ndim
    red = tuple(a for a in range(x.ndim) if a != axis)
    count = math.prod(x.shape[a] for a in red)
    if count == 0:
        raise ValueError("batch_norm: zero elements per channel")
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    gd = gamma.data.reshape(bshape)
    xd = x.data

    if training:
        mu = xd.mean(axis=red, keepdims=True)
        var = xd.var(axis=red, keepdims=True)
        unbiased = var * (count / (count - 1)) if count > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * unbiased.reshape(-1)
    else:
        mu = running_mean.reshape(bshape)
        var = running_var.reshape(bshape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    out = xhat * gd + beta.data.reshape(bshape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        if training:
            gx = (gd * inv_std / count) * (
                count * g - gbeta.reshape(bshape) - xhat * ggamma.reshape(bshape))
        else:
            gx = g * gd * inv_std
        return gx, ggamma, gbeta

    return _record(out, "batch_norm", (x, gamma, beta), bw)


# ---------------------------------------------------------------- classifier

def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"expected logits [batch, classes] and {logits.shape[:1]} labels")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = (logsum - z[rows, labels]).mean()

    def bw(g):
        p = np.exp(z - logsum[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _record(np.asarray(loss), "softmax_cross_entropy", (logits,), bw)


# ---------------------------------------------------------------- reverse pass

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that requires grad and reaches ``loss``.

    Gradients are added to any ``.grad`` already present.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad (not on a recorded graph)")
    grads = {id(loss): np.ones(loss.shape)}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t.node is None:
            continue
        for inp, gi in zip(t.node.inputs, t.node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = gi if key not in grads else grads[key] + gi


def grad_check(fn: Callable[..., Tensor], params: Sequence[Tensor], epsilon: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               tol: float = 1e-4) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn(*params)`` must return a scalar tensor.  With ``max_entries`` only that
    many randomly chosen coordinates of each parameter are perturbed.  A
    coordinate whose error exceeds ``tol`` is measured again with a step ten
    times smaller and keeps the lower error: a perturbation that straddles a
    relu kink converges as the step shrinks, a wrong backward rule does not.
    """
    for p in params:
        p.grad = None
    backward(fn(*params))
    analytic = [p.grad.copy() if p.grad is not None else np.zeros(p.shape) for p in params]
    rng = rng if rng is not None else np.random.default_rng(0)

    def rel_err(flat, i, ana, eps):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn(*params).item()
        flat[i] = orig - eps
        fm = fn(*params).item()
        flat[i] = orig
        num = (fp - fm) / (2 * eps)
        return abs(ana - num) / max(abs(ana), abs(num), 1e-8)

    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
            for i in idx:
                ana = ga.reshape(-1)[i]
                err = rel_err(flat, i, ana, epsilon)
                if err > tol:
                    err = min(err, rel_err(flat, i, ana, epsilon / 10))
                worst = max(worst, err)
    return worst
