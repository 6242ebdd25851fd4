"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ndarray plus an optional backward record.  Graphs
are built eagerly by the op functions below and differentiated with
:meth:`Tensor.backward` (accumulating into ``.grad``) or :func:`grad_wrt`
(isolated, leaves ``.grad`` untouched).  Training runs in float32 by default;
pass float64 arrays for verification-grade gradients.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class Tensor:
    """An n-d value participating in a reverse-mode computation graph."""

    __slots__ = ("values", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
    ):
        self.values = np.asarray(values)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # -- graph traversal -------------------------------------------------

    def _topo(self) -> List["Tensor"]:
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return order  # children after parents; reverse for backprop

    def _backprop(self) -> Dict[int, np.ndarray]:
        """Run the reverse pass and return gradients keyed by node id."""
        if self.values.size != 1:
            raise ValueError(f"backward: root must be scalar, got shape {self.values.shape}")
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.values)}
        for node in reversed(self._topo()):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    # copy: pg may alias g or a view of it (add/reshape/transpose)
                    grads[id(parent)] = np.array(pg)
                else:
                    acc += pg
        return grads

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable node requiring grad.

        Repeated calls without zeroing accumulate.
        """
        grads = self._backprop()
        for node in self._topo():
            g = grads.get(id(node))
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.values)
            node.grad += g


def grad_wrt(root: Tensor, target: Tensor) -> np.ndarray:
    """Gradient of scalar ``root`` w.r.t. ``target`` without touching ``.grad``.

    The accumulation happens in an isolated pass so FGSM perturbation
    construction cannot contaminate the optimizer step.
    """
    grads = root._backprop()
    g = grads.get(id(target))
    if g is None:
        if not any(n is target for n in root._topo()):
            raise ValueError("grad_wrt: target is not reachable from root")
        g = np.zeros_like(target.values)
    return np.array(g, copy=True)


# -- helpers -------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return Tensor(
        a.values + b.values,
        parents=(a, b),
        backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return Tensor(
        a.values - b.values,
        parents=(a, b),
        backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    return Tensor(
        a.values * b.values,
        parents=(a, b),
        backward_fn=lambda g: (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.values / b.values
    return Tensor(
        out,
        parents=(a, b),
        backward_fn=lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * out / b.values, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(-a.values, parents=(a,), backward_fn=lambda g: (-g,))


def pow_scalar(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    out = a.values ** exponent
    return Tensor(
        out,
        parents=(a,),
        backward_fn=lambda g: (g * exponent * a.values ** (exponent - 1),),
    )


Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, e: pow_scalar(self, e)


# -- transcendental ------------------------------------------------------


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.values)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(np.log(a.values), parents=(a,), backward_fn=lambda g: (g / a.values,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.values)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.values)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.values > 0
    return Tensor(a.values * mask, parents=(a,), backward_fn=lambda g: (g * mask,))


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where unclamped."""
    a = _as_tensor(a)
    mask = a.values >= floor
    return Tensor(np.maximum(a.values, floor), parents=(a,), backward_fn=lambda g: (g * mask,))


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return Tensor(
        a.values @ b.values,
        parents=(a, b),
        backward_fn=lambda g: (g @ b.values.T, a.values.T @ g),
    )


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(a.values.T, parents=(a,), backward_fn=lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return Tensor(a.values.reshape(shape), parents=(a,), backward_fn=lambda g: (g.reshape(old),))


def gather_rows(a, indices) -> Tensor:
    """Select rows ``a[indices]``; backward scatter-adds (duplicates allowed)."""
    a = _as_tensor(a)
    idx = np.asarray(indices)

    def backward(g):
        out = np.zeros_like(a.values)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(a.values[idx], parents=(a,), backward_fn=backward)


def take(a, indices0, indices1) -> Tensor:
    """Fancy-index elements ``a[indices0, indices1]`` of a 2-d tensor."""
    a = _as_tensor(a)
    i0 = np.asarray(indices0)
    i1 = np.asarray(indices1)

    def backward(g):
        out = np.zeros_like(a.values)
        np.add.at(out, (i0, i1), g)
        return (out,)

    return Tensor(a.values[i0, i1], parents=(a,), backward_fn=backward)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-d tensors along axis 0."""
    tensors = [_as_tensor(t) for t in tensors]
    widths = {t.shape[1] for t in tensors}
    if len(widths) != 1:
        raise ShapeError("concat_rows", *[t.shape for t in tensors])
    sizes = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i]: offsets[i + 1]] for i in range(len(tensors)))

    return Tensor(np.concatenate([t.values for t in tensors], axis=0), parents=tuple(tensors), backward_fn=backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    """Columns ``a[:, start:stop]`` of a 2-d tensor."""
    a = _as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.values)
        out[:, start:stop] = g
        return (out,)

    return Tensor(a.values[:, start:stop], parents=(a,), backward_fn=backward)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-d tensors along axis 1."""
    tensors = [_as_tensor(t) for t in tensors]
    heights = {t.shape[0] for t in tensors}
    if len(heights) != 1:
        raise ShapeError("concat_cols", *[t.shape for t in tensors])
    sizes = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, offsets[i]: offsets[i + 1]] for i in range(len(tensors)))

    return Tensor(np.concatenate([t.values for t in tensors], axis=1), parents=tuple(tensors), backward_fn=backward)


# -- reductions ----------------------------------------------------------


def tsum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(a.values.sum(axis=axis, keepdims=keepdims), parents=(a,), backward_fn=backward)


def tmean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.values.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / n,)

    return Tensor(a.values.mean(axis=axis, keepdims=keepdims), parents=(a,), backward_fn=backward)


def l2_norm(a) -> Tensor:
    """Euclidean norm of the whole tensor, as a scalar."""
    return sqrt(tsum(mul(a, a)))


# -- composites ----------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Row-wise softmax, stabilized by max-subtraction (exp arguments <= 0)."""
    a = _as_tensor(a)
    shift = sub(a, Tensor(a.values.max(axis=axis, keepdims=True)))
    e = exp(shift)
    return div(e, tsum(e, axis=axis if axis != -1 else a.values.ndim - 1, keepdims=True))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    ax = axis if axis != -1 else a.values.ndim - 1
    shift = sub(a, Tensor(a.values.max(axis=ax, keepdims=True)))
    return sub(shift, log(tsum(exp(shift), axis=ax, keepdims=True)))


def logsumexp(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    m = a.values.max(axis=axis, keepdims=True)
    out = add(log(tsum(exp(sub(a, Tensor(m))), axis=axis, keepdims=True)), Tensor(m))
    return out if keepdims else reshape(out, tuple(n for i, n in enumerate(out.shape) if i != axis))


def dropout(a, keep_prob: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; keep_prob 1.0 is the identity (consumes no RNG)."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    a = _as_tensor(a)
    if keep_prob == 1.0:
        return a
    mask = (rng.random(a.shape) < keep_prob).astype(a.values.dtype) / keep_prob
    return Tensor(a.values * mask, parents=(a,), backward_fn=lambda g: (g * mask,))


def normalize_rows(a, eps: float = 1e-12) -> Tensor:
    """Scale each row of a 2-d tensor to unit L2 norm."""
    a = _as_tensor(a)
    norms = sqrt(add(tsum(mul(a, a), axis=1, keepdims=True), Tensor(np.asarray(eps, dtype=a.dtype))))
    return div(a, norms)


def cosine_similarity_matrix(a) -> Tensor:
    """Pairwise cosine similarities of the rows of a 2-d tensor."""
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeError("cosine_similarity_matrix", a.shape)
    n = normalize_rows(a)
    return matmul(n, transpose(n))


def cosine_similarity(a, b) -> Tensor:
    """Cosine similarity of two vectors, as a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("cosine_similarity", a.shape, b.shape)
    return div(tsum(mul(a, b)), mul(l2_norm(a), l2_norm(b)))
