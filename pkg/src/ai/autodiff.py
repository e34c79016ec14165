"""
Dense-tensor computation graph with reverse-mode differentiation.

Values are float64 numpy arrays. Every primitive builds a Node holding its
value, its inputs and a vector-Jacobian product; `backward` walks the graph
in reverse topological order and accumulates gradients.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence]


class ShapeError(ValueError):
    """Operand shapes are incompatible for a primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or infinity."""


class Node:
    """One value in the graph. Leaves have no op; constants carry no gradient."""

    def __init__(self, value: np.ndarray, op: str = 'leaf', inputs: Tuple['Node', ...] = (),
                 vjp: Optional[Callable[[np.ndarray], Tuple[np.ndarray, ...]]] = None,
                 requires_grad: bool = False, name: Optional[str] = None):
        self.value = value
        self.op = op
        self.inputs = inputs
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._vjp = vjp

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"


NodeLike = Union[Node, ArrayLike]


def as_tensor(value: ArrayLike) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteError("tensor contains NaN or infinity")
    return arr


def leaf(value: ArrayLike, name: Optional[str] = None) -> Node:
    """Trainable input: gradients are accumulated into it."""
    return Node(as_tensor(value), requires_grad=True, name=name)


def constant(value: ArrayLike) -> Node:
    return Node(as_tensor(value), op='constant')


def lift(x: NodeLike) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(op: str, value: np.ndarray, inputs: Tuple[Node, ...],
          vjp: Callable[[np.ndarray], Tuple[np.ndarray, ...]]) -> Node:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    return Node(value, op=op, inputs=inputs, vjp=vjp,
                requires_grad=any(i.requires_grad for i in inputs))


def _require_2d(op: str, *nodes: Node):
    for node in nodes:
        if node.value.ndim != 2:
            raise ShapeError(f"{op} expects 2-D operands, got shape {node.shape}")


def _broadcast_shape(op: str, a: Node, b: Node) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: NodeLike, b: NodeLike) -> Node:
    a, b = lift(a), lift(b)
    _require_2d('matmul', a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _make('matmul', av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: NodeLike) -> Node:
    a = lift(a)
    _require_2d('transpose', a)
    return _make('transpose', a.value.T.copy(), (a,), lambda g: (g.T,))


def add(a: NodeLike, b: NodeLike) -> Node:
    """Elementwise sum; a row vector (or scalar) operand is broadcast over rows."""
    a, b = lift(a), lift(b)
    _broadcast_shape('add', a, b)
    sa, sb = a.shape, b.shape
    return _make('add', a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def subtract(a: NodeLike, b: NodeLike) -> Node:
    a, b = lift(a), lift(b)
    _broadcast_shape('subtract', a, b)
    sa, sb = a.shape, b.shape
    return _make('subtract', a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def multiply_elementwise(a: NodeLike, b: NodeLike) -> Node:
    a, b = lift(a), lift(b)
    _broadcast_shape('multiply_elementwise', a, b)
    av, bv = a.value, b.value
    return _make('multiply_elementwise', av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scalar_multiply(a: NodeLike, c: float) -> Node:
    a = lift(a)
    c = float(c)
    return _make('scalar_multiply', a.value * c, (a,), lambda g: (g * c,))


def relu(a: NodeLike) -> Node:
    a = lift(a)
    mask = (a.value > 0).astype(np.float64)  # derivative at 0 is 0
    return _make('relu', a.value * mask, (a,), lambda g: (g * mask,))


def softmax_rows(a: NodeLike) -> Node:
    a = lift(a)
    _require_2d('softmax_rows', a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)
    return _make('softmax_rows', s, (a,), vjp)


def row_mean(a: NodeLike) -> Node:
    """Per-channel mean over the rows, kept as a 1 x F row."""
    a = lift(a)
    _require_2d('row_mean', a)
    n = a.shape[0]
    shape = a.shape
    return _make('row_mean', a.value.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),))


def row_variance(a: NodeLike) -> Node:
    """Per-channel population variance over the rows (divide by N), 1 x F."""
    a = lift(a)
    _require_2d('row_variance', a)
    n = a.shape[0]
    centered = a.value - a.value.mean(axis=0, keepdims=True)
    var = (centered * centered).mean(axis=0, keepdims=True)
    return _make('row_variance', var, (a,), lambda g: (g * centered * (2.0 / n),))


def reduce_mean_rows(a: NodeLike) -> Node:
    """Mean pooling over the rows (1 x F)."""
    a = lift(a)
    _require_2d('reduce_mean_rows', a)
    n = a.shape[0]
    shape = a.shape
    return _make('reduce_mean_rows', a.value.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),))


def reduce_max_rows(a: NodeLike) -> Node:
    """Max pooling over the rows (1 x F); the gradient goes to the first maximal row."""
    a = lift(a)
    _require_2d('reduce_max_rows', a)
    argmax = a.value.argmax(axis=0)
    cols = np.arange(a.shape[1])
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[argmax, cols] = g.reshape(-1)
        return (out,)
    return _make('reduce_max_rows', a.value[argmax, cols][None, :], (a,), vjp)


def reduce_sum(a: NodeLike) -> Node:
    """Sum of every element, as a 1 x 1 tensor."""
    a = lift(a)
    shape = a.shape
    return _make('reduce_sum', np.array([[a.value.sum()]]), (a,),
                 lambda g: (np.full(shape, g.reshape(-1)[0]),))


def concat_columns(parts: Sequence[NodeLike]) -> Node:
    parts = [lift(p) for p in parts]
    _require_2d('concat_columns', *parts)
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeError(f"concat_columns: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _make('concat_columns', np.concatenate([p.value for p in parts], axis=1), tuple(parts),
                 lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def concat_rows(parts: Sequence[NodeLike]) -> Node:
    parts = [lift(p) for p in parts]
    _require_2d('concat_rows', *parts)
    if len({p.shape[1] for p in parts}) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    return _make('concat_rows', np.concatenate([p.value for p in parts], axis=0), tuple(parts),
                 lambda g: tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(parts))))


def slice_columns(a: NodeLike, start: int, stop: int) -> Node:
    a = lift(a)
    _require_2d('slice_columns', a)
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_columns: [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)
    return _make('slice_columns', a.value[:, start:stop].copy(), (a,), vjp)


def sqrt(a: NodeLike) -> Node:
    a = lift(a)
    if (a.value < 0).any():
        raise NonFiniteError("sqrt of a negative value")
    root = np.sqrt(a.value)
    return _make('sqrt', root, (a,), lambda g: (g * 0.5 / root,))


def reciprocal_sqrt_shifted(a: NodeLike, eps: float) -> Node:
    """1 / sqrt(x + eps)."""
    a = lift(a)
    shifted = a.value + eps
    if (shifted <= 0).any():
        raise NonFiniteError("reciprocal_sqrt_shifted of a non-positive value")
    out = 1.0 / np.sqrt(shifted)
    return _make('reciprocal_sqrt_shifted', out, (a,), lambda g: (g * -0.5 * out / shifted,))


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def _topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node, wrt: Sequence[Node] = ()) -> List[np.ndarray]:
    """
    Accumulate d(loss)/d(node) into `.grad` of every node that needs one.
    Returns the gradients of `wrt` in order; unreached leaves get zeros.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological_order(loss)):
        g = grads.get(id(node))
        if g is None:
            continue
        node.grad = g
        if node._vjp is None or not node.requires_grad:
            continue
        for parent, pg in zip(node.inputs, node._vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    out = []
    for node in wrt:
        if id(node) not in grads:
            node.grad = np.zeros_like(node.value)
        out.append(node.grad)
    return out


def finite_difference_check(f: Callable[[Dict[str, Node]], Node], params: Dict[str, np.ndarray],
                            h: float = 1e-6,
                            analytic_hook: Optional[Callable[[Dict[str, np.ndarray]], Dict[str, np.ndarray]]] = None
                            ) -> float:
    """
    Compare analytic gradients of the scalar f(params) with central differences.
    Returns max over coordinates of |a - n| / max(1, |a|, |n|).
    Inputs placing a relu kink within h of a sample point are the caller's to avoid.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")

    leaves = {name: leaf(value, name) for name, value in params.items()}
    out = f(leaves)
    if not np.isfinite(out.value).all():
        raise NonFiniteError("f is not finite at the check point")
    analytic = dict(zip(leaves, backward(out, list(leaves.values()))))
    if analytic_hook is not None:
        analytic = analytic_hook(analytic)

    def evaluate(values: Dict[str, np.ndarray]) -> float:
        result = f({k: constant(v) for k, v in values.items()}).item()
        if not np.isfinite(result):
            raise NonFiniteError("f is not finite near the check point")
        return result

    worst = 0.0
    shifted = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    for name, value in shifted.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            f_plus = evaluate(shifted)
            flat[i] = original - h
            f_minus = evaluate(shifted)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = grad[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst
