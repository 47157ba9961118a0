"""Reverse-mode autodiff over dense float64 numpy arrays.

Every differentiable quantity in the pipeline is a Tensor: an ndarray plus
an optional record of how it was produced. Ops build the forward value
eagerly and stash a closure that routes upstream gradients to the parents.
backward() walks the recorded graph once in reverse topological order.

Only what the pipeline needs is implemented: dense ops on 1-D/2-D arrays,
no views, no in-place math on tracked values, float64 throughout.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "as_tensor",
    "backward",
    "no_grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "transpose_last2",
    "reshape",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "pow_const",
    "softmax_last",
    "sum_",
    "mean",
    "l2norm",
    "stack_rows",
    "concat_rows",
    "take_rows",
    "row_scatter_add",
    "embed_submatrix",
    "stack_pad_square",
    "weighted_block_scatter",
    "pick",
    "dropout",
    "clamp",
    "min_reduce",
    "max_reduce",
    "min_last",
    "max_last",
    "cross_entropy_with_logits",
]


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


class Tensor:
    """A node in the differentiable computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


@contextmanager
def no_grad():
    """Skip graph recording inside the block (forward values unchanged)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _make(data, parents, backward_rule) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_rule
    return out


# gradients of the backward pass in flight; maps id(tensor) -> running grad
_pass_grads: dict[int, np.ndarray] | None = None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad or _pass_grads is None:
        return
    cur = _pass_grads.get(id(t))
    _pass_grads[id(t)] = g if cur is None else cur + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(root: Tensor) -> None:
    """Populate .grad of every requires-grad ancestor of a scalar root.

    Repeated calls accumulate into existing grads.
    """
    global _pass_grads
    if root.data.size != 1:
        raise ShapeError(f"backward() needs a scalar root, got shape {root.shape}")
    # iterative DFS so deep graphs cannot hit the recursion limit
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    _pass_grads = grads
    try:
        for node in reversed(topo):
            g = grads.get(id(node))
            if g is not None and node._backward is not None:
                node._backward(g)
    finally:
        _pass_grads = None
    # .grad may alias a sibling's buffer until zeroed; nothing mutates grads
    # in place, so sharing is safe and saves one copy per node
    for node in topo:
        g = grads.get(id(node))
        if g is not None and node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def rule(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def rule(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def rule(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands plus the batched forms
    (B,m,k)@(k,n) and (B,m,k)@(B,k,n)."""
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 3 or b.ndim > 3 or \
            (a.ndim < 3 and b.ndim == 3):
        raise ShapeError(f"unsupported matmul operands: {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 1:
        raise ShapeError(f"unsupported matmul operands: {a.shape} @ {b.shape}")
    inner_b = b.data.shape[0] if b.ndim < 3 else b.data.shape[1]
    if a.data.shape[-1] != inner_b or (a.ndim == 3 and b.ndim == 3
                                       and a.data.shape[0] != b.data.shape[0]):
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def rule(g):
        if a.ndim == 3 and b.ndim == 3:
            _accum(a, g @ b.data.transpose(0, 2, 1))
            _accum(b, a.data.transpose(0, 2, 1) @ g)
        elif a.ndim == 3 and b.ndim == 2:
            _accum(a, g @ b.data.T)
            bm, k = a.data.shape[0] * a.data.shape[1], a.data.shape[2]
            _accum(b, a.data.reshape(bm, k).T @ g.reshape(bm, -1))
        elif a.ndim == 2 and b.ndim == 2:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        elif a.ndim == 2 and b.ndim == 1:
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            _accum(a, b.data @ g)
            _accum(b, np.outer(a.data, g))
        else:  # vector dot
            _accum(a, g * b.data)
            _accum(b, g * a.data)

    return _make(data, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: _accum(a, g.T))


def transpose_last2(a: Tensor) -> Tensor:
    """Swap the trailing two axes of a stacked matrix tensor."""
    if a.ndim != 3:
        raise ShapeError(f"transpose_last2 needs a 3-D tensor, got shape {a.shape}")
    return _make(a.data.transpose(0, 2, 1), (a,),
                 lambda g: _accum(a, g.transpose(0, 2, 1)))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,),
                 lambda g: _accum(a, g.reshape(a.data.shape)))


# ---------------------------------------------------------------------------
# pointwise


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: _accum(a, g * mask))


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _make(s, (a,), lambda g: _accum(a, g * s * (1.0 - s)))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: _accum(a, g * e))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def pow_const(a: Tensor, p: float) -> Tensor:
    data = a.data ** p
    return _make(data, (a,), lambda g: _accum(a, g * p * a.data ** (p - 1.0)))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: _accum(a, g * inside))


def dropout(a: Tensor, rate: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scaled at train time so eval is the identity."""
    if not train or rate == 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.data.shape) < keep) / keep
    return _make(a.data * mask, (a,), lambda g: _accum(a, g * mask))


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), rule)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if a.data.size == 0:
        raise ShapeError("mean of an empty tensor")
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), as_tensor(1.0 / n))


def l2norm(a: Tensor, eps: float = 0.0) -> Tensor:
    """Euclidean norm as a scalar; eps > 0 smooths the zero-vector pole."""
    sq = float((a.data * a.data).sum()) + eps
    nrm = math.sqrt(sq)
    if nrm == 0.0:
        raise ValueError("l2norm of an exactly zero vector is not differentiable")
    return _make(np.asarray(nrm), (a,), lambda g: _accum(a, (float(g) / nrm) * a.data))


def min_reduce(a: Tensor) -> Tensor:
    idx = int(np.argmin(a.data))  # first occurrence on ties

    def rule(g):
        gg = np.zeros_like(a.data)
        gg.flat[idx] = float(g)
        _accum(a, gg)

    return _make(np.asarray(a.data.flat[idx]), (a,), rule)


def max_reduce(a: Tensor) -> Tensor:
    idx = int(np.argmax(a.data))

    def rule(g):
        gg = np.zeros_like(a.data)
        gg.flat[idx] = float(g)
        _accum(a, gg)

    return _make(np.asarray(a.data.flat[idx]), (a,), rule)


def _extreme_last(a: Tensor, pick_fn) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"row-wise reduce needs a matrix, got shape {a.shape}")
    idx = pick_fn(a.data, axis=1)  # first occurrence on ties
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]

    def rule(g):
        gg = np.zeros_like(a.data)
        gg[rows, idx] = g
        _accum(a, gg)

    return _make(data, (a,), rule)


def min_last(a: Tensor) -> Tensor:
    """Row-wise minimum of a matrix, one subgradient per row."""
    return _extreme_last(a, np.argmin)


def max_last(a: Tensor) -> Tensor:
    return _extreme_last(a, np.argmax)


def softmax_last(a: Tensor) -> Tensor:
    """Softmax over the last axis of a 1-D or 2-D tensor."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accum(a, s * (g - dot))

    return _make(s, (a,), rule)


# ---------------------------------------------------------------------------
# structural ops


def stack_rows(rows: list[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a matrix."""
    if not rows:
        raise ShapeError("stack_rows of an empty list")
    for r in rows:
        if r.ndim != 1 or r.shape != rows[0].shape:
            raise ShapeError("stack_rows needs equal-length vectors")
    data = np.stack([r.data for r in rows])

    def rule(g):
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _make(data, tuple(rows), rule)


def concat_rows(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 0."""
    if not parts:
        raise ShapeError("concat_rows of an empty list")
    data = np.concatenate([p.data for p in parts], axis=0)

    def rule(g):
        ofs = 0
        for p in parts:
            _accum(p, g[ofs:ofs + p.data.shape[0]])
            ofs += p.data.shape[0]

    return _make(data, tuple(parts), rule)


def take_rows(a: Tensor, idx, unique: bool = False) -> Tensor:
    """Gather rows (axis 0) by integer index.

    unique=True asserts the caller passes distinct indices, enabling a much
    faster scatter than np.add.at in the backward pass.
    """
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def rule(g):
        gg = np.zeros_like(a.data)
        if unique:
            gg[idx] = g
        else:
            np.add.at(gg, idx, g)
        _accum(a, gg)

    return _make(data, (a,), rule)


def row_scatter_add(a: Tensor, idx, n: int, unique: bool = False) -> Tensor:
    """Scatter-add the rows of a into a zero (n, ...) tensor at positions idx."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape[0] != a.data.shape[0]:
        raise ShapeError("row_scatter_add: one index per row required")
    data = np.zeros((n,) + a.data.shape[1:])
    if unique:
        data[idx] = a.data
    else:
        np.add.at(data, idx, a.data)
    return _make(data, (a,), lambda g: _accum(a, g[idx]))


def embed_submatrix(a: Tensor, idx, n: int) -> Tensor:
    """Place an (m, m) block into an (n, n) zero matrix at rows/cols idx."""
    idx = np.asarray(idx, dtype=np.intp)
    m = a.data.shape[0]
    if a.ndim != 2 or a.data.shape[1] != m or idx.shape[0] != m:
        raise ShapeError(f"embed_submatrix: square block and matching index needed, got {a.shape}")
    data = np.zeros((n, n))
    data[np.ix_(idx, idx)] = a.data
    return _make(data, (a,), lambda g: _accum(a, g[np.ix_(idx, idx)]))


def stack_pad_square(mats: list[Tensor], size: int) -> Tensor:
    """Stack square matrices into a zero-padded (B, size, size) tensor."""
    data = np.zeros((len(mats), size, size))
    for i, t in enumerate(mats):
        if t.ndim != 2 or t.data.shape[0] != t.data.shape[1] or t.data.shape[0] > size:
            raise ShapeError(f"stack_pad_square: bad block shape {t.shape}")
        n = t.data.shape[0]
        data[i, :n, :n] = t.data

    def rule(g):
        for i, t in enumerate(mats):
            n = t.data.shape[0]
            _accum(t, g[i, :n, :n])

    return _make(data, tuple(mats), rule)


def weighted_block_scatter(stack: Tensor, entries, weights: Tensor, n: int) -> Tensor:
    """Sum of weighted view blocks placed into an (n, n) zero matrix.

    entries is a list of (stack_row, node_ids); block k is the leading
    (m_k, m_k) window of stack[stack_row] (stacks are zero-padded), scaled by
    weights[k] and scatter-added at rows/cols node_ids.
    """
    if stack.ndim != 3:
        raise ShapeError(f"weighted_block_scatter needs a 3-D stack, got {stack.shape}")
    if len(entries) != weights.data.shape[0]:
        raise ShapeError("one weight per scattered block required")
    grids = []
    data = np.zeros((n, n))
    for k, (row, nodes) in enumerate(entries):
        m = len(nodes)
        grid = np.ix_(nodes, nodes)
        grids.append((row, m, grid))
        data[grid] += weights.data[k] * stack.data[row, :m, :m]

    def rule(g):
        gw = np.zeros_like(weights.data)
        gs = np.zeros_like(stack.data)
        for k, (row, m, grid) in enumerate(grids):
            block = g[grid]
            gw[k] = (block * stack.data[row, :m, :m]).sum()
            gs[row, :m, :m] += weights.data[k] * block
        _accum(weights, gw)
        _accum(stack, gs)

    return _make(data, (stack, weights), rule)


def pick(a: Tensor, i: int) -> Tensor:
    """Select one element of a 1-D tensor as a scalar."""
    if a.ndim != 1:
        raise ShapeError(f"pick needs a vector, got shape {a.shape}")

    def rule(g):
        gg = np.zeros_like(a.data)
        gg[i] = float(g)
        _accum(a, gg)

    return _make(np.asarray(a.data[i]), (a,), rule)


# ---------------------------------------------------------------------------
# losses


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of an (n, C) logit matrix against integer labels."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (n, C) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.data.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logit rows but labels shape {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def rule(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        _accum(logits, (float(g) / n) * grad)

    return _make(np.asarray(loss), (logits,), rule)
