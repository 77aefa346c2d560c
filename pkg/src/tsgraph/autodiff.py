"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values are plain numpy arrays (1-D vectors or 2-D matrices; a leading
batch axis is treated like any other axis). Recording is define-by-run:
while a Tape is active, any operation touching a tape-attached tensor
appends a node with a backward closure. `backward` replays the tape in
reverse and accumulates gradients per node, summing at fan-out.

Tensors are immutable values during a pass; a Tape has a single writer.
The active-tape stack is thread-local so independent tapes may run in
parallel threads.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation, DiagnosticError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "finite_difference_check",
    "primitive_forward",
    "matmul",
    "add",
    "sub",
    "mul",
    "concat",
    "sigmoid",
    "tanh",
    "exp",
    "reduce_sum",
    "reduce_mean",
    "scale",
    "narrow",
    "norm_exp",
    "zeros",
]


class Tensor:
    """Immutable dense float64 array, optionally attached to a tape."""

    __slots__ = ("data", "node_id")

    def __init__(self, data, node_id: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = "" if self.node_id is None else f", node={self.node_id}"
        return f"Tensor(shape={self.shape}{tag})"

    # Arithmetic sugar; constants auto-wrap and stay off the tape.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


class _Node:
    __slots__ = ("op", "out_id", "bwd")

    def __init__(self, op: str, out_id: int, bwd: Callable):
        self.op = op
        self.out_id = out_id
        self.bwd = bwd


_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Nodes are appended in execution order, so every node's inputs precede
    it; `backward` walks the list once in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.gradients: dict[int, np.ndarray] = {}
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def _fresh_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def watch(self, tensor: Tensor | np.ndarray) -> Tensor:
        """Attach a leaf (parameter) to this tape; returns the attached view."""
        t = _wrap(tensor)
        return Tensor(t.data, node_id=self._fresh_id())

    def _record(self, op: str, out_data: np.ndarray, bwd: Callable) -> Tensor:
        out_id = self._fresh_id()
        self.nodes.append(_Node(op, out_id, bwd))
        return Tensor(out_data, node_id=out_id)

    def grad(self, tensor: Tensor) -> np.ndarray:
        """Gradient for a watched/recorded tensor after `backward` ran.

        Tensors never reached from the loss get an all-zero gradient of
        matching shape.
        """
        if tensor.node_id is None:
            raise ContractViolation("tensor is not attached to this tape")
        g = self.gradients.get(tensor.node_id)
        return np.zeros_like(tensor.data) if g is None else g


def _emit(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], bwd_factory) -> Tensor:
    """Record `op` on the active tape when any input is attached."""
    tape = _active_tape()
    if tape is None or all(t.node_id is None for t in inputs):
        return Tensor(out_data)
    ids = tuple(t.node_id for t in inputs)
    pair_bwd = bwd_factory()

    def bwd(g: np.ndarray):
        return [
            (nid, grad)
            for nid, grad in zip(ids, pair_bwd(g))
            if nid is not None and grad is not None
        ]

    return tape._record(op, out_data, bwd)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix/vector product `a @ b` (or `a @ b.T` with `transpose_b`).

    Supports 1-D and 2-D operands; no higher ranks.
    """
    av, bv = a.data, b.data
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ContractViolation(
            f"matmul supports 1-D/2-D operands, got {av.shape} and {bv.shape}"
        )
    if transpose_b and bv.ndim != 2:
        raise ContractViolation("transpose_b requires a 2-D right operand")
    bm = bv.T if transpose_b else bv
    inner_a = av.shape[-1]
    inner_b = bm.shape[0]
    if inner_a != inner_b:
        raise ContractViolation(
            f"matmul inner dimensions disagree: {av.shape} vs "
            f"{bv.shape}{' (transposed)' if transpose_b else ''}"
        )
    out = av @ bm

    def factory():
        def bwd(g):
            if av.ndim == 2 and bv.ndim == 2:
                ga = g @ bm.T
                gbm = av.T @ g
                gb = gbm.T if transpose_b else gbm
            elif av.ndim == 1 and bv.ndim == 2:
                ga = g @ bm.T
                gbm = np.outer(av, g)
                gb = gbm.T if transpose_b else gbm
            elif av.ndim == 2 and bv.ndim == 1:
                ga = np.outer(g, bv)
                gb = av.T @ g
            else:  # 1-D dot 1-D
                ga = g * bv
                gb = g * av
            return (ga, gb)

        return bwd

    return _emit("matmul", out, (a, b), factory)


def add(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    try:
        out = av + bv
    except ValueError:
        raise ContractViolation(f"add shapes incompatible: {av.shape} vs {bv.shape}")

    def factory():
        sa, sb = av.shape, bv.shape

        def bwd(g):
            return (_unbroadcast(g, sa), _unbroadcast(g, sb))

        return bwd

    return _emit("add", out, (a, b), factory)


def sub(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    try:
        out = av - bv
    except ValueError:
        raise ContractViolation(f"sub shapes incompatible: {av.shape} vs {bv.shape}")

    def factory():
        sa, sb = av.shape, bv.shape

        def bwd(g):
            return (_unbroadcast(g, sa), _unbroadcast(-g, sb))

        return bwd

    return _emit("sub", out, (a, b), factory)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy-style broadcasting."""
    av, bv = a.data, b.data
    try:
        out = av * bv
    except ValueError:
        raise ContractViolation(f"mul shapes incompatible: {av.shape} vs {bv.shape}")

    def factory():
        def bwd(g):
            return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))

        return bwd

    return _emit("mul_elementwise", out, (a, b), factory)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(tensors)
    if not parts:
        raise ContractViolation("concat requires at least one tensor")
    datas = [t.data for t in parts]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ContractViolation(
            f"concat shapes incompatible along axis {axis}: "
            f"{[d.shape for d in datas]}"
        )

    def factory():
        ax = axis % out.ndim
        sizes = [d.shape[ax] for d in datas]
        offsets = np.cumsum(sizes)[:-1]

        def bwd(g):
            return tuple(np.split(g, offsets, axis=ax))

        return bwd

    return _emit("concat", out, parts, factory)


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def factory():
        def bwd(g):
            return (g * out * (1.0 - out),)

        return bwd

    return _emit("sigmoid", out, (x,), factory)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def factory():
        def bwd(g):
            return (g * (1.0 - out * out),)

        return bwd

    return _emit("tanh", out, (x,), factory)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def factory():
        def bwd(g):
            return (g * out,)

        return bwd

    return _emit("exp", out, (x,), factory)


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def factory():
        shape = x.data.shape

        def bwd(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return bwd

    return _emit("sum", out, (x,), factory)


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def factory():
        shape = x.data.shape
        count = x.data.size if axis is None else shape[axis]

        def bwd(g):
            g = np.asarray(g) / count
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return bwd

    return _emit("mean", out, (x,), factory)


def scale(x: Tensor, factor: float) -> Tensor:
    k = float(factor)
    out = x.data * k

    def factory():
        def bwd(g):
            return (g * k,)

        return bwd

    return _emit("scale", out, (x,), factory)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` elements along `axis`."""
    dim = x.data.shape[axis] if x.data.ndim else 0
    if start < 0 or length < 1 or start + length > dim:
        raise ContractViolation(
            f"slice [{start}:{start + length}) out of range for axis {axis} "
            f"of shape {x.data.shape}"
        )
    index = [np.s_[:]] * x.data.ndim
    index[axis] = np.s_[start : start + length]
    index = tuple(index)
    out = x.data[index]

    def factory():
        shape = x.data.shape

        def bwd(g):
            full = np.zeros(shape)
            full[index] = g
            return (full,)

        return bwd

    return _emit("slice", out, (x,), factory)


def norm_exp(x: Tensor, axis: int = -1) -> Tensor:
    """Fused exp-and-normalize along `axis`: exp(x) / sum(exp(x)).

    Scores here come from bounded activations, so no max-shift is applied.
    """
    e = np.exp(x.data)
    out = e / e.sum(axis=axis, keepdims=True)

    def factory():
        def bwd(g):
            inner = (g * out).sum(axis=axis, keepdims=True)
            return (out * (g - inner),)

        return bwd

    return _emit("norm_exp", out, (x,), factory)


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul_elementwise": mul,
    "concat": lambda inputs, **kw: concat(inputs, **kw),
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "scale": scale,
    "slice": narrow,
}

_VARIADIC = {"concat"}


def primitive_forward(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Apply a named primitive to `inputs`; unknown kinds are rejected."""
    fn = _PRIMITIVES.get(kind)
    if fn is None:
        raise ContractViolation(
            f"unknown primitive kind {kind!r}; expected one of "
            f"{sorted(_PRIMITIVES)}"
        )
    if kind in _VARIADIC:
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass and gradient checking
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Populate gradients of a scalar `loss` w.r.t. every reachable node.

    Walks tape nodes in reverse topological (= recorded) order; fan-out
    contributions accumulate by summation. Returns the node-id keyed
    gradient map, also stored on `tape.gradients`.
    """
    if loss.node_id is None:
        raise ContractViolation("loss tensor is not attached to the tape")
    if loss.data.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out_id)
        if g is None:
            continue
        for nid, contrib in node.bwd(g):
            prev = grads.get(nid)
            grads[nid] = contrib if prev is None else prev + contrib
    tape.gradients = grads
    return grads


def finite_difference_check(
    f: Callable[..., Tensor],
    params: Tensor | Iterable[Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` takes the parameter tensors and returns a scalar Tensor. The error
    per element is |analytic - fd| / max(1, |analytic|); the max over all
    elements of all parameters is returned.
    """
    if epsilon <= 0:
        raise ContractViolation("epsilon must be positive")
    plist = [params] if isinstance(params, Tensor) else [_wrap(p) for p in params]

    with Tape() as tape:
        leaves = [tape.watch(p) for p in plist]
        out = f(*leaves)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractViolation("f must return a scalar tensor")
    if not np.isfinite(out.data).all():
        raise DiagnosticError("f returned a non-finite value at the base point")
    backward(tape, out)
    analytic = [tape.grad(leaf) for leaf in leaves]

    def evaluate(tensors: list[Tensor]) -> float:
        value = f(*tensors)
        v = float(value.data)
        if not np.isfinite(v):
            raise DiagnosticError("f returned a non-finite value at a probe point")
        return v

    worst = 0.0
    for i, p in enumerate(plist):
        flat = p.data.ravel()
        for j in range(flat.size):
            bumped = flat.copy()
            bumped[j] += epsilon
            plus = evaluate(
                [Tensor(bumped.reshape(p.shape)) if k == i else q for k, q in enumerate(plist)]
            )
            bumped[j] -= 2.0 * epsilon
            minus = evaluate(
                [Tensor(bumped.reshape(p.shape)) if k == i else q for k, q in enumerate(plist)]
            )
            fd = (plus - minus) / (2.0 * epsilon)
            a = analytic[i].ravel()[j]
            err = abs(a - fd) / max(1.0, abs(a))
            if err > worst:
                worst = err
    return worst
