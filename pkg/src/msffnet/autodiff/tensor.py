"""Tensor container, computation tape and reverse-mode backward pass."""
from __future__ import annotations

import contextlib
import itertools
import weakref
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPES = {"float32": np.float32, "float64": np.float64}
_dtype = np.float32
_grad_enabled = True
_node_counter = itertools.count()


def set_precision(mode: str) -> None:
    """Select the global numeric mode ("float32" for training, "float64" for checks)."""
    global _dtype
    try:
        _dtype = _DTYPES[mode]
    except KeyError:
        raise ValueError(f"unknown numeric mode {mode!r}; expected one of {sorted(_DTYPES)}") from None


def get_precision() -> str:
    return np.dtype(_dtype).name


def default_dtype():
    return _dtype


@contextlib.contextmanager
def precision(mode: str) -> Iterator[None]:
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. for inference on full-size images."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense array with an optional gradient.

    Network activations are laid out N x C x H x W; losses are 0-d.
    """

    __array_priority__ = 100  # keep ndarray <op> Tensor dispatching to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a constant")
        from . import ops
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def _scalar_error(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


@dataclass(eq=False)
class Node:
    """One recorded op: its inputs, a weak handle on its output, and the vector-Jacobian product."""

    op: str
    inputs: tuple[Tensor, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    output: Callable[[], Tensor | None] = field(default=lambda: None)
    seq: int = field(default_factory=lambda: next(_node_counter))


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; attach a tape node when any input needs a gradient."""
    out = Tensor(out_data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, tuple(inputs), backward_fn)
        node.output = weakref.ref(out)
        out._node = node
    return out


@dataclass
class ComputationTape:
    """Nodes reachable from a root, in topological order (inputs before consumers)."""

    nodes: list[Node]

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputationTape":
        nodes: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            node = t._node
            if node is None:
                continue
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((t, True))
            for parent in node.inputs:
                if parent._node is not None and id(parent._node) not in seen:
                    stack.append((parent, False))
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> ComputationTape:
    """Populate ``.grad`` on every requires_grad leaf reachable from a scalar loss.

    Leaf gradients accumulate across uses within one pass and across calls.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad=True")
    if loss._node is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return ComputationTape([])
    tape = ComputationTape.from_root(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        out = node.output()
        if out is None:
            continue
        g = pending.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                t.grad = np.array(gi, dtype=t.data.dtype) if t.grad is None else t.grad + gi
            else:
                key = id(t)
                pending[key] = gi if key not in pending else pending[key] + gi
    return tape
