"""Dense float64 tensors, a recording tape and reverse-mode gradients.

Primitives live in :mod:`sdalab.ops`; each one records a node on the active
:class:`Tape` whenever one of its inputs requires a gradient.  Calling
:func:`backprop` walks the tape backwards and returns fresh gradient arrays,
so the same tape can be replayed any number of times.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shape."""

    def __init__(self, primitive: str, a, b, detail: str = ""):
        self.primitive = primitive
        self.shapes = (tuple(a), tuple(b))
        msg = f"{primitive}: incompatible shapes {tuple(a)} and {tuple(b)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN/Inf in its value or gradient."""

    def __init__(self, primitive: str, phase: str):
        self.primitive = primitive
        self.phase = phase
        super().__init__(f"non-finite {phase} produced by primitive '{primitive}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(name or "tensor", "value")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the primitives themselves are in ops
    def __add__(self, other):
        from sdalab import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from sdalab import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from sdalab import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from sdalab import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from sdalab import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from sdalab import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from sdalab import ops
        return ops.index(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    primitive: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives evaluated inside the block are
    appended in execution order.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape() -> Tape | None:
    tapes = _stack()
    return tapes[-1] if tapes else None


def record(primitive: str, out_data: np.ndarray, inputs: Iterable[Tensor], vjp) -> Tensor:
    """Wrap a primitive result and register it on the active tape."""
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(primitive, "value")
    inputs = tuple(inputs)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = needs
    out.name = None
    tape = active_tape()
    if needs and tape is not None:
        tape.nodes.append(Node(primitive, out, inputs, vjp))
    return out


def evaluate_forward(program: Callable[..., Tensor], **inputs) -> tuple[Tensor, Tape]:
    """Run ``program(**inputs)`` under a fresh tape and return ``(output, tape)``."""
    with Tape() as tape:
        out = program(**inputs)
    return out, tape


class ParamSet:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        self._names: list[str] = []
        self._tensors: dict[str, Tensor] = {}
        for name, t in items:
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._names.append(name)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __len__(self):
        return len(self._names)

    def names(self) -> list[str]:
        return list(self._names)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._tensors[n]) for n in self._names]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: self._tensors[n].shape for n in self._names}

    def count(self) -> int:
        return int(sum(self._tensors[n].data.size for n in self._names))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: self._tensors[n].data.copy() for n in self._names}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for n in self._names:
            v = values[n]
            if v.shape != self._tensors[n].shape:
                raise ShapeError("ParamSet.load", self._tensors[n].shape, v.shape, n)
            self._tensors[n].data = np.array(v, dtype=DTYPE)

    def copy(self) -> ParamSet:
        return ParamSet((n, Tensor(self._tensors[n].data.copy())) for n in self._names)

    def flat(self) -> np.ndarray:
        return np.concatenate([self._tensors[n].data.ravel() for n in self._names])


def backprop(tape: Tape, loss: Tensor, params: ParamSet | None = None) -> dict[str, np.ndarray]:
    """Reverse pass from scalar ``loss``.

    Returns one gradient array per parameter of ``params`` (zeros for
    parameters not on the path) and stores it on ``tensor.grad`` as well.
    """
    if loss.data.size != 1:
        raise ValueError(f"backprop needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        in_grads = node.vjp(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if not np.all(np.isfinite(ig)):
                raise NonFiniteError(node.primitive, "gradient")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    if params is None:
        return {}
    out = {}
    for name, t in params.items():
        g = grads.get(id(t))
        g = np.zeros_like(t.data) if g is None else np.array(g, dtype=DTYPE).reshape(t.shape)
        t.grad = g
        out[name] = g
    return out
