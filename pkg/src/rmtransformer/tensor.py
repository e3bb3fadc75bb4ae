"""Dense tensor with reverse-mode differentiation.

Every differentiable op lives in :mod:`rmtransformer.ops`; this module holds the
graph node type, the precision/no-grad switches and the backward sweep.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_state = {"dtype": np.float32, "grad_enabled": True}


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def double_precision() -> Iterator[None]:
    """Create new tensors in float64 inside the block (verification mode)."""
    prev = _state["dtype"]
    _state["dtype"] = np.float64
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def grad_enabled() -> bool:
    return _state["grad_enabled"]


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-d array (rank <= 4 in practice) plus an optional gradient buffer.

    ``node`` is ``(parents, backward_fn)`` for op outputs and ``None`` for
    leaves. ``backward_fn`` maps the output gradient to one gradient (or
    ``None``) per parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.node = None
        needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out.node = (tuple(parents), backward_fn)
        return out

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar, implemented in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node[0]:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable trainable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad += g
            continue
        parents, fn = t.node
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.data.shape:
                raise RuntimeError(f"gradient shape {pg.shape} != tensor shape {p.data.shape}")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


class ParamSet:
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self, tensors: Optional[dict] = None):
        self._params: dict = {}
        for name, t in (tensors or {}).items():
            self[name] = t

    def __setitem__(self, name: str, t: Tensor) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list:
        return sorted(self._params)

    def __iter__(self):
        return iter(self.names())

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)


class ParamScope:
    """Read-only view that prepends ``prefix.`` to lookups."""

    def __init__(self, params: ParamSet, prefix: str):
        self.params = params
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self.params, f"{self.prefix}.{prefix}")
