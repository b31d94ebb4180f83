"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Operations from wavediff.numerics.ops build a
DAG; backward() walks it in reverse topological order and accumulates
gradients into parameter leaves. Accumulation order is deterministic, and
gradients add across backward calls until the store is zeroed.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import buffers

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward values only)."""
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
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_node(data, parents, backward_fn) -> Tensor:
    """Result tensor; records the graph edge only when gradients can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # intermediate nodes accumulate in the engine, not here
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable parameter's .grad."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                held = grads.get(id(parent))
                if held is None:
                    grads[id(parent)] = pg
                elif pg.shape == held.shape:
                    grads[id(parent)] = np.add(
                        held, pg, out=buffers.take(held.shape, held.dtype)
                    )
                else:
                    grads[id(parent)] = held + pg
        else:
            # leaf parameter: persistent accumulator
            node.grad += g


class ParamStore:
    """Named parameter tensors with persistent gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0.0

    def total_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into existing parameters; names and shapes must match."""
        for name, value in arrays.items():
            if name not in self._params:
                raise KeyError(f"unknown tensor name {name!r} for this configuration")
            target = self._params[name]
            if target.data.shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: have {target.data.shape}, got {value.shape}"
                )
            target.data[...] = value.astype(target.data.dtype, copy=False)


def grad(loss: Tensor, params: ParamStore) -> dict[str, np.ndarray]:
    """Backpropagate and return a view of the accumulated parameter gradients."""
    backward(loss)
    return {name: t.grad for name, t in params.items()}
