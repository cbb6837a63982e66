"""Dense-tensor values with reverse-mode gradients over a fixed op set.

Not a general autodiff framework: the op vocabulary lives in ops.py and is
exactly what the rest of the package needs. Values are numpy arrays, float32
in training mode and float64 in verification mode. Every op output is checked
for NaN/Inf unless finite checks are switched off.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np

from idt.errors import DomainError, ShapeError

_FINITE_CHECKS = True
_GRAD_ENABLED = True


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


@contextmanager
def no_grad():
    """Disable graph construction; forwards inside run without tape overhead."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(arr: np.ndarray, what: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite values in {what}")


class Tensor:
    """A numpy array plus an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        _check_finite(arr, "tensor data")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar. Grads accumulate on every
        requires_grad tensor reachable through the tape."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)
                if _FINITE_CHECKS:
                    for p in node._parents:
                        if p.grad is not None:
                            _check_finite(p.grad, "gradient")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={'set' if self.grad is not None else 'none'})"


def make_result(
    data: np.ndarray,
    parents: Iterable[Tensor],
    vjp: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap an op output, connecting it to the tape when gradients are on."""
    parents = tuple(parents)
    track = _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents)
    if track:
        return Tensor(data, requires_grad=False, _parents=parents, _vjp=vjp)
    return Tensor(data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
