"""Minimal tape-based autodiff over numpy arrays (NCHW layout)."""

from __future__ import annotations

import numpy as np

_ACTIVE_TAPE = None


class Tensor:
    """Array value with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """Same data, cut from the tape."""
        return Tensor(self.data, requires_grad=False)

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a name and an initializer record."""

    __slots__ = ("name", "init")

    def __init__(self, data, name: str, init: str = ""):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name
        self.init = init

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Ordered record of differentiable operations.

    Operations executed inside ``with Tape() as tape:`` append a backward
    closure; ``tape.backward(loss)`` replays them in exact reverse order,
    accumulating gradients additively into every tensor that requires them.
    """

    def __init__(self):
        self._records: list = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; nesting is not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._records)

    def record(self, backward_fn) -> None:
        self._records.append(backward_fn)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._records):
            fn()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


def record_op(out: Tensor, backward_fn) -> None:
    """Register a backward closure for ``out`` on the active tape, if any."""
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        def guarded():
            if out.grad is not None:
                backward_fn(out.grad)

        tape.record(guarded)
