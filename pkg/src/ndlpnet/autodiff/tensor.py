"""Dense float tensors with a reverse-mode gradient tape.

Conventions used throughout the package:

* image-like tensors are laid out channels x height x width; a batch, when
  present, is an extra leading extent,
* the default element type is float32; gradient checking runs in float64,
* there is no implicit broadcasting -- binary ops require equal shapes, and
  the few broadcasts the network needs (scalar, per-channel vector) are
  separate, explicitly named ops.

Differentiable ops record themselves on the active :class:`Tape` in execution
order.  ``Tape.backward`` replays the records strictly in reverse and sums
gradient contributions, so a value consumed by two branches receives the sum
of both branch gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operands have incompatible shapes or extents."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a tensor; surfaced instead of propagated."""


class TapeError(RuntimeError):
    """Backward was misused (no records, non-scalar loss, double backward)."""


class Tensor:
    """A dense N-d array of real values, optionally tracked for gradients.

    ``grad`` is lazily allocated by backward passes and always matches the
    value shape.  Tensors are plain values: nothing here is thread-affine,
    only the tape is.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor holds NaN or Inf values")
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

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
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """A view of the same values with gradient tracking severed."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # Thin operator sugar; the functional module is the primary API.
    def __add__(self, other: "Tensor") -> "Tensor":
        from . import functional as F

        return F.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from . import functional as F

        return F.sub(self, other)

    def __mul__(self, other) -> "Tensor":
        from . import functional as F

        if isinstance(other, Tensor) and other.size != 1:
            return F.mul(self, other)
        return F.scale(self, other)

    @staticmethod
    def zeros(shape, dtype=None) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE))

    @staticmethod
    def full(shape, value: float, dtype=None) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=dtype or DEFAULT_DTYPE))


PullFn = Callable[[], None]


class Tape:
    """Ordered record of executed differentiable ops.

    Execution order is topological order, so the backward pass is a single
    reverse sweep.  A tape may be consumed by ``backward`` exactly once.
    """

    __slots__ = ("_records", "_consumed")

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, PullFn]] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every recorded tensor that feeds ``loss``."""
        if self._consumed:
            raise TapeError("tape already consumed; record a fresh tape before backward")
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if not self._records:
            raise TapeError("tape is empty; nothing was recorded")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, pull in reversed(self._records):
            if out.grad is not None:
                pull()


_active_tape: Optional[Tape] = None


@contextlib.contextmanager
def record() -> Iterator[Tape]:
    """Run ops under a fresh tape; restores the previous tape on exit."""
    global _active_tape
    prev = _active_tape
    tape = Tape()
    _active_tape = tape
    try:
        yield tape
    finally:
        _active_tape = prev


def active_tape() -> Optional[Tape]:
    return _active_tape


def recording(inputs: Sequence[Tensor]) -> bool:
    """True when a tape is active and some input participates in gradients."""
    return _active_tape is not None and any(t.requires_grad for t in inputs)


def push(out: Tensor, pull: PullFn) -> None:
    """Register ``out`` with its gradient pull on the active tape.

    Ops call this after computing their forward value; ``pull`` reads
    ``out.grad`` and accumulates into the inputs' ``grad`` buffers.
    """
    out.requires_grad = True
    assert _active_tape is not None
    _active_tape._records.append((out, pull))


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution; never mutates an existing buffer in place.

    The first contribution may alias downstream storage (views from reshape or
    concat backward), so later contributions allocate a fresh sum instead of
    using ``+=``.
    """
    t.grad = g if t.grad is None else t.grad + g
