"""Float64 tensors and the gradient tape.

Tensors are immutable once created (backing arrays are marked read-only);
the optimizer swaps in fresh buffers through `_assign`. Forward ops record
onto the active `Tape`, whose entry list is already in topological order,
so reverse-mode differentiation is a single reversed sweep that visits
each node exactly once.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import InvalidValueError, ShapeError

_ids = itertools.count()

# module-level active tape; single-threaded by contract
_ACTIVE: Optional["Tape"] = None


def _as_f64(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("_data", "requires_grad", "grad", "_id")

    def __init__(self, data, requires_grad: bool = False):
        # copy so freezing the buffer never mutates the caller's array flags
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise InvalidValueError("tensor data contains NaN or Inf")
        arr.flags.writeable = False
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._id = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        """Wrap an op result without re-validating; ops keep finite outputs."""
        t = cls.__new__(cls)
        arr = _as_f64(arr)
        arr.flags.writeable = False
        t._data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._id = next(_ids)
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a size-1 tensor, got shape {self.shape}")
        return float(self._data.reshape(()))

    def _assign(self, data) -> None:
        """Replace the value buffer (optimizer use); shape must be preserved."""
        arr = np.array(data, dtype=np.float64)
        if arr.shape != self._data.shape:
            raise ShapeError(f"assign shape {arr.shape} != parameter shape {self._data.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidValueError("assigned data contains NaN or Inf")
        arr.flags.writeable = False
        self._data = arr

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Entry:
    __slots__ = ("out_id", "inputs", "backward")

    def __init__(self, out_id, inputs, backward):
        self.out_id = out_id
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications, replayable backward."""

    def __init__(self):
        self._entries: list[_Entry] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None

    def _record(self, inputs: Sequence[Tensor], out: Tensor,
                backward: Callable[[np.ndarray], tuple]) -> None:
        self._entries.append(_Entry(out._id, tuple(inputs), backward))
        self._produced.add(out._id)

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Populate `.grad` on every requires-grad leaf reachable from `loss`.

        Deterministic for a fixed tape; calling it again overwrites the same
        values bit-for-bit.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._id not in self._produced:
            # constant graph: nothing was recorded, no gradients to produce
            if loss.requires_grad:
                raise InvalidValueError("loss does not belong to this tape")
            return
        grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
        leaf: dict[int, tuple[Tensor, np.ndarray]] = {}
        for entry in reversed(self._entries):
            g_out = grads.pop(entry.out_id, None)
            if g_out is None:
                continue
            input_grads = entry.backward(g_out)
            for t, g in zip(entry.inputs, input_grads):
                if g is None or not t.requires_grad:
                    continue
                if t._id in self._produced:
                    acc = grads.get(t._id)
                    grads[t._id] = g if acc is None else acc + g
                else:
                    prev = leaf.get(t._id)
                    leaf[t._id] = (t, g) if prev is None else (t, prev[1] + g)
        for t, g in leaf.values():
            t.grad = g


def active_tape() -> Optional[Tape]:
    return _ACTIVE


def record_result(out_data: np.ndarray, inputs: Sequence[Tensor],
                  backward: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap an op output, recording it when a tape is live and grads flow."""
    tape = _ACTIVE
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires_grad=needs)
    if needs:
        tape._record(inputs, out, backward)
    return out
