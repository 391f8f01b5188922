"""Differentiable primitive operations.

Every op validates shapes up front (raising ShapeError with the offending
shapes), computes the forward value with numpy/BLAS or a lane kernel, and
registers an exact analytic backward closure on the active tape.

Max-style reductions route gradient to the argmax element only, ties broken
toward the lowest index (numpy argmax order), which keeps backward passes
deterministic.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import InvalidValueError, ShapeError
from .tensor import Tensor, record_result


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _t(a), _t(b)
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        gb = np.outer(a.data, g) if a.ndim == 1 else a.data.T @ g
        return ga, gb

    return record_result(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    return record_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")
    return record_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    return record_result(a.data * b.data, (a, b),
                         lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    x = _t(x)
    c = float(c)
    if not np.isfinite(c):
        raise InvalidValueError(f"scale factor must be finite, got {c}")
    return record_result(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    x = _t(x)
    c = float(c)
    if not np.isfinite(c):
        raise InvalidValueError(f"added scalar must be finite, got {c}")
    return record_result(x.data + c, (x,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast a (d,) bias over the rows of x, which is (n, d) or (d,)."""
    x, b = _t(x), _t(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias {b.shape} does not broadcast over {x.shape}")

    def backward(g):
        return g, (g if g.ndim == 1 else g.sum(axis=0))

    return record_result(x.data + b.data, (x, b), backward)


def add_colvec(x: Tensor, v: Tensor) -> Tensor:
    """Add v[i] to every element of row i of a 2D x."""
    x, v = _t(x), _t(v)
    if x.ndim != 2 or v.ndim != 1 or x.shape[0] != v.shape[0]:
        raise ShapeError(f"column vector {v.shape} does not broadcast over {x.shape}")
    return record_result(x.data + v.data[:, None], (x, v),
                         lambda g: (g, g.sum(axis=1)))


def relu(x: Tensor) -> Tensor:
    x = _t(x)
    mask = x.data > 0
    return record_result(np.where(mask, x.data, 0.0), (x,),
                         lambda g: (g * mask,))


def softmax_rows(x: Tensor) -> Tensor:
    x = _t(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax expects a 2D input, got {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("softmax over zero columns is undefined")
    y = kernels.softmax_rows(np.ascontiguousarray(x.data))

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record_result(y, (x,), backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    x = _t(x)
    if x.ndim != 2:
        raise ShapeError(f"log-softmax expects a 2D input, got {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("log-softmax over zero columns is undefined")
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return record_result(out, (x,), backward)


def concat_last(parts: list[Tensor]) -> Tensor:
    parts = [_t(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead for p in parts):
        raise ShapeError(f"concat leading dims differ: {[p.shape for p in parts]}")
    widths = [p.shape[-1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=-1))

    return record_result(np.concatenate([p.data for p in parts], axis=-1),
                         parts, backward)


def stack_rows(rows: list[Tensor]) -> Tensor:
    rows = [_t(r) for r in rows]
    if not rows:
        raise ShapeError("stack of zero rows")
    if any(r.ndim != 1 or r.shape != rows[0].shape for r in rows):
        raise ShapeError(f"stack needs equal 1D rows, got {[r.shape for r in rows]}")

    def backward(g):
        return tuple(g[i] for i in range(len(rows)))

    return record_result(np.stack([r.data for r in rows]), rows, backward)


def transpose(x: Tensor) -> Tensor:
    x = _t(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects 2D, got {x.shape}")
    return record_result(x.data.T, (x,), lambda g: (g.T,))


def diag(x: Tensor) -> Tensor:
    x = _t(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"diag expects a square matrix, got {x.shape}")
    n = x.shape[0]

    def backward(g):
        gx = np.zeros((n, n))
        np.fill_diagonal(gx, g)
        return (gx,)

    return record_result(np.diagonal(x.data).copy(), (x,), backward)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup table[ids]; backward scatter-adds into the table."""
    table = _t(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or ids.ndim != 1:
        raise ShapeError(f"gather expects 2D table and 1D ids, got {table.shape}, {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InvalidValueError(
            f"gather ids out of range [0, {table.shape[0]}): {ids.min()}..{ids.max()}")

    def backward(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return record_result(table.data[ids], (table,), backward)


def segment_max(x: Tensor, starts: np.ndarray) -> Tensor:
    """Columnwise max over row segments [starts[s], starts[s+1])."""
    x = _t(x)
    starts = np.asarray(starts, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError(f"segment_max expects 2D values, got {x.shape}")
    if starts.ndim != 1 or len(starts) < 2 or starts[0] != 0 or starts[-1] != x.shape[0]:
        raise ShapeError(f"bad segment starts for {x.shape[0]} rows: {starts}")
    if np.any(np.diff(starts) <= 0):
        raise ShapeError("empty segment: max over zero rows is undefined")
    out, arg = kernels.segment_max(np.ascontiguousarray(x.data), starts)
    cols = np.arange(x.shape[1])

    def backward(g):
        gx = np.zeros(x.shape)
        gx[arg, cols[None, :]] = g
        return (gx,)

    return record_result(out, (x,), backward)


def max_axis(x: Tensor, axis: int) -> Tensor:
    x = _t(x)
    if x.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"max_axis expects 2D and axis 0/1, got {x.shape}, axis={axis}")
    if x.shape[axis] == 0:
        raise ShapeError(f"max over empty axis {axis} of {x.shape}")
    arg = x.data.argmax(axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros(x.shape)
        if axis == 0:
            gx[arg, np.arange(x.shape[1])] = g
        else:
            gx[np.arange(x.shape[0]), arg] = g
        return (gx,)

    return record_result(out, (x,), backward)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    x = _t(x)
    if x.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"mean_axis expects 2D and axis 0/1, got {x.shape}, axis={axis}")
    n = x.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over empty axis {axis} of {x.shape}")

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy() / n,)

    return record_result(x.data.mean(axis=axis), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    x = _t(x)
    return record_result(np.asarray(x.data.sum()), (x,),
                         lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    x = _t(x)
    if x.size == 0:
        raise ShapeError("mean of an empty tensor")
    n = x.size
    return record_result(np.asarray(x.data.mean()), (x,),
                         lambda g: (np.full(x.shape, float(g) / n),))


def l2_normalize(x: Tensor) -> Tensor:
    """Normalize a 1D vector, or each row of a 2D matrix, to unit L2 norm."""
    x = _t(x)
    if x.ndim not in (1, 2):
        raise ShapeError(f"l2_normalize expects 1D or 2D, got {x.shape}")
    axis = x.ndim - 1
    norms = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norms == 0.0):
        raise InvalidValueError("cannot L2-normalize a zero vector")
    y = x.data / norms

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - y * dot) / norms,)

    return record_result(y, (x,), backward)
