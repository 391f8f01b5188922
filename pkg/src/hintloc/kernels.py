"""Hot numeric kernels with two interchangeable lanes.

The loop-shaped inner kernels (segmented max-pool, row softmax, fused Adam
update, map-clone candidate scan) are compiled with numba when available.
Setting the environment variable ``HINTLOC_NUMBA=0`` before import selects
the pure-numpy lane instead; both lanes implement identical tie-breaking
(first maximum wins) and are individually deterministic.  Three of the four
twins produce bit-identical outputs across lanes; ``softmax_rows`` can differ
in the last bit because numpy's vectorized exp and the scalar libm exp round
a small fraction of inputs differently.

Matrix products are deliberately *not* here: BLAS already owns those.

``python -m hintloc.bench`` times the two lanes against each other.
"""

import os

import numpy as np

__all__ = [
    "BACKEND",
    "softmax_rows",
    "segment_max",
    "adam_update",
    "pmc_mask",
    "available_backends",
    "get_impls",
]


def _softmax_rows_np(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _segment_max_np(values: np.ndarray, starts: np.ndarray):
    """Columnwise max over row segments [starts[s], starts[s+1]).

    Returns (maxes (S, D), argrows (S, D)) where argrows holds absolute row
    indices of the first maximum per column, matching np.argmax tie rules.
    """
    n_seg = len(starts) - 1
    d = values.shape[1]
    out = np.empty((n_seg, d), dtype=values.dtype)
    arg = np.empty((n_seg, d), dtype=np.int64)
    for s in range(n_seg):
        lo, hi = starts[s], starts[s + 1]
        block = values[lo:hi]
        idx = block.argmax(axis=0)
        arg[s] = idx + lo
        out[s] = block[idx, np.arange(d)]
    return out, arg


def _pow_int(base: float, n: int) -> float:
    """base**n by binary exponentiation.

    The compiled lane lowers ``float ** int`` to exactly this multiply
    sequence, while libm pow rounds some of the same inputs differently; the
    Adam twins stay bit-identical only if both compute the bias-correction
    factors the same way.
    """
    r = 1.0
    while n > 0:
        if n & 1:
            r *= base
        base *= base
        n >>= 1
    return r


def _adam_update_np(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step; m and v are updated in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - _pow_int(beta1, t))
    v_hat = v / (1.0 - _pow_int(beta2, t))
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


def _pmc_mask_np(centers_xy, center_i, target, alpha, beta):
    """Boolean mask of submaps within the infinity-norm cloning bounds."""
    d_center = np.abs(centers_xy - center_i).max(axis=1)
    d_target = np.abs(centers_xy - target).max(axis=1)
    return (d_center < alpha) & (d_target < beta)


_NUMPY_IMPLS = {
    "softmax_rows": _softmax_rows_np,
    "segment_max": _segment_max_np,
    "adam_update": _adam_update_np,
    "pmc_mask": _pmc_mask_np,
}


def _build_numba_impls():
    from numba import njit

    opts = dict(cache=True, fastmath=False, nogil=True)

    @njit(**opts)
    def softmax_rows_nb(x):
        n, d = x.shape
        out = np.empty((n, d), dtype=x.dtype)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(d):
                out[i, j] /= s
        return out

    @njit(**opts)
    def segment_max_nb(values, starts):
        n_seg = len(starts) - 1
        d = values.shape[1]
        out = np.empty((n_seg, d), dtype=values.dtype)
        arg = np.empty((n_seg, d), dtype=np.int64)
        for s in range(n_seg):
            lo = starts[s]
            hi = starts[s + 1]
            for j in range(d):
                best = values[lo, j]
                best_row = lo
                for r in range(lo + 1, hi):
                    if values[r, j] > best:
                        best = values[r, j]
                        best_row = r
                out[s, j] = best
                arg[s, j] = best_row
        return out, arg

    @njit(**opts)
    def adam_update_nb(param, grad, m, v, t, lr, beta1, beta2, eps):
        flat_p = param.ravel()
        flat_g = grad.ravel()
        flat_m = m.ravel()
        flat_v = v.ravel()
        new = np.empty_like(flat_p)
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for i in range(flat_p.size):
            g = flat_g[i]
            flat_m[i] = beta1 * flat_m[i] + (1.0 - beta1) * g
            flat_v[i] = beta2 * flat_v[i] + (1.0 - beta2) * g * g
            m_hat = flat_m[i] / c1
            v_hat = flat_v[i] / c2
            new[i] = flat_p[i] - lr * m_hat / (np.sqrt(v_hat) + eps)
        return new.reshape(param.shape)

    @njit(**opts)
    def pmc_mask_nb(centers_xy, center_i, target, alpha, beta):
        n = centers_xy.shape[0]
        out = np.empty(n, dtype=np.bool_)
        for i in range(n):
            dc = abs(centers_xy[i, 0] - center_i[0])
            d1 = abs(centers_xy[i, 1] - center_i[1])
            if d1 > dc:
                dc = d1
            dt = abs(centers_xy[i, 0] - target[0])
            d2 = abs(centers_xy[i, 1] - target[1])
            if d2 > dt:
                dt = d2
            out[i] = (dc < alpha) and (dt < beta)
        return out

    return {
        "softmax_rows": softmax_rows_nb,
        "segment_max": segment_max_nb,
        "adam_update": adam_update_nb,
        "pmc_mask": pmc_mask_nb,
    }


def _select_backend():
    flag = os.environ.get("HINTLOC_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return "numpy", _NUMPY_IMPLS
    try:
        return "numba", _build_numba_impls()
    except ImportError:
        return "numpy", _NUMPY_IMPLS


BACKEND, _IMPLS = _select_backend()

softmax_rows = _IMPLS["softmax_rows"]
segment_max = _IMPLS["segment_max"]
adam_update = _IMPLS["adam_update"]
pmc_mask = _IMPLS["pmc_mask"]


def available_backends():
    """Names of the lanes importable in this environment."""
    names = ["numpy"]
    try:
        import numba  # noqa: F401

        names.append("numba")
    except ImportError:
        pass
    return names


def get_impls(backend: str) -> dict:
    """Kernel table for an explicit lane, independent of the env flag."""
    if backend == "numpy":
        return dict(_NUMPY_IMPLS)
    if backend == "numba":
        return _build_numba_impls()
    raise ValueError(f"unknown backend {backend!r}")
