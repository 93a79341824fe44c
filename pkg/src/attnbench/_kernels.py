"""Hot inner loops of the autograd engine, in numba and pure-numpy flavours.

The numba path is used when numba imports and ``ATTNBENCH_DISABLE_NUMBA`` is
unset (or falsy). Both flavours are always importable through ``NUMPY`` and
``NUMBA`` so tests and benchmarks can compare them directly.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ATTNBENCH_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


# ---------------------------------------------------------------------------
# pure numpy


def _np_scatter_add_rows(out, ids, rows):
    np.add.at(out, ids, rows)


def _np_unfold1d(x, k, pad_left, pad_right):
    b, t, c = x.shape
    xp = np.zeros((b, t + pad_left + pad_right, c), dtype=x.dtype)
    xp[:, pad_left:pad_left + t] = x
    t_out = xp.shape[1] - k + 1
    return np.concatenate([xp[:, j:j + t_out] for j in range(k)], axis=2)


def _np_fold1d(cols, k, pad_left, pad_right, t):
    b, t_out, kc = cols.shape
    c = kc // k
    xp = np.zeros((b, t + pad_left + pad_right, c), dtype=cols.dtype)
    for j in range(k):
        xp[:, j:j + t_out] += cols[:, :, j * c:(j + 1) * c]
    return xp[:, pad_left:pad_left + t].copy()


def _np_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _np_nll_rows(logits, targets, ignore_id):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    logp = shifted - np.log(s)
    valid = targets != ignore_id
    rows = np.nonzero(valid)[0]
    picked = logp[rows, targets[rows]]
    grad = e / s
    grad[~valid] = 0.0
    grad[rows, targets[rows]] -= 1.0
    return -picked.sum(dtype=np.float64), int(rows.size), grad


NUMPY = {
    "scatter_add_rows": _np_scatter_add_rows,
    "unfold1d": _np_unfold1d,
    "fold1d": _np_fold1d,
    "softmax_rows": _np_softmax_rows,
    "nll_rows": _np_nll_rows,
}


# ---------------------------------------------------------------------------
# numba

if HAVE_NUMBA:
    # no fastmath: masked scores are exactly -inf and must stay that way
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _nb_scatter_add_rows(out, ids, rows):
        d = out.shape[1]
        for i in range(ids.shape[0]):
            r = ids[i]
            for j in range(d):
                out[r, j] += rows[i, j]

    @_jit
    def _nb_unfold1d(x, k, pad_left, pad_right):
        b, t, c = x.shape
        t_out = t + pad_left + pad_right - k + 1
        cols = np.zeros((b, t_out, k * c), dtype=x.dtype)
        for bi in range(b):
            for ti in range(t_out):
                for j in range(k):
                    src = ti + j - pad_left
                    if 0 <= src < t:
                        for ci in range(c):
                            cols[bi, ti, j * c + ci] = x[bi, src, ci]
        return cols

    @_jit
    def _nb_fold1d(cols, k, pad_left, pad_right, t):
        b, t_out, kc = cols.shape
        c = kc // k
        x = np.zeros((b, t, c), dtype=cols.dtype)
        for bi in range(b):
            for ti in range(t_out):
                for j in range(k):
                    dst = ti + j - pad_left
                    if 0 <= dst < t:
                        for ci in range(c):
                            x[bi, dst, ci] += cols[bi, ti, j * c + ci]
        return x

    @_jit
    def _nb_softmax_rows(x):
        n, v = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, v):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(v):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(v):
                out[i, j] /= s
        return out

    @_jit
    def _nb_nll_rows(logits, targets, ignore_id):
        n, v = logits.shape
        grad = np.zeros_like(logits)
        total = 0.0
        count = 0
        for i in range(n):
            tgt = targets[i]
            if tgt == ignore_id:
                continue
            m = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(v):
                e = np.exp(logits[i, j] - m)
                grad[i, j] = e
                s += e
            for j in range(v):
                grad[i, j] /= s
            grad[i, tgt] -= 1.0
            total += np.log(s) - (logits[i, tgt] - m)
            count += 1
        return total, count, grad

    NUMBA = {
        "scatter_add_rows": _nb_scatter_add_rows,
        "unfold1d": _nb_unfold1d,
        "fold1d": _nb_fold1d,
        "softmax_rows": _nb_softmax_rows,
        "nll_rows": _nb_nll_rows,
    }
else:  # pragma: no cover
    NUMBA = {}

ACTIVE = NUMBA if USE_NUMBA else NUMPY


def scatter_add_rows(out: np.ndarray, ids: np.ndarray, rows: np.ndarray) -> None:
    """In place ``out[ids[i]] += rows[i]`` with repeated ids accumulating."""
    ACTIVE["scatter_add_rows"](out, np.ascontiguousarray(ids, dtype=np.int64),
                               np.ascontiguousarray(rows, dtype=out.dtype))


def unfold1d(x: np.ndarray, k: int, pad_left: int, pad_right: int) -> np.ndarray:
    """[B, T, C] -> [B, T_out, k*C] sliding windows over a zero-padded sequence."""
    return ACTIVE["unfold1d"](np.ascontiguousarray(x), k, pad_left, pad_right)


def fold1d(cols: np.ndarray, k: int, pad_left: int, pad_right: int, t: int) -> np.ndarray:
    """Adjoint of :func:`unfold1d`: overlap-add windows back onto length ``t``."""
    return ACTIVE["fold1d"](np.ascontiguousarray(cols), k, pad_left, pad_right, t)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row softmax of a 2-D array; ``-inf`` entries map to exactly 0."""
    return ACTIVE["softmax_rows"](np.ascontiguousarray(x))


def nll_rows(logits: np.ndarray, targets: np.ndarray, ignore_id: int):
    """Summed negative log-likelihood, counted rows, and d(sum)/d(logits)."""
    return ACTIVE["nll_rows"](np.ascontiguousarray(logits),
                              np.ascontiguousarray(targets, dtype=np.int64), ignore_id)
