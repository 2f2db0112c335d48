"""Hot element-wise kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly, unless the environment
variable ``POPSYN_NO_JIT`` is set to a non-empty value other than ``0``.
``set_backend`` switches at runtime (tests exercise both paths).

Both paths implement the same arithmetic in the same order.  Integer-valued
outputs (bit transforms, category draws, bin indices, masks) agree exactly;
outputs that go through ``exp``/``log``/``cos`` may differ in the last ulp
because numpy and LLVM ship different libm implementations.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


# --------------------------------------------------------------------------
# numpy path
# --------------------------------------------------------------------------

def _np_uniform(raw):
    return (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53


def _np_box_muller(raw):
    u1 = 1.0 - _np_uniform(raw[0::2])
    u2 = _np_uniform(raw[1::2])
    r = np.sqrt(-2.0 * np.log(u1))
    theta = _TWO_PI * u2
    out = np.empty(raw.shape[0], dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out


def _np_categorical(probs, u):
    n, k = probs.shape
    cdf = np.cumsum(probs, axis=1)
    target = u * cdf[:, -1]
    idx = (cdf <= target[:, None]).sum(axis=1)
    over = idx >= k
    if over.any():
        positive = probs[over] > 0.0
        idx[over] = k - 1 - np.argmax(positive[:, ::-1], axis=1)
    return idx.astype(np.int64)


def _np_drawn_mask(draws, n):
    mask = np.zeros(n, dtype=np.bool_)
    mask[draws] = True
    return mask


def _np_bin_index(values, lo, hi, bins):
    idx = np.floor((values - lo) * bins / (hi - lo)).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _np_block_softmax(z, offsets, widths):
    out = z.copy()
    for off, w in zip(offsets, widths):
        blk = z[:, off:off + w]
        e = np.exp(blk - blk.max(axis=1, keepdims=True))
        out[:, off:off + w] = e / e.sum(axis=1, keepdims=True)
    return out


def _np_block_softmax_backward(s, g, offsets, widths):
    out = g.copy()
    for off, w in zip(offsets, widths):
        sb = s[:, off:off + w]
        gb = g[:, off:off + w]
        out[:, off:off + w] = sb * (gb - (gb * sb).sum(axis=1, keepdims=True))
    return out


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

def _nb_uniform(raw):
    out = np.empty(raw.shape[0], dtype=np.float64)
    for i in range(raw.shape[0]):
        out[i] = np.float64(raw[i] >> np.uint64(11)) * _INV_2_53
    return out


def _nb_box_muller(raw):
    n = raw.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n // 2):
        u1 = 1.0 - np.float64(raw[2 * i] >> np.uint64(11)) * _INV_2_53
        u2 = np.float64(raw[2 * i + 1] >> np.uint64(11)) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = _TWO_PI * u2
        out[2 * i] = r * math.cos(theta)
        out[2 * i + 1] = r * math.sin(theta)
    return out


def _nb_categorical(probs, u):
    n, k = probs.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        total = 0.0
        for j in range(k):
            total += probs[i, j]
        target = u[i] * total
        c = 0.0
        chosen = -1
        for j in range(k):
            c += probs[i, j]
            if c > target:
                chosen = j
                break
        if chosen < 0:
            for j in range(k - 1, -1, -1):
                if probs[i, j] > 0.0:
                    chosen = j
                    break
        out[i] = chosen
    return out


def _nb_drawn_mask(draws, n):
    mask = np.zeros(n, dtype=np.bool_)
    for i in range(draws.shape[0]):
        mask[draws[i]] = True
    return mask


def _nb_bin_index(values, lo, hi, bins):
    out = np.empty(values.shape[0], dtype=np.int64)
    for i in range(values.shape[0]):
        b = int(math.floor((values[i] - lo) * bins / (hi - lo)))
        if b < 0:
            b = 0
        elif b > bins - 1:
            b = bins - 1
        out[i] = b
    return out


def _nb_block_softmax(z, offsets, widths):
    out = z.copy()
    n = z.shape[0]
    for b in range(offsets.shape[0]):
        off = offsets[b]
        w = widths[b]
        for i in range(n):
            m = z[i, off]
            for j in range(off + 1, off + w):
                if z[i, j] > m:
                    m = z[i, j]
            s = 0.0
            for j in range(off, off + w):
                e = math.exp(z[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(off, off + w):
                out[i, j] /= s
    return out


def _nb_block_softmax_backward(s, g, offsets, widths):
    out = g.copy()
    n = s.shape[0]
    for b in range(offsets.shape[0]):
        off = offsets[b]
        w = widths[b]
        for i in range(n):
            dot = 0.0
            for j in range(off, off + w):
                dot += g[i, j] * s[i, j]
            for j in range(off, off + w):
                out[i, j] = s[i, j] * (g[i, j] - dot)
    return out


_NUMPY = {
    "uniform": _np_uniform,
    "box_muller": _np_box_muller,
    "categorical": _np_categorical,
    "drawn_mask": _np_drawn_mask,
    "bin_index": _np_bin_index,
    "block_softmax": _np_block_softmax,
    "block_softmax_backward": _np_block_softmax_backward,
}

_NUMBA_SOURCES = {
    "uniform": _nb_uniform,
    "box_muller": _nb_box_muller,
    "categorical": _nb_categorical,
    "drawn_mask": _nb_drawn_mask,
    "bin_index": _nb_bin_index,
    "block_softmax": _nb_block_softmax,
    "block_softmax_backward": _nb_block_softmax_backward,
}

_numba_compiled = None


def _numba_table():
    global _numba_compiled
    if _numba_compiled is None:
        _numba_compiled = {
            name: numba.njit(cache=True, nogil=True)(fn)
            for name, fn in _NUMBA_SOURCES.items()
        }
    return _numba_compiled


def numba_available():
    return numba is not None


def _default_backend():
    flag = os.environ.get("POPSYN_NO_JIT", "")
    if flag and flag != "0":
        return "numpy"
    return "numba" if numba_available() else "numpy"


_backend = _default_backend()


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous name."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not numba_available():
        raise RuntimeError("numba is not importable")
    prev, _backend = _backend, name
    return prev


def _table():
    return _numba_table() if _backend == "numba" else _NUMPY


# --------------------------------------------------------------------------
# public dispatchers
# --------------------------------------------------------------------------

def uniform(raw):
    """Map uint64 words to doubles in [0, 1) using the top 53 bits."""
    return _table()["uniform"](np.ascontiguousarray(raw, dtype=np.uint64))


def box_muller(raw):
    """Standard normals from an even-length uint64 array (pairs -> cos, sin)."""
    raw = np.ascontiguousarray(raw, dtype=np.uint64)
    if raw.shape[0] % 2:
        raise ValueError("box_muller needs an even number of words")
    return _table()["box_muller"](raw)


def categorical(probs, u):
    """Inverse-CDF draw per row of nonnegative ``probs`` with uniforms ``u``.

    Rows need not be normalized; the caller guarantees a positive row sum.
    """
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if probs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return _table()["categorical"](probs, u)


def drawn_mask(draws, n):
    return _table()["drawn_mask"](np.ascontiguousarray(draws, dtype=np.int64), int(n))


def bin_index(values, lo, hi, bins):
    values = np.ascontiguousarray(values, dtype=np.float64)
    return _table()["bin_index"](values, float(lo), float(hi), int(bins))


def block_softmax(z, offsets, widths):
    z = np.ascontiguousarray(z, dtype=np.float64)
    return _table()["block_softmax"](
        z, np.asarray(offsets, dtype=np.int64), np.asarray(widths, dtype=np.int64)
    )


def block_softmax_backward(s, g, offsets, widths):
    return _table()["block_softmax_backward"](
        np.ascontiguousarray(s, dtype=np.float64),
        np.ascontiguousarray(g, dtype=np.float64),
        np.asarray(offsets, dtype=np.int64),
        np.asarray(widths, dtype=np.int64),
    )
