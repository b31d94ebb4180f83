"""Recycling pool for large scratch arrays.

Under this project's sandboxed kernels, first-touch page faults make freshly
allocated large arrays ~3x slower to write than warm ones, and glibc returns
big frees to the OS, so numpy's allocate-per-op pattern pays that cost every
op. The pool hands out views of retained buffers and reclaims them when the
view's refcount drops.

Safety: a handed-out array (and every numpy view derived from it) holds a
Python reference to the retained base buffer. The finalizer recycles the base
only when its refcount matches the no-outstanding-views baseline, so memory
that escaped through a view is simply dropped from the pool instead of being
reused while still visible.
"""

from __future__ import annotations

import sys
import weakref

import numpy as np

_MIN_BYTES = 1 << 18  # pooling pays off for page-sized buffers only
_MAX_PER_KEY = 64  # a deep model keeps ~2 live buffers per layer per shape
_MAX_TOTAL = 2 << 30

_free: dict[tuple, list[np.ndarray]] = {}
_held_bytes = 0


def _recycle(key, base: np.ndarray) -> None:
    global _held_bytes
    if sys.getrefcount(base) > _BASELINE:
        return  # a derived view escaped; let the GC own this buffer
    stack = _free.setdefault(key, [])
    if len(stack) < _MAX_PER_KEY and _held_bytes + base.nbytes <= _MAX_TOTAL:
        stack.append(base)
        _held_bytes += base.nbytes


def _probe_baseline() -> int:
    captured: list[int] = []

    def capture(out, base):
        out.append(sys.getrefcount(base))

    base = np.empty(1, dtype=np.float32)
    view = base.view()
    weakref.finalize(view, capture, captured, base)
    # mirror take(): its frame (and with it the local `base` ref) is gone by
    # the time the finalizer runs
    del base
    del view
    return captured[0]


_BASELINE = _probe_baseline()


def take(shape, dtype) -> np.ndarray:
    """An uninitialized array, recycled from the pool when possible."""
    global _held_bytes
    dtype = np.dtype(dtype)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if nbytes < _MIN_BYTES:
        return np.empty(shape, dtype)
    key = (tuple(shape), dtype.str)
    stack = _free.get(key)
    if stack:
        base = stack.pop()
        _held_bytes -= base.nbytes
    else:
        base = np.empty(shape, dtype)
    view = base.view()
    weakref.finalize(view, _recycle, key, base)
    return view


def clear() -> None:
    """Drop every retained buffer (mainly for tests and memory pressure)."""
    global _held_bytes
    _free.clear()
    _held_bytes = 0
