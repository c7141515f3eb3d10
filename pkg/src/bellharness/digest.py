"""64-bit FNV-1a, JIT-compiled when numba is installed."""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def _fnv1a_py(data: bytes, h: int = FNV_OFFSET) -> int:
    for c in data:
        h = ((h ^ c) * FNV_PRIME) & _MASK
    return h


try:
    import numba

    @numba.njit(cache=True)
    def _fnv1a_jit(buf, h):
        prime = np.uint64(FNV_PRIME)
        for i in range(buf.shape[0]):
            h = (h ^ np.uint64(buf[i])) * prime
        return h

    def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
        if len(data) < 4096:
            return _fnv1a_py(data, h)
        return int(_fnv1a_jit(np.frombuffer(data, dtype=np.uint8), np.uint64(h)))

except ImportError:  # pragma: no cover - exercised only without numba
    fnv1a64 = _fnv1a_py
