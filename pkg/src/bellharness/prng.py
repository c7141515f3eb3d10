"""splitmix64 generator and the shared hidden-variable stream.

Scalar functions work on Python ints; the ``*_array`` variants work on
``numpy.uint64`` arrays and produce bit-identical results, which is what
lets the in-process runner evaluate a million trials at once.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# Domain tags keep the hidden-variable and settings streams apart even when
# both are driven by the same seed.
LAMBDA_DOMAIN = 0x6C616D6264610000
SETTINGS_DOMAIN = 0x73657474696E6700

WORDS_PER_TRIAL = 4

_U_GAMMA = np.uint64(GOLDEN_GAMMA)
_U_MIX1 = np.uint64(MIX1)
_U_MIX2 = np.uint64(MIX2)


def prng_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state by one step.

    Returns ``(new_state, output_word)``.
    """
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return state, z ^ (z >> 31)


def prng_next_array(state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    state = np.asarray(state, dtype=np.uint64) + _U_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _U_MIX1
    z = (z ^ (z >> np.uint64(27))) * _U_MIX2
    return state, z ^ (z >> np.uint64(31))


def prng_outputs(seed: int, count: int) -> list[int]:
    """First ``count`` outputs of the generator started at ``seed``."""
    out = []
    state = seed & MASK64
    for _ in range(count):
        state, word = prng_next(state)
        out.append(word)
    return out


def to_unit_float(word: int) -> float:
    """Map a 64-bit word to a double in [0, 1) using its top 53 bits."""
    return (word >> 11) * 2.0**-53


def to_unit_float_array(words: np.ndarray) -> np.ndarray:
    return (np.asarray(words, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def bounded(word: int, m: int) -> int:
    """Map a 64-bit word onto ``range(m)`` by multiply-high."""
    return (word * m) >> 64


def bounded_array(words: np.ndarray, m: int) -> np.ndarray:
    # multiply-high via two 32-bit halves; exact for m < 2**32
    words = np.asarray(words, dtype=np.uint64)
    if not 0 < m < 2**32:
        raise ValueError("m must lie in [1, 2**32)")
    hi = words >> np.uint64(32)
    lo = words & np.uint64(0xFFFFFFFF)
    mm = np.uint64(m)
    return ((hi * mm + ((lo * mm) >> np.uint64(32))) >> np.uint64(32)).astype(np.int64)


def trial_state(seed: int, n: int, domain: int = LAMBDA_DOMAIN) -> int:
    """Per-trial generator state, computed without touching trials 1..n-1.

    Both steps go through the splitmix64 finalizer, which is a bijection,
    so distinct trial numbers get distinct starting states.
    """
    if n < 1:
        raise ValueError(f"trial index must be >= 1, got {n}")
    _, key = prng_next((seed ^ domain) & MASK64)
    _, state = prng_next(key ^ (n & MASK64))
    return state


def trial_states_array(seed: int, n: np.ndarray, domain: int = LAMBDA_DOMAIN) -> np.ndarray:
    n = np.asarray(n, dtype=np.int64)
    if n.size and n.min() < 1:
        raise ValueError("trial indices must be >= 1")
    _, key = prng_next((seed ^ domain) & MASK64)
    _, state = prng_next_array(np.uint64(key) ^ n.astype(np.uint64))
    return state


def stream_words(seed: int, n: int, count: int = WORDS_PER_TRIAL, domain: int = LAMBDA_DOMAIN) -> tuple[int, ...]:
    state = trial_state(seed, n, domain)
    words = []
    for _ in range(count):
        state, w = prng_next(state)
        words.append(w)
    return tuple(words)


def stream_words_array(seed: int, n: np.ndarray, count: int = WORDS_PER_TRIAL,
                       domain: int = LAMBDA_DOMAIN) -> np.ndarray:
    """Words for many trials at once, shape ``(len(n), count)``."""
    state = trial_states_array(seed, n, domain)
    cols = []
    for _ in range(count):
        state, w = prng_next_array(state)
        cols.append(w)
    return np.stack(cols, axis=-1) if cols else np.empty((len(state), 0), dtype=np.uint64)
