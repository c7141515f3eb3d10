"""Setting grid, hidden variables, local strategies and the singlet oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import prng

Outcome = int
History = Sequence[tuple[int, int]]


@dataclass(frozen=True)
class SettingGrid:
    """``M`` equally spaced settings standing for the circle (-pi, pi].

    Index ``j`` maps to the angle ``-pi + 2*pi*(j + 1)/M``, so the last
    index is exactly ``pi``.
    """

    M: int = 360

    def __post_init__(self):
        if not isinstance(self.M, (int, np.integer)) or self.M < 4 or self.M % 2:
            raise ValueError(f"grid size must be an even integer >= 4, got {self.M!r}")

    def angle(self, j):
        if np.ndim(j):
            return -np.pi + 2 * np.pi * (np.asarray(j) + 1) / self.M
        return -math.pi + 2 * math.pi * (j + 1) / self.M

    @property
    def angles(self) -> np.ndarray:
        return -np.pi + 2 * np.pi * (np.arange(self.M) + 1) / self.M

    def contains(self, j) -> bool:
        return isinstance(j, (int, np.integer)) and 0 <= j < self.M

    def index_of_degrees(self, deg: float) -> int:
        """Grid index of an angle given in degrees; must land on a grid point."""
        steps = deg * self.M / 360.0
        k = round(steps)
        if abs(steps - k) > 1e-9:
            raise ValueError(f"{deg} degrees is not on a {self.M}-point grid")
        # u = 2*pi*k/M  =>  j + 1 = k + M/2  (mod M)
        return int((k + self.M // 2 - 1) % self.M)

    def degrees(self, j: int) -> float:
        return (j + 1) * 360.0 / self.M - 180.0

    def offset_of_degrees(self, deg: float) -> int:
        steps = deg * self.M / 360.0
        k = round(steps)
        if abs(steps - k) > 1e-9:
            raise ValueError(f"{deg} degrees is not a multiple of the grid step")
        return int(k % self.M)


@dataclass(frozen=True)
class HiddenVariable:
    """One draw of the shared randomness for trial ``n``."""

    words: tuple[int, ...]
    n: int

    @property
    def array(self) -> np.ndarray:
        return np.array(self.words, dtype=np.uint64)


def hidden_stream(seed: int, n: int) -> HiddenVariable:
    """Hidden variable of trial ``n`` (random access, no earlier trials needed)."""
    if n < 1:
        raise ValueError(f"trial index must be >= 1, got {n}")
    return HiddenVariable(prng.stream_words(seed, n), n)


def hidden_words(seed: int, n: np.ndarray) -> np.ndarray:
    """Words of many trials at once, shape ``(len(n), 4)``."""
    return prng.stream_words_array(seed, n)


def hidden_lattice(M: int) -> np.ndarray:
    """One hidden variable per (phase, coin) combination, shape ``(2*M, 4)``.

    Built-in strategies read only the grid phase of word 0 and the top bit
    of word 1, so averaging over this lattice is the exact lambda-average
    (up to the 2**-64 non-uniformity of the phase map).
    """
    phase = np.arange(M, dtype=object)
    word0 = [int((p << 64) + M - 1) // M for p in phase]
    rows = [(w0, bit << 63, 0, 0) for w0 in word0 for bit in (0, 1)]
    return np.array(rows, dtype=np.uint64)


@dataclass(frozen=True)
class TrialRecord:
    n: int
    a: int
    b: int
    x: Outcome
    y: Outcome


# -- strategies -------------------------------------------------------------

# A vectorised outcome rule: (setting indices, hidden words[..., 4], M) -> +-1.
OutcomeRule = Callable[[np.ndarray, np.ndarray, int], np.ndarray]
# A memory rule sees its own station's past (setting, outcome) pairs.
MemoryRule = Callable[[int, np.ndarray, int, History], int]


@dataclass(frozen=True)
class LocalStrategy:
    """A measurement function A(setting, lambda) -> +-1.

    Memoryless strategies carry a vectorised ``rule``. Memory strategies
    carry ``memory_rule`` instead, which additionally receives the station's
    own history and is evaluated one trial at a time.
    """

    name: str
    rule: OutcomeRule | None = None
    memory_rule: MemoryRule | None = field(default=None, compare=False)
    description: str = ""

    @property
    def memory_mode(self) -> bool:
        return self.memory_rule is not None

    def eval(self, j: int, lam: HiddenVariable | Sequence[int], grid: SettingGrid,
             history: History = ()) -> Outcome:
        words = lam.array if isinstance(lam, HiddenVariable) else np.asarray(lam, dtype=np.uint64)
        if self.memory_rule is not None:
            out = self.memory_rule(int(j), words, grid.M, history)
        else:
            out = self.rule(np.asarray(j), words, grid.M)
        return int(out)

    def eval_many(self, j: np.ndarray, words: np.ndarray, grid: SettingGrid) -> np.ndarray:
        if self.memory_rule is not None:
            raise ValueError(f"strategy {self.name!r} uses memory and cannot be batch-evaluated")
        return np.asarray(self.rule(np.asarray(j), np.asarray(words, dtype=np.uint64), grid.M),
                          dtype=np.int64)

    def table(self, lam: HiddenVariable | Sequence[int], grid: SettingGrid) -> np.ndarray:
        """Outcomes over the whole grid for one hidden variable."""
        words = lam.array if isinstance(lam, HiddenVariable) else np.asarray(lam, dtype=np.uint64)
        j = np.arange(grid.M)
        return self.eval_many(j, np.broadcast_to(words, (grid.M, len(words))), grid)

    def tables(self, words: np.ndarray, grid: SettingGrid) -> np.ndarray:
        """Tables for a batch of hidden variables, shape ``(len(words), M)``."""
        words = np.asarray(words, dtype=np.uint64)
        j = np.broadcast_to(np.arange(grid.M), (len(words), grid.M))
        w = np.broadcast_to(words[:, None, :], (len(words), grid.M, words.shape[-1]))
        return self.eval_many(j, w, grid)

    def negated(self) -> "LocalStrategy":
        if self.name.startswith("-"):
            return get_strategy(self.name[1:])
        if self.memory_rule is not None:
            inner = self.memory_rule
            return LocalStrategy("-" + self.name,
                                 memory_rule=lambda j, w, m, h: -inner(j, w, m, h),
                                 description=f"negation of {self.name}")
        rule = self.rule
        return LocalStrategy("-" + self.name, rule=lambda j, w, m: -rule(j, w, m),
                             description=f"negation of {self.name}")


def sign_outcome(j, phase, M):
    """sign(cos(u_j - u_phase)) on the grid, with ties (cos = 0) sent to +1.

    Integer arithmetic only, so the tie points are detected exactly.
    """
    d = (np.asarray(j, dtype=np.int64) - np.asarray(phase, dtype=np.int64)) % M
    return np.where((4 * d <= M) | (4 * d >= 3 * M), 1, -1)


def _phase(words, M):
    return prng.bounded_array(np.asarray(words, dtype=np.uint64)[..., 0], M)


def _sign_rule(j, words, M):
    return sign_outcome(j, _phase(words, M), M)


def _const_rule(value):
    def rule(j, words, M):
        return np.full(np.shape(j), value, dtype=np.int64)
    return rule


def _alternating_rule(j, words, M):
    return np.where(np.asarray(j) % 2 == 0, 1, -1)


def _coin_rule(j, words, M):
    bit = (np.asarray(words, dtype=np.uint64)[..., 1] >> np.uint64(63)).astype(np.int64)
    return np.broadcast_to(1 - 2 * bit, np.shape(j)).astype(np.int64)


def _halfplane_rule(j, words, M):
    # +1 on a random arc of exactly M/2 consecutive settings
    d = (np.asarray(j, dtype=np.int64) - _phase(words, M)) % M
    return np.where(d < M // 2, 1, -1)


def _drift_sign_memory(j, words, M, history):
    # the hidden phase is rotated by the station's own previous setting
    shift = history[-1][0] if history else 0
    return int(sign_outcome(j, int(_phase(words, M)) + shift, M))


BUILTIN_STRATEGIES: dict[str, LocalStrategy] = {
    s.name: s for s in [
        LocalStrategy("sign", _sign_rule,
                      description="sign(cos(u - phi)) with phi uniform on the grid"),
        LocalStrategy("const-plus", _const_rule(1), description="always +1"),
        LocalStrategy("const-minus", _const_rule(-1), description="always -1"),
        LocalStrategy("alternating", _alternating_rule, description="(-1)**j, ignores lambda"),
        LocalStrategy("coin", _coin_rule, description="shared fair coin, ignores the setting"),
        LocalStrategy("halfplane", _halfplane_rule,
                      description="+1 on a random half circle of M/2 grid points"),
        LocalStrategy("drift-sign", memory_rule=_drift_sign_memory,
                      description="sign model whose phase follows the station's last setting"),
    ]
}


def strategy_names(include_memory: bool = True) -> list[str]:
    return [n for n, s in BUILTIN_STRATEGIES.items() if include_memory or not s.memory_mode]


def get_strategy(name: str) -> LocalStrategy:
    """Look up a built-in strategy; a leading ``-`` negates it."""
    if name.startswith("-"):
        return get_strategy(name[1:]).negated()
    try:
        return BUILTIN_STRATEGIES[name]
    except KeyError:
        raise KeyError(f"unknown strategy {name!r}; known: {', '.join(BUILTIN_STRATEGIES)}") from None


@dataclass(frozen=True)
class StrategyPair:
    alice: LocalStrategy
    bob: LocalStrategy
    antipodal: bool = False

    @classmethod
    def from_names(cls, alice: str, bob: str) -> "StrategyPair":
        a = get_strategy(alice)
        if bob == "antipodal":
            return cls(a, a.negated(), antipodal=True)
        b = get_strategy(bob)
        return cls(a, b, antipodal=b.name == a.negated().name)

    def check_antipodal(self, grid: SettingGrid, lambdas: Sequence[HiddenVariable]) -> bool:
        for lam in lambdas:
            if not np.array_equal(self.bob.table(lam, grid), -self.alice.table(lam, grid)):
                return False
        return True


# -- singlet oracle ---------------------------------------------------------

def singlet_opposite_probability(a, b, grid: SettingGrid):
    """P(y = -x) for the singlet at settings a, b: (1 + cos(a - b)) / 2."""
    delta = 2 * np.pi * ((np.asarray(a) - np.asarray(b)) % grid.M) / grid.M
    return (1 + np.cos(delta)) / 2


def singlet_sample(a: int, b: int, rng_state: int, grid: SettingGrid) -> tuple[int, int, int]:
    """Draw one singlet outcome pair; returns ``(x, y, new_state)``.

    This is a nonlocal reference sampler: it sees both settings.
    """
    state, w1 = prng.prng_next(rng_state)
    state, w2 = prng.prng_next(state)
    x = 1 if prng.to_unit_float(w1) < 0.5 else -1
    opposite = prng.to_unit_float(w2) < float(singlet_opposite_probability(a, b, grid))
    return x, -x if opposite else x, state


def singlet_sample_array(a: np.ndarray, b: np.ndarray, rng_state: np.ndarray,
                         grid: SettingGrid) -> tuple[np.ndarray, np.ndarray]:
    state, w1 = prng.prng_next_array(rng_state)
    _, w2 = prng.prng_next_array(state)
    x = np.where(prng.to_unit_float_array(w1) < 0.5, 1, -1)
    opposite = prng.to_unit_float_array(w2) < singlet_opposite_probability(a, b, grid)
    return x, np.where(opposite, -x, x)
