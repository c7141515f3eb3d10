"""Run configuration, setting generation, in-process runs, run logs and replay."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import prng
from .digest import fnv1a64
from .model import (SettingGrid, StrategyPair, TrialRecord, get_strategy, hidden_words, singlet_sample_array)
from .stats import CELLS

PROTOCOL_VERSION = "bellharness/1"
SETTING_MODES = ("fourpoint", "fixed-delta", "uniform")
TRANSPORTS = ("in-process", "sockets")
DEFAULT_SEED_LAMBDA = 42
DEFAULT_SEED_SETTINGS = 43

# Alice 90 deg / 0 deg, Bob 45 deg / 135 deg: the (0, 135) pair is cell 22,
# the one cell whose singlet correlation is positive.
CHSH_ALICE_DEG = (90.0, 0.0)
CHSH_BOB_DEG = (45.0, 135.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    N: int
    seed_lambda: int = DEFAULT_SEED_LAMBDA
    seed_settings: int = DEFAULT_SEED_SETTINGS
    M: int = 360
    setting_mode: str = "fourpoint"
    alice_settings: tuple[int, int] | None = None
    bob_settings: tuple[int, int] | None = None
    delta: int = 0
    alice: str = "sign"
    bob: str = "antipodal"
    oracle: str | None = None
    memory_mode: bool = False
    transport: str = "in-process"
    virtual_source: bool = False

    def __post_init__(self):
        grid = SettingGrid(self.M)
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.setting_mode not in SETTING_MODES:
            raise ConfigError(f"setting_mode must be one of {SETTING_MODES}, got {self.setting_mode!r}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.oracle not in (None, "singlet"):
            raise ConfigError(f"unknown oracle {self.oracle!r}")
        for name in ("seed_lambda", "seed_settings"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ConfigError(f"{name} must be a 64-bit unsigned word")
        if self.alice_settings is None:
            object.__setattr__(self, "alice_settings",
                               tuple(grid.index_of_degrees(d) for d in CHSH_ALICE_DEG))
        if self.bob_settings is None:
            object.__setattr__(self, "bob_settings",
                               tuple(grid.index_of_degrees(d) for d in CHSH_BOB_DEG))
        object.__setattr__(self, "alice_settings", tuple(int(j) for j in self.alice_settings))
        object.__setattr__(self, "bob_settings", tuple(int(j) for j in self.bob_settings))
        for side in (self.alice_settings, self.bob_settings):
            if len(side) != 2 or not all(grid.contains(j) for j in side):
                raise ConfigError(f"four-point settings must be two grid indices per side, got {side}")
            if side[0] == side[1]:
                raise ConfigError("the two settings of a station must differ")
        if not 0 <= self.delta < self.M:
            raise ConfigError(f"delta must be a grid offset in [0, {self.M}), got {self.delta}")
        if self.oracle is None:
            try:
                if self.bob == "antipodal":
                    object.__setattr__(self, "bob", get_strategy(self.alice).negated().name)
                pair = self.strategies()
            except KeyError as exc:
                raise ConfigError(str(exc.args[0])) from None
            if (pair.alice.memory_mode or pair.bob.memory_mode) and not self.memory_mode:
                raise ConfigError("a memory strategy was selected but memory_mode is off")

    @property
    def grid(self) -> SettingGrid:
        return SettingGrid(self.M)

    def strategies(self) -> StrategyPair:
        return StrategyPair.from_names(self.alice, self.bob)

    @property
    def nonlocal_source(self) -> bool:
        return self.oracle is not None

    def labels(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Setting labels 1/2 per side.

        Four-point runs use the position of the setting in the configured
        pair. Other modes fall back to grid parity, which is only a fair
        coin per side when settings are drawn independently (uniform mode).
        """
        a, b = np.asarray(a), np.asarray(b)
        if self.setting_mode == "fourpoint":
            return (np.where(a == self.alice_settings[0], 1, 2),
                    np.where(b == self.bob_settings[0], 1, 2))
        return 1 + a % 2, 1 + b % 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alice_settings"] = list(self.alice_settings)
        d["bob_settings"] = list(self.bob_settings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        for key in ("alice_settings", "bob_settings"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def generate_settings_array(config: RunConfig, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(n, dtype=np.int64)
    words = prng.stream_words_array(config.seed_settings, n, count=2, domain=prng.SETTINGS_DOMAIN)
    M = config.M
    if config.setting_mode == "fourpoint":
        cell = prng.bounded_array(words[:, 0], 4)
        alice = np.array(config.alice_settings)
        bob = np.array(config.bob_settings)
        la = np.array([c[0] for c in CELLS])[cell]
        lb = np.array([c[1] for c in CELLS])[cell]
        return alice[la - 1], bob[lb - 1]
    a = prng.bounded_array(words[:, 0], M)
    if config.setting_mode == "fixed-delta":
        return a, (a - config.delta) % M
    return a, prng.bounded_array(words[:, 1], M)


def generate_settings(config: RunConfig, n: int) -> tuple[int, int]:
    """Setting pair of trial ``n``, deterministic in (seed_settings, n)."""
    if not 1 <= n <= config.N:
        raise ValueError(f"trial index {n} outside 1..{config.N}")
    a, b = generate_settings_array(config, np.array([n]))
    return int(a[0]), int(b[0])


def trial_line(n: int, a: int, b: int, x: int, y: int) -> str:
    return f'{{"n":{n},"a":{a},"b":{b},"x":{x},"y":{y}}}\n'


@dataclass
class RunLog:
    """Trials of one run, stored column-wise."""

    config: RunConfig
    n: np.ndarray
    a: np.ndarray
    b: np.ndarray
    x: np.ndarray
    y: np.ndarray
    digest: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("n", "a", "b", "x", "y"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if self.digest is None:
            self.digest = self.compute_digest()

    def __len__(self) -> int:
        return len(self.n)

    @property
    def nonlocal_source(self) -> bool:
        return self.config.nonlocal_source

    def labels(self):
        return self.config.labels(self.a, self.b)

    def trial(self, i: int) -> TrialRecord:
        return TrialRecord(int(self.n[i]), int(self.a[i]), int(self.b[i]), int(self.x[i]), int(self.y[i]))

    def trials(self):
        for i in range(len(self)):
            yield self.trial(i)

    def trial_lines(self) -> list[str]:
        return [trial_line(*t) for t in zip(self.n.tolist(), self.a.tolist(), self.b.tolist(),
                                            self.x.tolist(), self.y.tolist())]

    def compute_digest(self) -> int:
        return fnv1a64("".join(self.trial_lines()).encode("utf-8"))

    @property
    def digest_hex(self) -> str:
        return f"{self.digest:016x}"

    def header(self) -> dict:
        return {"version": PROTOCOL_VERSION, "config": self.config.to_dict(),
                "digest": self.digest_hex, "nonlocal": self.nonlocal_source, **self.meta}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            fh.writelines(self.trial_lines())

    @classmethod
    def load(cls, path) -> "RunLog":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        config = RunConfig.from_dict(header["config"])
        cols = {k: [r[k] for r in rows] for k in ("n", "a", "b", "x", "y")}
        meta = {k: v for k, v in header.items() if k not in ("version", "config", "digest", "nonlocal")}
        return cls(config, digest=int(header["digest"], 16), meta=meta, **cols)

    def validate(self) -> None:
        if len(self) != self.config.N:
            raise ValueError(f"log holds {len(self)} trials, config says {self.config.N}")
        if not np.array_equal(self.n, np.arange(1, len(self) + 1)):
            raise ValueError("trial numbers must run 1..N")
        if not np.all(np.isin(self.x, (-1, 1)) & np.isin(self.y, (-1, 1))):
            raise ValueError("outcomes must be +-1")


def run_in_process(config: RunConfig) -> RunLog:
    """Run all trials locally.

    Each station's evaluator only ever receives its own setting, the shared
    hidden variable and (in memory mode) its own history. With the singlet
    oracle the source samples both outcomes jointly, and the log is marked
    nonlocal.
    """
    if config.transport != "in-process":
        config = replace(config, transport="in-process")
    grid = config.grid
    n = np.arange(1, config.N + 1)
    a, b = generate_settings_array(config, n)
    words = hidden_words(config.seed_lambda, n)
    if config.oracle == "singlet":
        x, y = singlet_sample_array(a, b, words[:, 0], grid)
    else:
        pair = config.strategies()
        if not (pair.alice.memory_mode or pair.bob.memory_mode):
            x = pair.alice.eval_many(a, words, grid)
            y = pair.bob.eval_many(b, words, grid)
        else:
            x = np.empty(config.N, dtype=np.int64)
            y = np.empty(config.N, dtype=np.int64)
            hist_a: list[tuple[int, int]] = []
            hist_b: list[tuple[int, int]] = []
            for i in range(config.N):
                lam = words[i]
                xi = pair.alice.eval(int(a[i]), lam, grid, hist_a if config.memory_mode else ())
                yi = pair.bob.eval(int(b[i]), lam, grid, hist_b if config.memory_mode else ())
                hist_a.append((int(a[i]), xi))
                hist_b.append((int(b[i]), yi))
                x[i], y[i] = xi, yi
    return RunLog(config, n, a, b, x, y)


@dataclass(frozen=True)
class ReplayResult:
    ok: bool
    first_mismatch: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def replay_verify(log: RunLog) -> ReplayResult:
    """Re-run the logged configuration and compare trial by trial."""
    stored_ok = log.compute_digest() == log.digest
    fresh = run_in_process(log.config)
    if len(fresh) != len(log):
        return ReplayResult(False, None, f"trial count {len(log)} != {len(fresh)}")
    diff = ((fresh.a != log.a) | (fresh.b != log.b) | (fresh.x != log.x) | (fresh.y != log.y)
            | (fresh.n != log.n))
    if diff.any():
        i = int(np.argmax(diff))
        return ReplayResult(False, int(log.n[i]), f"first differing trial n={int(log.n[i])}")
    if not stored_ok or fresh.digest != log.digest:
        return ReplayResult(False, None, "stored digest does not match the trials")
    return ReplayResult(True)

