"""Run statistics: CHSH correlations, success counting, exact binomial tails,
Fine's theorem and Boole's three-event feasibility.

Settings are labelled 1 and 2 on each side. Functions that take a run log
only need an object with ``labels() -> (la, lb)`` and outcome arrays ``x``
and ``y``; :class:`bellharness.harness.RunLog` provides both.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln

from .model import SettingGrid, StrategyPair, hidden_lattice

CELLS = ((1, 1), (1, 2), (2, 1), (2, 2))
# canonical CHSH signs: cell 22 flipped, matching the success rule
CHSH_SIGNS = {(1, 1): 1, (1, 2): 1, (2, 1): 1, (2, 2): -1}
OUTCOME_PAIRS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
LHV_SUCCESS_BOUND = 0.75


class MissingCellError(ValueError):
    pass


@dataclass(frozen=True)
class ChshCorrelations:
    """Per-cell mean of x*y; a cell with no trials is ``None``, never imputed."""

    rho11: float | None
    rho12: float | None
    rho21: float | None
    rho22: float | None
    counts: dict = field(default_factory=dict)

    def __getitem__(self, cell) -> float | None:
        a, b = cell
        return getattr(self, f"rho{a}{b}")

    def as_tuple(self) -> tuple:
        return (self.rho11, self.rho12, self.rho21, self.rho22)

    def to_dict(self) -> dict:
        return {"rho11": self.rho11, "rho12": self.rho12, "rho21": self.rho21, "rho22": self.rho22,
                "counts": {f"{a}{b}": n for (a, b), n in self.counts.items()}}


def _columns(log):
    la, lb = log.labels()
    return (np.asarray(la), np.asarray(lb), np.asarray(log.x), np.asarray(log.y))


def estimate_correlations(log) -> ChshCorrelations:
    la, lb, x, y = _columns(log)
    if len(x) == 0:
        raise ValueError("empty run log")
    if not np.all(np.isin(la, (1, 2)) & np.isin(lb, (1, 2))):
        raise ValueError("every trial must carry setting labels in {1, 2}")
    rho, counts = {}, {}
    xy = x * y
    for a, b in CELLS:
        mask = (la == a) & (lb == b)
        n = int(mask.sum())
        counts[(a, b)] = n
        rho[f"rho{a}{b}"] = float(xy[mask].sum() / n) if n else None
    return ChshCorrelations(**rho, counts=counts)


def chsh_score(c: ChshCorrelations) -> float:
    """S = rho11 + rho12 + rho21 - rho22."""
    missing = [f"{a}{b}" for a, b in CELLS if c[(a, b)] is None]
    if missing:
        raise MissingCellError(f"CHSH score needs all four cells; missing {', '.join(missing)}")
    return sum(CHSH_SIGNS[cell] * c[cell] for cell in CELLS)


@dataclass(frozen=True)
class TestVerdict:
    S_N: int
    N: int
    cells: dict
    p_value: float | None = None
    null_p: float | None = None

    __test__ = False  # not a pytest class

    @property
    def threshold(self) -> int:
        return self.S_N

    @property
    def success_rate(self) -> float:
        return self.S_N / self.N if self.N else float("nan")

    @property
    def log10_p_value(self) -> float | None:
        """log10 of the p-value, finite even where the p-value underflows."""
        if self.null_p is None:
            return None
        return log_binomial_tail(self.N, self.null_p, self.S_N) / math.log(10)

    def to_dict(self) -> dict:
        return {"S_N": self.S_N, "N": self.N, "success_rate": self.success_rate,
                "p_value": self.p_value, "log10_p_value": self.log10_p_value, "null_p": self.null_p,
                "cells": {f"{a}{b}": {"successes": s, "trials": n}
                          for (a, b), (s, n) in self.cells.items()}}


def is_success(la, lb, x, y):
    """Equal outcomes unless both settings are 2; opposite outcomes if they are."""
    both_two = (np.asarray(la) == 2) & (np.asarray(lb) == 2)
    equal = np.asarray(x) == np.asarray(y)
    return np.where(both_two, ~equal, equal)


def success_count(log, flip_bob: bool = False) -> TestVerdict:
    """Count successes in a run.

    ``flip_bob`` scores ``(x, -y)`` instead of ``(x, y)``. Negating one
    station's output is itself a local operation, so the 3/4 bound still
    applies; it is the right orientation for anti-correlated sources such as
    the singlet.
    """
    la, lb, x, y = _columns(log)
    if flip_bob:
        y = -y
    win = is_success(la, lb, x, y)
    cells = {}
    for a, b in CELLS:
        mask = (la == a) & (lb == b)
        cells[(a, b)] = (int(win[mask].sum()), int(mask.sum()))
    return TestVerdict(S_N=int(win.sum()), N=int(len(x)), cells=cells)


def _log_binom_terms(N: int, p: float, k: np.ndarray) -> np.ndarray:
    return (gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)
            + k * math.log(p) + (N - k) * math.log1p(-p))


def log_binomial_tail(N: int, p: float, x: int) -> float:
    """Natural log of P(Bin(N, p) >= x)."""
    if not (isinstance(N, (int, np.integer)) and N >= 0):
        raise ValueError(f"N must be a non-negative integer, got {N!r}")
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    if not (isinstance(x, (int, np.integer)) and 0 <= x <= N + 1):
        raise ValueError(f"x must be an integer in [0, N+1], got {x!r}")
    if x == 0:
        return 0.0
    if x == N + 1:
        return -math.inf
    if p == 0.0:
        return -math.inf
    if p == 1.0:
        return 0.0
    if x - 1 < N * p:
        # upper tail near 1: go through the small lower tail to keep precision
        lower = _log_sum_terms(N, p, np.arange(0, x, dtype=float))
        return math.log1p(-math.exp(lower))
    return _log_sum_terms(N, p, np.arange(x, N + 1, dtype=float))


def _log_sum_terms(N: int, p: float, k: np.ndarray) -> float:
    terms = _log_binom_terms(N, p, k)
    top = terms.max()
    return float(top + math.log(np.sum(np.exp(terms - top))))


def binomial_tail(N: int, p: float, x: int) -> float:
    """P(Bin(N, p) >= x), summed in log space from the largest term."""
    return min(1.0, math.exp(log_binomial_tail(N, p, x)))


def binomial_lower_tail(N: int, p: float, x: int) -> float:
    """P(Bin(N, p) <= x)."""
    return binomial_tail(N, 1.0 - p, N - x)


def bell_test(counts: TestVerdict, null_p: float = LHV_SUCCESS_BOUND) -> TestVerdict:
    """p-value of the observed success count under the Bin(N, 3/4) bound.

    Valid for any local strategy, with or without memory, provided the four
    setting pairs are drawn afresh and uniformly on every trial.
    """
    p_value = binomial_tail(counts.N, null_p, counts.S_N)
    return TestVerdict(counts.S_N, counts.N, counts.cells, p_value=p_value, null_p=null_p)


# -- probability tables and Fine's theorem --------------------------------------

def _oi(v: int) -> int:
    return 0 if v == 1 else 1


@dataclass(frozen=True)
class ProbabilityTable:
    """``p[x][y][a][b]`` with outcome index 0 for +1, 1 for -1, setting index a-1, b-1.

    Serialized as ``{"pxy_ab": [[...], ...]}``: four rows for the setting
    pairs 11, 12, 21, 22, each listing p(x, y | a, b) for
    (x, y) = (+1, +1), (+1, -1), (-1, +1), (-1, -1).
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (2, 2, 2, 2):
            raise ValueError(f"probability table must have shape (2, 2, 2, 2), got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < -1e-12):
            raise ValueError("probabilities must be finite and non-negative")
        sums = p.sum(axis=(0, 1))
        if not np.allclose(sums, 1.0, atol=1e-12, rtol=0):
            raise ValueError(f"each setting pair must sum to 1, got {sums.ravel().tolist()}")
        object.__setattr__(self, "p", p)

    def prob(self, x: int, y: int, a: int, b: int) -> float:
        return float(self.p[_oi(x), _oi(y), a - 1, b - 1])

    def correlation(self, a: int, b: int) -> float:
        return sum(x * y * self.prob(x, y, a, b) for x, y in OUTCOME_PAIRS)

    def alice_marginal(self, a: int, b: int) -> float:
        """p(x = +1 | a, b)."""
        return float(self.p[0, :, a - 1, b - 1].sum())

    def bob_marginal(self, a: int, b: int) -> float:
        """p(y = +1 | a, b)."""
        return float(self.p[:, 0, a - 1, b - 1].sum())

    @property
    def pxy_ab(self) -> list[list[float]]:
        return [[self.prob(x, y, a, b) for x, y in OUTCOME_PAIRS] for a, b in CELLS]

    @classmethod
    def from_pxy_ab(cls, rows) -> "ProbabilityTable":
        rows = np.asarray(rows, dtype=float)
        if rows.shape != (4, 4):
            raise ValueError(f"pxy_ab must be a 4x4 array, got shape {rows.shape}")
        p = np.zeros((2, 2, 2, 2))
        for (a, b), row in zip(CELLS, rows):
            for (x, y), v in zip(OUTCOME_PAIRS, row):
                p[_oi(x), _oi(y), a - 1, b - 1] = v
        return cls(p)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"pxy_ab": self.pxy_ab}, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "ProbabilityTable":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict) or "pxy_ab" not in doc:
            raise ValueError(f"{path}: expected a JSON object with key 'pxy_ab'")
        return cls.from_pxy_ab(doc["pxy_ab"])

    @classmethod
    def from_correlations(cls, corr: dict, alice: dict | None = None, bob: dict | None = None):
        """Table with given correlations E_ab and marginals E[x|a], E[y|b] (default 0)."""
        alice = alice or {1: 0.0, 2: 0.0}
        bob = bob or {1: 0.0, 2: 0.0}
        p = np.zeros((2, 2, 2, 2))
        for a, b in CELLS:
            for x, y in OUTCOME_PAIRS:
                p[_oi(x), _oi(y), a - 1, b - 1] = (1 + x * alice[a] + y * bob[b] + x * y * corr[(a, b)]) / 4
        return cls(p)


@dataclass(frozen=True)
class Constraint:
    name: str
    kind: str  # "chsh" or "no-signalling"
    value: float
    bound: float
    slack: float
    passed: bool


@dataclass(frozen=True)
class FineReport:
    constraints: tuple[Constraint, ...]

    @property
    def lhv_representable(self) -> bool:
        return all(c.passed for c in self.constraints)

    @property
    def verdict(self) -> str:
        return "SATISFIES" if self.lhv_representable else "VIOLATES"

    @property
    def binding(self) -> Constraint:
        """The constraint with the least slack."""
        return min(self.constraints, key=lambda c: c.slack)

    def violated(self) -> list[Constraint]:
        return [c for c in self.constraints if not c.passed]

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "lhv_representable": self.lhv_representable,
                "constraints": [c.__dict__ for c in self.constraints]}


def chsh_sign_patterns():
    """The eight sign patterns (e11, e12, e21, e22) whose product is -1."""
    return [eps for eps in itertools.product((1, -1), repeat=4) if math.prod(eps) == -1]


def fine_check(t: ProbabilityTable, counts: dict | None = None, z: float = 5.0,
               tol: float = 1e-9) -> FineReport:
    """Eight one-sided CHSH inequalities plus four no-signalling equalities.

    With ``counts`` (trials per setting pair) the equalities are judged by a
    two-sample z-test at ``z`` standard errors instead of the fixed ``tol``.
    """
    if not isinstance(t, ProbabilityTable):
        raise TypeError("fine_check expects a ProbabilityTable")
    E = {cell: t.correlation(*cell) for cell in CELLS}
    out = []
    for eps in chsh_sign_patterns():
        value = sum(e * E[cell] for e, cell in zip(eps, CELLS))
        label = "".join("+" if e > 0 else "-" for e in eps)
        out.append(Constraint(f"chsh[{label}]", "chsh", value, 2.0, 2.0 - value, value <= 2.0 + tol))

    def tolerance(p1, n1, p2, n2):
        if counts is None:
            return tol
        se = math.sqrt(p1 * (1 - p1) / max(n1, 1) + p2 * (1 - p2) / max(n2, 1))
        return z * se + tol

    for a in (1, 2):
        p1, p2 = t.alice_marginal(a, 1), t.alice_marginal(a, 2)
        n1, n2 = (counts[(a, 1)], counts[(a, 2)]) if counts else (0, 0)
        tl = tolerance(p1, n1, p2, n2)
        gap = abs(p1 - p2)
        out.append(Constraint(f"no-signalling[alice,a={a}]", "no-signalling", p1 - p2, 0.0,
                              tl - gap, gap <= tl))
    for b in (1, 2):
        p1, p2 = t.bob_marginal(1, b), t.bob_marginal(2, b)
        n1, n2 = (counts[(1, b)], counts[(2, b)]) if counts else (0, 0)
        tl = tolerance(p1, n1, p2, n2)
        gap = abs(p1 - p2)
        out.append(Constraint(f"no-signalling[bob,b={b}]", "no-signalling", p1 - p2, 0.0,
                              tl - gap, gap <= tl))
    return FineReport(tuple(out))


def deterministic_strategies():
    """The 16 deterministic local strategies: (alice outcomes, bob outcomes) per setting."""
    resp = list(itertools.product((1, -1), repeat=2))
    return [(A, B) for A in resp for B in resp]


def lhv_feasible(t: ProbabilityTable, tol: float = 1e-9) -> tuple[bool, np.ndarray | None]:
    """Search for weights on the 16 deterministic strategies reproducing ``t`` exactly.

    Independent of :func:`fine_check`; this is a plain linear feasibility
    problem solved with HiGHS.
    """
    strategies = deterministic_strategies()
    A_eq = np.zeros((16, 16))
    b_eq = np.zeros(16)
    row = 0
    for a, b in CELLS:
        for x, y in OUTCOME_PAIRS:
            for s, (A, B) in enumerate(strategies):
                A_eq[row, s] = float(A[a - 1] == x and B[b - 1] == y)
            b_eq[row] = t.prob(x, y, a, b)
            row += 1
    # minimise the total equality violation with slack variables
    n = len(strategies)
    c = np.concatenate([np.zeros(n), np.ones(32)])
    A = np.hstack([A_eq, np.eye(16), -np.eye(16)])
    A = np.vstack([A, np.concatenate([np.ones(n), np.zeros(32)])])
    rhs = np.concatenate([b_eq, [1.0]])
    res = linprog(c, A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    if res.fun <= tol:
        return True, res.x[:n]
    return False, None


def strategy_table(pair: StrategyPair, alice_settings, bob_settings,
                   grid: SettingGrid) -> ProbabilityTable:
    """Exact table of a memoryless pair, averaging over every hidden-lattice point."""
    words = hidden_lattice(grid.M)
    p = np.zeros((2, 2, 2, 2))
    for a, b in CELLS:
        x = pair.alice.eval_many(np.full(len(words), alice_settings[a - 1]), words, grid)
        y = pair.bob.eval_many(np.full(len(words), bob_settings[b - 1]), words, grid)
        for xv, yv in OUTCOME_PAIRS:
            p[_oi(xv), _oi(yv), a - 1, b - 1] = np.mean((x == xv) & (y == yv))
    return ProbabilityTable(p)


def empirical_table(log) -> tuple[ProbabilityTable, dict]:
    """Relative frequencies per setting pair, with the per-pair trial counts."""
    la, lb, x, y = _columns(log)
    p = np.zeros((2, 2, 2, 2))
    counts = {}
    for a, b in CELLS:
        mask = (la == a) & (lb == b)
        n = int(mask.sum())
        if n == 0:
            raise MissingCellError(f"no trials at setting pair {a}{b}")
        counts[(a, b)] = n
        for xv, yv in OUTCOME_PAIRS:
            p[_oi(xv), _oi(yv), a - 1, b - 1] = np.sum(mask & (x == xv) & (y == yv)) / n
    return ProbabilityTable(p), counts


def singlet_table(alice_angles, bob_angles) -> ProbabilityTable:
    """Analytic singlet table: uniform marginals, E_ab = -cos(alpha_a - beta_b)."""
    corr = {(a, b): -math.cos(alice_angles[a - 1] - bob_angles[b - 1]) for a, b in CELLS}
    return ProbabilityTable.from_correlations(corr)


# -- Boole --------------------------------------------------------------------

ATOMS = tuple(itertools.product((1, -1), repeat=3))  # (X, Y, Z)


@dataclass(frozen=True)
class BooleResult:
    feasible: bool
    witness: dict | None
    violated: tuple[str, ...]
    method: str

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "method": self.method,
                "witness": None if self.witness is None else
                {"".join("+" if v > 0 else "-" for v in k): w for k, w in self.witness.items()},
                "violated": list(self.violated)}


def boole_inequalities(p: float, q: float, r: float) -> dict[str, float]:
    """Slack of each facet inequality; all must be >= 0 for feasibility.

    Whatever X, Y, Z are, either all three events {X=Y}, {Y=Z}, {Z=X} hold
    or exactly one does. Writing w_all, w_xy, w_yz, w_zx for those four
    cases gives p = w_all + w_xy, q = w_all + w_yz, r = w_all + w_zx with
    the weights summing to 1, which solves to the four expressions below.
    """
    return {
        "p + q + r >= 1": (p + q + r - 1) / 2,
        "q + r <= 1 + p": (1 + p - q - r) / 2,
        "p + r <= 1 + q": (1 - p + q - r) / 2,
        "p + q <= 1 + r": (1 - p - q + r) / 2,
    }


def boole_check(p: float, q: float, r: float, method: str = "inequalities",
                tol: float = 1e-12) -> BooleResult:
    """Is there a joint law of three +-1 variables with P(X=Y)=p, P(Y=Z)=q, P(Z=X)=r?"""
    for name, v in (("p", p), ("q", q), ("r", r)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
    if method == "inequalities":
        slack = boole_inequalities(p, q, r)
        violated = tuple(k for k, s in slack.items() if s < -tol)
        if violated:
            return BooleResult(False, None, violated, method)
        w_all, w_xy, w_yz, w_zx = (max(0.0, s) for s in slack.values())
        witness = {a: 0.0 for a in ATOMS}
        witness[(1, 1, 1)] = w_all
        witness[(1, 1, -1)] = w_xy
        witness[(-1, 1, 1)] = w_yz
        witness[(1, -1, 1)] = w_zx
        return BooleResult(True, witness, (), method)
    if method == "lp":
        A_eq = np.array([
            [float(X == Y) for X, Y, Z in ATOMS],
            [float(Y == Z) for X, Y, Z in ATOMS],
            [float(Z == X) for X, Y, Z in ATOMS],
            [1.0] * 8,
        ])
        res = linprog(np.zeros(8), A_eq=A_eq, b_eq=[p, q, r, 1.0], bounds=(0, None), method="highs")
        if res.status == 0:
            return BooleResult(True, dict(zip(ATOMS, res.x.tolist())), (), method)
        if res.status == 2:
            slack = boole_inequalities(p, q, r)
            violated = tuple(k for k, s in slack.items() if s < 0) or ("lp-infeasible",)
            return BooleResult(False, None, violated, method)
        raise RuntimeError(f"LP failed: {res.message}")
    raise ValueError(f"unknown method {method!r}")
