"""Discrete Fourier analysis of +-1 measurement functions on the setting grid.

Conventions
-----------
``coeffs[k] = (1/M) * sum_j exp(-2*pi*i*k*j/M) * values[j]``, with ``k`` read
modulo ``M`` so that ``k`` and ``M - k`` form the +-k pair. Correlation
functions are indexed by the setting difference ``theta_t = 2*pi*t/M``.
Bob is taken to be the negation of Alice, so an autocorrelation carries a
leading minus sign and starts at ``C[0] = -1``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import LocalStrategy, SettingGrid, hidden_words

EXHAUSTIVE_MAX_M = 20


@dataclass(frozen=True)
class FunctionTable:
    grid: SettingGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.grid.M,):
            raise ValueError(f"table must have {self.grid.M} entries, got shape {values.shape}")
        if not np.all((values == 1) | (values == -1)):
            raise ValueError("table entries must be +1 or -1")
        object.__setattr__(self, "values", values.astype(np.int64))

    @classmethod
    def from_values(cls, values) -> "FunctionTable":
        values = np.asarray(values)
        return cls(SettingGrid(len(values)), values)


@dataclass(frozen=True)
class Spectrum:
    grid: SettingGrid
    coeffs: np.ndarray
    real_source: bool = True

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    def inverse(self) -> np.ndarray:
        """Values reconstructed from the coefficients (real part for real sources)."""
        values = np.fft.ifft(self.coeffs * self.grid.M)
        return values.real if self.real_source else values


@dataclass(frozen=True)
class CorrelationFunction:
    grid: SettingGrid
    values: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.grid.M) / self.grid.M

    def at_degrees(self, deg: float) -> float:
        return float(self.values[self.grid.offset_of_degrees(deg)])

    def to_csv(self, path) -> None:
        write_indexed_csv(path, self.theta, self.values)

    @classmethod
    def from_csv(cls, path) -> "CorrelationFunction":
        values = read_indexed_csv(path)
        return cls(SettingGrid(len(values)), values)

    def to_dict(self) -> dict:
        return {"M": self.grid.M, "theta_radians": self.theta.tolist(), "values": self.values.tolist()}


@dataclass(frozen=True)
class CertificateReport:
    """Why an exact ``-k cos(theta)`` correlation cannot come from +-1 tables.

    ``max_first_coefficient`` is the largest ``|coeffs[1]|`` any +-1 table
    on this grid can have; ``exhaustive`` says whether it was found by
    enumerating all ``2**M`` tables or taken from the half-circle table.
    """

    k: float
    M: int
    required_mass_per_side: float
    parseval_deficit: float
    max_first_coefficient: float
    max_mass_per_side: float
    exhaustive: bool
    feasible: bool
    binding_reason: str
    reasons: tuple[str, ...]

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["reasons"] = list(self.reasons)
        d["verdict"] = "feasible" if self.feasible else "infeasible"
        return d


@dataclass(frozen=True)
class SpectrumReport:
    """Power spectrum of one table, or the average over many hidden variables."""

    grid: SettingGrid
    power: np.ndarray
    parseval_residual: float
    mass_pm1: float
    n_tables: int = 1
    spectrum: Spectrum | None = field(default=None, compare=False)

    @property
    def off_harmonic_mass(self) -> float:
        """Power outside k = +-1; a full-amplitude -cos needs this to be zero."""
        return max(0.0, float(self.power.sum()) - self.mass_pm1)

    @property
    def reproduces_full_cosine(self) -> bool:
        return self.off_harmonic_mass < 1e-9

    def to_dict(self) -> dict:
        return {
            "M": self.grid.M,
            "n_tables": self.n_tables,
            "parseval_residual": self.parseval_residual,
            "mass_pm1": self.mass_pm1,
            "off_harmonic_mass": self.off_harmonic_mass,
            "reproduces_full_cosine": self.reproduces_full_cosine,
            "power": self.power.tolist(),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumReport":
        return report_from_power(np.asarray(d["power"], dtype=float), SettingGrid(d["M"]),
                                 n_tables=d.get("n_tables", 1))

    def to_csv(self, path) -> None:
        write_indexed_csv(path, 2 * np.pi * np.arange(self.grid.M) / self.grid.M, self.power)


def write_indexed_csv(path, theta, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "theta_radians", "value"])
        for i, (t, v) in enumerate(zip(theta, values)):
            w.writerow([i, repr(float(t)), repr(float(v))])


def read_indexed_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if [int(r["index"]) for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: index column must run 0..n-1")
    return np.array([float(r["value"]) for r in rows])


def report_from_power(power: np.ndarray, grid: SettingGrid, n_tables: int = 1,
                      spectrum: Spectrum | None = None) -> SpectrumReport:
    M = grid.M
    return SpectrumReport(
        grid=grid,
        power=power,
        parseval_residual=abs(float(power.sum()) - 1.0),
        mass_pm1=float(power[1] + power[M - 1]),
        n_tables=n_tables,
        spectrum=spectrum,
    )


# -- transforms ---------------------------------------------------------------

def dft(table: FunctionTable) -> Spectrum:
    return Spectrum(table.grid, np.fft.fft(table.values) / table.grid.M, real_source=True)


def spectrum_report(table: FunctionTable) -> SpectrumReport:
    sp = dft(table)
    return report_from_power(sp.power, table.grid, spectrum=sp)


def autocorrelation_direct(table: FunctionTable) -> CorrelationFunction:
    """C[t] = -(1/M) sum_j A[j] A[j - t], evaluated as a cyclic sum."""
    return cross_correlation_direct(table, FunctionTable(table.grid, -table.values))


def autocorrelation_spectral(spectrum: Spectrum) -> CorrelationFunction:
    """C[t] = -sum_k |A~(k)|^2 exp(-i k theta_t)."""
    if not spectrum.real_source or not _conjugate_symmetric(spectrum.coeffs):
        raise ValueError("spectral autocorrelation needs the spectrum of a real-valued table")
    return CorrelationFunction(spectrum.grid, -_power_to_correlation(spectrum.power))


def _conjugate_symmetric(coeffs: np.ndarray, atol: float = 1e-12) -> bool:
    mirrored = np.conj(np.roll(coeffs[::-1], 1))
    return bool(np.allclose(coeffs, mirrored, atol=atol, rtol=0))


def _power_to_correlation(power: np.ndarray) -> np.ndarray:
    # sum_k P[k] exp(-2*pi*i*k*t/M) is the forward DFT of P
    return np.fft.fft(power).real


def cross_correlation_direct(a: FunctionTable, b: FunctionTable) -> CorrelationFunction:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid.M} vs {b.grid.M}")
    M = a.grid.M
    va, vb = a.values.astype(float), b.values.astype(float)
    values = np.array([va @ np.roll(vb, t) for t in range(M)]) / M
    return CorrelationFunction(a.grid, values)


def cross_spectrum(a: FunctionTable, b: FunctionTable, method: str = "spectral") -> CorrelationFunction:
    """C[t] = (1/M) sum_j A[j] B[j - t] for a pair of tables.

    ``method="spectral"`` uses ``Re sum_k A~(k) conj(B~(k)) exp(i k theta_t)``;
    ``method="direct"`` the cyclic sum.
    """
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid.M} vs {b.grid.M}")
    if method == "direct":
        return cross_correlation_direct(a, b)
    if method != "spectral":
        raise ValueError(f"unknown method {method!r}")
    M = a.grid.M
    cross = dft(a).coeffs * np.conj(dft(b).coeffs)
    # sum_k X[k] exp(+2*pi*i*k*t/M) = M * ifft(X)
    return CorrelationFunction(a.grid, (np.fft.ifft(cross) * M).real)


def expected_correlation(strategy: LocalStrategy, seed: int, n_lambda: int,
                         grid: SettingGrid | None = None,
                         chunk: int = 4096) -> tuple[CorrelationFunction, SpectrumReport]:
    """Average the power spectra of ``strategy`` over hidden variables 1..n_lambda.

    The returned correlation is ``-sum_k avg_power[k] exp(-i k theta_t)``,
    the antipodal-pair correlation averaged over lambda and over setting
    pairs a fixed distance apart.
    """
    grid = grid or SettingGrid()
    if n_lambda < 1:
        raise ValueError("n_lambda must be >= 1")
    if strategy.memory_mode:
        raise ValueError(f"strategy {strategy.name!r} uses memory; it has no single Fourier representation")
    M = grid.M
    total = np.zeros(M)
    for start in range(1, n_lambda + 1, chunk):
        n = np.arange(start, min(start + chunk, n_lambda + 1))
        tables = strategy.tables(hidden_words(seed, n), grid)
        total += (np.abs(np.fft.fft(tables, axis=1) / M) ** 2).sum(axis=0)
    power = total / n_lambda
    corr = CorrelationFunction(grid, -_power_to_correlation(power))
    return corr, report_from_power(power, grid, n_tables=n_lambda)


# -- certificate ---------------------------------------------------------------

def halfplane_table(grid: SettingGrid, shift: int = 0) -> FunctionTable:
    """+1 on M/2 consecutive settings: sign(cos) sampled half a step off its zeros."""
    d = (np.arange(grid.M) - shift) % grid.M
    return FunctionTable(grid, np.where(d < grid.M // 2, 1, -1))


def halfplane_first_coefficient(M: int) -> float:
    """|coeffs[1]| of the half-circle table, (2/M) / sin(pi/M)."""
    return (2.0 / M) / math.sin(math.pi / M)


def exhaustive_first_coefficient(M: int, chunk_bits: int = 16) -> tuple[float, np.ndarray]:
    """Max of |coeffs[1]| over all 2**M tables, and every table attaining it.

    Tables are encoded as integers: bit j set means values[j] = -1.
    """
    if M > EXHAUSTIVE_MAX_M:
        raise ValueError(f"exhaustive search limited to M <= {EXHAUSTIVE_MAX_M}")
    phases = np.exp(-2j * np.pi * np.arange(M) / M)
    jbits = np.arange(M, dtype=np.int64)
    best = -1.0
    winners: list[np.ndarray] = []
    step = 1 << min(chunk_bits, M)
    for start in range(0, 1 << M, step):
        codes = np.arange(start, start + step, dtype=np.int64)
        values = 1 - 2 * ((codes[:, None] >> jbits) & 1)
        mags = np.abs(values @ phases) / M
        top = mags.max()
        if top > best + 1e-12:
            best, winners = top, []
        if top >= best - 1e-12:
            winners.append(codes[mags >= best - 1e-12])
    return float(best), np.concatenate(winners)


def decode_table(code: int, M: int) -> np.ndarray:
    return 1 - 2 * ((int(code) >> np.arange(M)) & 1)


def max_first_coefficient(grid: SettingGrid) -> tuple[float, bool]:
    if grid.M <= EXHAUSTIVE_MAX_M:
        return exhaustive_first_coefficient(grid.M)[0], True
    return halfplane_first_coefficient(grid.M), False


def impossibility_certificate(k: float, grid: SettingGrid | None = None,
                              max_coefficient: tuple[float, bool] | None = None) -> CertificateReport:
    """Check whether antipodal +-1 strategies can give exactly C = -k cos(theta).

    That target needs averaged power k/2 at k = +-1 and nothing elsewhere,
    while Parseval pins the total averaged power of +-1 tables to 1. So any
    k < 1 fails on total mass, and k = 1 fails whenever no table on the grid
    reaches |coeffs[1]|^2 = 1/2.
    """
    grid = grid or SettingGrid()
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"target amplitude must lie in [0, 1], got {k}")
    c1, exhaustive = max_coefficient or max_first_coefficient(grid)
    required = k / 2
    max_mass = c1 * c1
    reasons = []
    if k == 0:
        reasons.append("zero-correlation: target C = 0 contradicts C[0] = -1 for antipodal pairs")
    if k < 1:
        reasons.append(f"parseval-deficit: target carries total power {k:.6g}, +-1 tables carry 1")
    if required > max_mass + 1e-12:
        reasons.append(f"first-coefficient-bound: needs |A~(1)|^2 = {required:.6g} on average, "
                       f"grid maximum is {max_mass:.6g}")
    feasible = not reasons
    return CertificateReport(
        k=k, M=grid.M,
        required_mass_per_side=required,
        parseval_deficit=1.0 - k,
        max_first_coefficient=c1,
        max_mass_per_side=max_mass,
        exhaustive=exhaustive,
        feasible=feasible,
        binding_reason=reasons[0].split(":")[0] if reasons else "none",
        reasons=tuple(reasons),
    )


def cosine_fit(corr: CorrelationFunction) -> tuple[float, float]:
    """Least-squares amplitude of a negative cosine, and the RMS misfit."""
    M = corr.grid.M
    cos = np.cos(corr.theta)
    k_hat = float(-(2.0 / M) * np.sum(corr.values * cos))
    residual = float(np.sqrt(np.mean((corr.values + k_hat * cos) ** 2)))
    return k_hat, residual


def triangle_wave(grid: SettingGrid) -> np.ndarray:
    """-(1 - 2|theta|/pi) with theta wrapped to [-pi, pi]."""
    theta = 2 * np.pi * np.arange(grid.M) / grid.M
    wrapped = np.abs((theta + np.pi) % (2 * np.pi) - np.pi)
    return -(1 - 2 * wrapped / np.pi)
