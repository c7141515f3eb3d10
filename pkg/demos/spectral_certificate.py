"""Why a +-1 table cannot produce the full -cos correlation.

    python3 demos/spectral_certificate.py
"""

import math

from bellharness.fourier import (exhaustive_first_coefficient, expected_correlation, halfplane_first_coefficient,
                                 impossibility_certificate)
from bellharness.model import SettingGrid, get_strategy

if __name__ == "__main__":
    grid = SettingGrid(360)
    for name in ("sign", "halfplane", "coin", "alternating"):
        _, rep = expected_correlation(get_strategy(name), 7, 2000, grid)
        print(f"{name:<12} power in harmonics +-1: {rep.mass_pm1:.4f}   elsewhere: {rep.off_harmonic_mass:.4f}")
    print(f"continuum limit for the sign table: 8/pi^2 = {8 / math.pi**2:.4f}")

    best, winners = exhaustive_first_coefficient(16)
    print(f"\nall 2^16 tables on M=16: max |A(1)| = {best:.6f} from {len(winners)} tables "
          f"(half-circle value {halfplane_first_coefficient(16):.6f}), mass {best**2:.4f} < 1/2")

    print("\n   k    verdict     reason")
    for k in (0.0, 0.3, 1 / math.sqrt(2), 0.9, 1.0):
        rep = impossibility_certificate(k, grid)
        print(f"{k:5.3f}  {'feasible' if rep.feasible else 'infeasible':<10}  {rep.binding_reason}")
