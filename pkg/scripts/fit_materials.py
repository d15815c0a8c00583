"""Fit Compton/photoelectric coefficients for the phantom material library.

Offline helper; needs ``xraydb`` (not a package dependency). For each
material the tabulated total linear attenuation mu(E) on 20-140 keV is fitted
as ``c * f_KN(E) + p * E**-3`` by linear least squares with relative
weighting. The printed constants are pasted into ``dect/phantom.py``.

    python scripts/fit_materials.py
"""

import numpy as np
import xraydb

from dect.physics import ENERGY_GRID, klein_nishina, photoelectric_basis

# name: (mass fractions by formula, density g/cm^3)
MATERIALS = {
    "water": ({"H2O": 1.0}, 1.0),
    "doped_water": ({"H2O": 0.9, "NaCl": 0.1}, 1.07),
    "plastic": ({"C5H8O2": 1.0}, 1.19),  # PMMA
    "aluminum": ({"Al": 1.0}, 2.699),
    "neoprene": ({"C4H5Cl": 1.0}, 1.23),
}


def linear_attenuation(fractions, density, energies_kev):
    ev = np.asarray(energies_kev) * 1e3
    mass_mu = sum(w * xraydb.material_mu(f, ev, density=1.0) for f, w in fractions.items())
    return density * mass_mu


def fit(mu, energies=ENERGY_GRID):
    basis = np.column_stack([klein_nishina(energies), photoelectric_basis(energies)])
    w = 1.0 / mu
    coef, *_ = np.linalg.lstsq(basis * w[:, None], mu * w, rcond=None)
    rel = basis @ coef / mu - 1.0
    return coef, float(np.sqrt(np.mean(rel**2))), float(np.abs(rel).max())


def main():
    print(f"{'material':12s} {'c [1/cm]':>12s} {'p [keV/cm]':>12s} {'rms rel':>9s} {'max rel':>9s}")
    for name, (fractions, rho) in MATERIALS.items():
        (c, p), rms, worst = fit(linear_attenuation(fractions, rho, ENERGY_GRID))
        print(f"{name:12s} {c:12.6f} {p:12.2f} {rms:9.4f} {worst:9.4f}")


if __name__ == "__main__":
    main()
