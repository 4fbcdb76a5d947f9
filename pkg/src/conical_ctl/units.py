"""Unit system: lengths in Angstrom, times in fs, energies in eV, masses in amu.

Fields are in V/Angstrom and dipoles in e*Angstrom, so ``mu * F`` is already
an energy in eV.
"""

# CODATA 2018
_HBAR_J_S = 1.054571817e-34
_ELEMENTARY_CHARGE_C = 1.602176634e-19
_AMU_KG = 1.66053906660e-27

#: Reduced Planck constant in eV*fs.
HBAR = _HBAR_J_S / _ELEMENTARY_CHARGE_C * 1e15

#: Kinetic energy of 1 amu moving at 1 Angstrom/fs, in eV.
AMU_A2_PER_FS2 = _AMU_KG * 1e10 / _ELEMENTARY_CHARGE_C

#: hbar^2 / (1 amu * 1 Angstrom^2) in eV; prefactor of the kinetic operator.
HBAR2_OVER_AMU_A2 = HBAR**2 / AMU_A2_PER_FS2

#: 1 V/m expressed in V/Angstrom.
V_PER_M = 1e-10


def mass_to_internal(mass_amu):
    """Convert a mass in amu to eV*fs^2/Angstrom^2."""
    return mass_amu * AMU_A2_PER_FS2
