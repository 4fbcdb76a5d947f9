"""Linear-vibronic-coupling model: potentials, adiabatic rotation, fields.

Diabatic potential::

    W = [[W11, lam*y], [lam*y, W22]]
    Wii = kx_i (x - x_i)^2 + ky_i y^2 + kz_i z^2 - E

Adiabatic eigenvectors are parametrized by ``theta = atan2(2 lam y, W11 - W22) / 2``;
``(cos theta, sin theta)`` belongs to the upper eigenvalue and
``(-sin theta, cos theta)`` to the lower one.  Matrices returned by
:func:`adiabatic_transform` hold these as columns in ascending order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np
from scipy.special import erf

from conical_ctl.errors import ConfigError, DomainError
from conical_ctl.lattice import Lattice, WavepacketState
from conical_ctl.units import HBAR, mass_to_internal

X2 = 0.944
KAPPA_X2 = 0.25


@dataclass(frozen=True)
class ModelParams:
    """Model constants.  Defaults reproduce the published parameter table.

    Lengths in Angstrom, curvatures in eV/Angstrom^2, ``lam`` in eV/Angstrom,
    ``e_offset`` in eV, ``mass`` in amu and the transition dipole ``mu`` in
    e*Angstrom.  ``mu`` is not part of the table; see README for the choice.
    """

    x2: float = X2
    x1: float = -1.118 * X2
    x0: float = -1.32 * X2
    kappa_x2: float = KAPPA_X2
    kappa_x1: float = 0.8 * KAPPA_X2
    kappa_y1: float = 0.4 * KAPPA_X2
    kappa_y2: float = 0.4 * KAPPA_X2
    kappa_z1: float = 0.4 * KAPPA_X2
    kappa_z2: float = 0.4 * KAPPA_X2
    lam: float = 0.0424 * KAPPA_X2 / X2
    e_offset: float = 0.8 * KAPPA_X2 * (1.118 * X2) ** 2
    mass: float = 1.0
    mu: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"model.{f.name} must be a finite number, got {v!r}")
        for name in ("kappa_x1", "kappa_x2", "kappa_y1", "kappa_y2", "kappa_z1", "kappa_z2", "mass"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if self.mu < 0:
            raise ConfigError("model.mu must be non-negative")

    @property
    def mass_internal(self) -> float:
        """Mass in eV*fs^2/Angstrom^2."""
        return mass_to_internal(self.mass)

    @property
    def z_separable(self) -> bool:
        """True when z enters both diabats identically and factors out."""
        return self.kappa_z1 == self.kappa_z2

    def with_overrides(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


FIELD_KINDS = ("off", "continuous", "pulsed")


@dataclass(frozen=True)
class FieldSpec:
    """Control field.

    ``amplitude`` in V/Angstrom (1e9 V/m = 0.1 V/Angstrom), ``photon_energy``
    in eV, ``cep`` in radians, ``duration`` and ``delay`` in fs.  A pulse has
    a sine-squared envelope of full length ``duration`` starting at ``delay``;
    the carrier-envelope phase is measured at the envelope peak::

        F(t) = F sin^2(pi s / duration) cos(omega (s - duration / 2) + cep),  s = t - delay
    """

    kind: str = "off"
    amplitude: float = 0.0
    photon_energy: float = 0.0
    cep: float = 0.0
    duration: float = 6.0
    delay: float = 0.0

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ConfigError(f"field.kind must be one of {FIELD_KINDS}, got {self.kind!r}")
        for name in ("amplitude", "photon_energy", "cep", "duration", "delay"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"field.{name} must be a finite number, got {v!r}")
        if self.amplitude < 0:
            raise ConfigError("field.amplitude must be >= 0")
        if self.photon_energy < 0:
            raise ConfigError("field.photon_energy must be >= 0")
        if self.kind == "pulsed" and self.duration <= 0:
            raise ConfigError("field.duration must be > 0 for a pulsed field")

    @property
    def omega(self) -> float:
        """Carrier angular frequency in 1/fs."""
        return self.photon_energy / HBAR

    def amplitude_at(self, t):
        """Instantaneous field F(t) in V/Angstrom; accepts scalars or arrays."""
        t = np.asarray(t, dtype=float)
        if self.kind == "off" or self.amplitude == 0.0:
            out = np.zeros_like(t)
        elif self.kind == "continuous":
            out = self.amplitude * np.cos(self.omega * t + self.cep)
        else:
            s = t - self.delay
            inside = (s >= 0.0) & (s <= self.duration)
            env = np.sin(np.pi * s / self.duration) ** 2
            carrier = np.cos(self.omega * (s - 0.5 * self.duration) + self.cep)
            out = np.where(inside, self.amplitude * env * carrier, 0.0)
        return float(out) if out.ndim == 0 else out


def field_amplitude(field: FieldSpec, t):
    return field.amplitude_at(t)


def diabatic_elements(params: ModelParams, x, y, z):
    """Return ``(W11, W22, W12)`` broadcast over the inputs."""
    p = params
    w11 = p.kappa_x1 * (x - p.x1) ** 2 + p.kappa_y1 * y**2 + p.kappa_z1 * z**2 - p.e_offset
    w22 = p.kappa_x2 * (x - p.x2) ** 2 + p.kappa_y2 * y**2 + p.kappa_z2 * z**2 - p.e_offset
    w12 = p.lam * y
    return w11, w22, w12


def diabatic_matrix(params: ModelParams, x, y, z) -> np.ndarray:
    """Symmetric 2x2 diabatic potential (eV); stacked as ``(..., 2, 2)`` for arrays."""
    w11, w22, w12 = np.broadcast_arrays(*diabatic_elements(params, x, y, z))
    out = np.empty(w11.shape + (2, 2))
    out[..., 0, 0] = w11
    out[..., 1, 1] = w22
    out[..., 0, 1] = w12
    out[..., 1, 0] = w12
    return out


def _half_gap(w11, w22, w12):
    return np.hypot(0.5 * (w11 - w22), w12)


def rotation_angle(params: ModelParams, x, y, z):
    w11, w22, w12 = diabatic_elements(params, x, y, z)
    if np.any(_half_gap(w11, w22, w12) == 0.0):
        raise DomainError("adiabatic rotation requested exactly at the CI degeneracy")
    return 0.5 * np.arctan2(2.0 * w12, w11 - w22)


def adiabatic_transform(params: ModelParams, x, y, z):
    """Rotation angle and orthogonal matrix with columns (lower, upper).

    ``U.T @ W @ U`` is ``diag(V_lower, V_upper)``.
    """
    theta = rotation_angle(params, x, y, z)
    c, s = np.cos(theta), np.sin(theta)
    u = np.empty(np.shape(theta) + (2, 2))
    u[..., 0, 0] = -s
    u[..., 1, 0] = c
    u[..., 0, 1] = c
    u[..., 1, 1] = s
    return theta, u


def adiabatic_eigenvalues(params: ModelParams, x, y, z):
    """``(V_lower, V_upper)`` in eV."""
    w11, w22, w12 = diabatic_elements(params, x, y, z)
    mean = 0.5 * (w11 + w22)
    half = _half_gap(w11, w22, w12)
    return mean - half, mean + half


def adiabatic_gap(params: ModelParams, x, y, z):
    w11, w22, w12 = diabatic_elements(params, x, y, z)
    return 2.0 * _half_gap(w11, w22, w12)


def dipole_matrix(params: ModelParams, field: FieldSpec, t: float) -> np.ndarray:
    """Adiabatic-picture dipole coupling (eV); zero diagonal, Condon approximation."""
    v = params.mu * field.amplitude_at(t)
    return np.array([[0.0, v], [v, 0.0]])


def coherent_widths(params: ModelParams) -> tuple[float, float, float]:
    """Ground-state widths of the second diabat along x, y and z.

    sigma_q^2 = hbar / (2 m w_q) with w_q = sqrt(2 kappa_q2 / m); sigma_q is
    the standard deviation of |psi|^2.
    """
    m = params.mass_internal
    out = []
    for kappa in (params.kappa_x2, params.kappa_y2, params.kappa_z2):
        omega = math.sqrt(2.0 * kappa / m)
        out.append(math.sqrt(HBAR / (2.0 * m * omega)))
    return tuple(out)


def _outside_fraction(lattice: Lattice, centers, sigmas) -> float:
    inside = 1.0
    spec = lattice.spec
    for q, c, s in zip("xyz", centers, sigmas):
        if getattr(spec, f"n_{q}") == 1:
            continue
        lo, hi = getattr(spec, f"lo_{q}"), getattr(spec, f"hi_{q}")
        inside *= 0.5 * (erf((hi - c) / (math.sqrt(2) * s)) - erf((lo - c) / (math.sqrt(2) * s)))
    return 1.0 - inside


def initial_coherent_state(
    params: ModelParams, lattice: Lattice, x_start: Optional[float] = None
) -> WavepacketState:
    """Displaced ground-state Gaussian on diabat 2 at rest; diabat 1 empty.

    Normalized on the grid to unit total probability.
    """
    x0 = params.x0 if x_start is None else x_start
    widths = coherent_widths(params)
    leak = _outside_fraction(lattice, (x0, 0.0, 0.0), widths)
    if leak > 1e-6:
        raise ConfigError(
            f"initial wavepacket has {leak:.2e} of its norm outside the grid; enlarge the box"
        )
    sx, sy, sz = widths
    gx = np.exp(-((lattice.x - x0) ** 2) / (4 * sx**2))
    gy = np.exp(-(lattice.y**2) / (4 * sy**2))
    gz = np.exp(-(lattice.z**2) / (4 * sz**2)) if lattice.spec.n_z > 1 else np.ones(1)
    g = gx[:, None, None] * gy[None, :, None] * gz[None, None, :]
    psi = np.zeros((2, *lattice.shape), dtype=np.complex128)
    psi[1] = g
    psi /= math.sqrt(np.vdot(psi, psi).real * lattice.dV)
    return WavepacketState(lattice, psi, 0.0)
