"""Sequential Landau-Zener model of laser-assisted passage through the CI.

The excited-state yield is composed from two pathways::

    P_E = P_L * P_CI + (1 - P_L) * P_R

P_L: photo-transfer to the lower surface at the first one-photon resonance
(x < 0); P_CI: diabatic passage through the CI on the lower surface; P_R:
photo-excitation at the resonance on the far side (x > 0).  Passage through
the CI on the no-photon pathway is taken as fully diabatic.

Speeds come from classical motion along x on a fixed (y, z) slice.  The
transverse coordinates are frozen per trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from conical_ctl.errors import DomainError
from conical_ctl.hamiltonian import (
    FieldSpec,
    ModelParams,
    adiabatic_eigenvalues,
    coherent_widths,
    diabatic_elements,
)
from conical_ctl.units import HBAR

SURFACES = ("diabat1", "diabat2", "lower", "upper")


def surface_potential(params: ModelParams, surface: str, x, y=0.0, z=0.0):
    w11, w22, _ = diabatic_elements(params, x, y, z)
    if surface == "diabat1":
        return w11
    if surface == "diabat2":
        return w22
    lower, upper = adiabatic_eigenvalues(params, x, y, z)
    if surface == "lower":
        return lower
    if surface == "upper":
        return upper
    raise ValueError(f"unknown surface {surface!r}; expected one of {SURFACES}")


def surface_force(params: ModelParams, surface: str, x, y=0.0, z=0.0):
    """-dV/dx along the slice."""
    p = params
    d1 = 2.0 * p.kappa_x1 * (x - p.x1)
    d2 = 2.0 * p.kappa_x2 * (x - p.x2)
    if surface == "diabat1":
        return -d1
    if surface == "diabat2":
        return -d2
    w11, w22, w12 = diabatic_elements(p, x, y, z)
    delta = 0.5 * (w11 - w22)
    g = math.hypot(delta, w12) if np.ndim(delta) == 0 else np.hypot(delta, w12)
    dmean = 0.5 * (d1 + d2)
    dhalf = delta * 0.5 * (d1 - d2) / g
    if surface == "lower":
        return -(dmean - dhalf)
    if surface == "upper":
        return -(dmean + dhalf)
    raise ValueError(f"unknown surface {surface!r}; expected one of {SURFACES}")


@dataclass
class Trajectory:
    """Classical path along x on one surface with (y, z) held fixed."""

    params: ModelParams
    surface: str
    y: float
    z: float
    E0: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def energy(self) -> np.ndarray:
        m = self.params.mass_internal
        return surface_potential(self.params, self.surface, self.x, self.y, self.z) + 0.5 * m * self.v**2

    def speed_at(self, x: float) -> float:
        """|v| at position ``x`` from energy conservation."""
        ke = self.E0 - float(surface_potential(self.params, self.surface, x, self.y, self.z))
        if ke < 0:
            raise DomainError(f"x={x:.4f} A is classically forbidden on {self.surface} at E0={self.E0:.4f} eV")
        return math.sqrt(2.0 * ke / self.params.mass_internal)

    def time_at(self, x: float) -> Optional[float]:
        """First time the path crosses ``x`` (linear interpolation), or None."""
        s = self.x - x
        idx = np.nonzero(np.sign(s[:-1]) != np.sign(s[1:]))[0]
        if len(idx) == 0:
            return None
        i = idx[0]
        if s[i] == 0.0:
            return float(self.t[i])
        return float(self.t[i] - s[i] * (self.t[i + 1] - self.t[i]) / (s[i + 1] - s[i]))


def classical_trajectory(
    params: ModelParams,
    x_start: float,
    surface: str = "diabat2",
    E0: Optional[float] = None,
    y: float = 0.0,
    z: float = 0.0,
    t_max: float = 60.0,
    dt: float = 0.01,
    direction: float = 1.0,
) -> Trajectory:
    """Integrate m x'' = -dV/dx with fixed-step RK4.

    ``E0`` defaults to the potential at ``x_start`` (start at rest); a larger
    value gives an initial speed along ``direction``.
    """
    m = params.mass_internal
    v_start_pot = float(surface_potential(params, surface, x_start, y, z))
    if E0 is None:
        E0 = v_start_pot
    ke = E0 - v_start_pot
    if ke < -1e-12:
        raise DomainError(f"E0={E0} eV lies below the surface at x_start={x_start}")
    v = math.copysign(math.sqrt(2.0 * max(ke, 0.0) / m), direction)
    n = int(round(t_max / dt))

    def acc(xx):
        return float(surface_force(params, surface, xx, y, z)) / m

    xs = np.empty(n + 1)
    vs = np.empty(n + 1)
    x = float(x_start)
    xs[0], vs[0] = x, v
    for i in range(1, n + 1):
        k1x, k1v = v, acc(x)
        k2x, k2v = v + 0.5 * dt * k1v, acc(x + 0.5 * dt * k1x)
        k3x, k3v = v + 0.5 * dt * k2v, acc(x + 0.5 * dt * k2x)
        k4x, k4v = v + dt * k3v, acc(x + dt * k3x)
        x += dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v += dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        xs[i], vs[i] = x, v
    return Trajectory(params, surface, y, z, float(E0), np.arange(n + 1) * dt, xs, vs)


# -- resonances ---------------------------------------------------------------


def slice_gap(params: ModelParams, x, y=0.0, z=0.0):
    lower, upper = adiabatic_eigenvalues(params, x, y, z)
    return upper - lower


def gap_slope(params: ModelParams, x: float, y: float = 0.0, z: float = 0.0) -> float:
    """d(gap)/dx on the slice, analytic."""
    p = params
    w11, w22, w12 = diabatic_elements(p, x, y, z)
    delta = w11 - w22
    ddelta = 2.0 * p.kappa_x1 * (x - p.x1) - 2.0 * p.kappa_x2 * (x - p.x2)
    return float(delta * ddelta / math.hypot(delta, 2.0 * w12))


def seam_x(params: ModelParams) -> float:
    """x on the y = 0 line where the two diabats cross (closest to the origin)."""
    p = params
    a = p.kappa_x1 - p.kappa_x2
    b = -2.0 * (p.kappa_x1 * p.x1 - p.kappa_x2 * p.x2)
    c = p.kappa_x1 * p.x1**2 - p.kappa_x2 * p.x2**2
    if a == 0.0:
        return -c / b
    disc = math.sqrt(b * b - 4 * a * c)
    roots = ((-b + disc) / (2 * a), (-b - disc) / (2 * a))
    return min(roots, key=abs)


@dataclass
class Resonances:
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)


def find_resonances(
    params: ModelParams,
    photon_energy: float,
    y: float = 0.0,
    z: float = 0.0,
    x_range: tuple = (-6.0, 6.0),
    n_scan: int = 1201,
    xtol: float = 1e-7,
) -> Resonances:
    """Positions where the slice gap equals the photon energy, split at x = 0."""
    if not photon_energy > 0:
        raise ValueError("photon_energy must be > 0")
    xs = np.linspace(*x_range, n_scan)
    f = slice_gap(params, xs, y, z) - photon_energy
    out = Resonances()
    for i in np.nonzero(np.sign(f[:-1]) != np.sign(f[1:]))[0]:
        if f[i] == 0.0:
            root = xs[i]
        else:
            root = bisect(
                lambda xx: float(slice_gap(params, xx, y, z)) - photon_energy,
                xs[i], xs[i + 1], xtol=xtol,
            )
        (out.left if root < 0 else out.right).append(float(root))
    return out


# -- transition probabilities --------------------------------------------------


def ci_slope(params: ModelParams) -> float:
    """|d(W11 - W22)/dx| at the diabatic crossing."""
    p = params
    xs = seam_x(p)
    return abs(2.0 * p.kappa_x1 * (xs - p.x1) - 2.0 * p.kappa_x2 * (xs - p.x2))


def p_ci(params: ModelParams, v_ci: float, y: float, slope: Optional[float] = None) -> float:
    """Landau-Zener probability of staying on the diabat through the CI."""
    if not v_ci > 0:
        raise DomainError("v_ci must be > 0")
    slope = ci_slope(params) if slope is None else slope
    coupling = params.lam * abs(y)
    return math.exp(-2.0 * math.pi * coupling**2 / (HBAR * v_ci * slope))


def p_laser(params: ModelParams, amplitude: float, v: float, slope: float) -> float:
    """Probability of photo-transfer while sweeping through a one-photon resonance.

    ``1 - exp(-pi Omega^2 hbar / (2 v |slope|))`` with Omega = mu F / hbar; v = 0
    (passage from rest) gives 1.
    """
    if slope == 0.0:
        raise DomainError("degenerate resonance: gap slope is zero")
    if v < 0:
        raise DomainError("speed must be non-negative")
    rabi = params.mu * amplitude / HBAR
    if rabi == 0.0:
        return 0.0
    if v == 0.0:
        return 1.0
    return -math.expm1(-math.pi * rabi**2 * HBAR / (2.0 * v * abs(slope)))


def validity_ratio(params: ModelParams, field_: FieldSpec, photon_energy: Optional[float] = None) -> float:
    """Rabi frequency over generalized Rabi frequency at the CI (gap = 0).

    The detuning enters squared.
    """
    hw = field_.photon_energy if photon_energy is None else photon_energy
    rabi_e = params.mu * field_.amplitude
    if rabi_e == 0.0 and hw == 0.0:
        return 1.0
    return rabi_e / math.hypot(rabi_e, hw)


@dataclass
class PathwayResult:
    photon_energy: float
    P_L: float
    P_CI: float
    P_R: float
    P_E: float
    validity_ratio: float
    stderr: float = 0.0
    n_samples: int = 1

    def as_row(self) -> dict:
        return {
            "hw_eV": self.photon_energy,
            "P_L": self.P_L,
            "P_CI_mean": self.P_CI,
            "P_R": self.P_R,
            "P_E": self.P_E,
            "stderr": self.stderr,
            "validity_ratio": self.validity_ratio,
        }


def pathway_total(
    params: ModelParams,
    field_: FieldSpec,
    photon_energy: float,
    sample_point: tuple = (None, 0.0),
) -> PathwayResult:
    """Compose the two pathways for one starting point ``(x_init, y_init)`` at rest.

    ``x_init=None`` uses ``params.x0``.  A missing left resonance gives
    P_L = 0; a left pathway without enough energy left to reach the CI after
    emitting the photon contributes nothing.
    """
    x_init, y = sample_point
    x_init = params.x0 if x_init is None else float(x_init)
    y = float(y)
    m = params.mass_internal
    F = field_.amplitude if field_.kind != "off" else 0.0
    vr = validity_ratio(params, FieldSpec("continuous", F, photon_energy), photon_energy)
    if photon_energy <= 0 or F == 0.0:
        return PathwayResult(photon_energy, 0.0, 1.0, 0.0, 0.0, vr)

    e0 = float(surface_potential(params, "upper", x_init, y))
    res = find_resonances(params, photon_energy, y)

    p_l, p_c = 0.0, 0.0
    ahead = [xr for xr in res.left if xr >= x_init]
    if ahead:
        x_l = min(ahead)
        ke = e0 - float(surface_potential(params, "upper", x_l, y))
        v_l = math.sqrt(2.0 * max(ke, 0.0) / m)
        p_l = p_laser(params, F, v_l, gap_slope(params, x_l, y))
        w11s, _, _ = diabatic_elements(params, seam_x(params), y, 0.0)
        ke_ci = e0 - photon_energy - float(w11s)
        if ke_ci > 0:
            p_c = p_ci(params, math.sqrt(2.0 * ke_ci / m), y)

    p_r = 0.0
    reachable = [
        xr for xr in res.right
        if float(surface_potential(params, "lower", xr, y)) <= e0
    ]
    if reachable:
        x_r = min(reachable)
        ke = e0 - float(surface_potential(params, "lower", x_r, y))
        v_r = math.sqrt(2.0 * ke / m)
        p_r = p_laser(params, F, v_r, gap_slope(params, x_r, y))

    p_e = p_l * p_c + (1.0 - p_l) * p_r
    return PathwayResult(photon_energy, p_l, p_c, p_r, p_e, vr)


def ensemble_average(
    params: ModelParams,
    field_: FieldSpec,
    photon_energy: float,
    n_samples: int = 2000,
    seed: int = 0,
) -> PathwayResult:
    """Average the pathway model over starting points drawn from |psi_0|^2.

    x and y are Gaussian with the coherent-state widths; z is fixed at 0 and
    initial momenta are zero.  ``stderr`` is the standard error of P_E.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sx, sy, _ = coherent_widths(params)
    rng = np.random.default_rng(seed)
    xs = rng.normal(params.x0, sx, n_samples)
    ys = rng.normal(0.0, sy, n_samples)
    rows = np.array(
        [
            [r.P_L, r.P_CI, r.P_R, r.P_E]
            for r in (pathway_total(params, field_, photon_energy, (x, y)) for x, y in zip(xs, ys))
        ]
    )
    mean = rows.mean(axis=0)
    stderr = float(rows[:, 3].std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    F = field_.amplitude if field_.kind != "off" else 0.0
    return PathwayResult(
        photon_energy=photon_energy,
        P_L=float(mean[0]),
        P_CI=float(mean[1]),
        P_R=float(mean[2]),
        P_E=float(mean[3]),
        validity_ratio=validity_ratio(params, FieldSpec("continuous", F, photon_energy), photon_energy),
        stderr=stderr,
        n_samples=n_samples,
    )
