"""Reductions of propagated states into plotted quantities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit

from conical_ctl.errors import ConfigError
from conical_ctl.hamiltonian import ModelParams, rotation_angle
from conical_ctl.lattice import Lattice, WavepacketState, norm, y_marginal

#: Lineout positions for the delay scan (Angstrom).
DEFAULT_LINEOUT_Y = (0.18, -0.18)


def _rotation(state: WavepacketState, params: Optional[ModelParams], theta=None):
    if theta is None:
        X, Y, Z = state.lattice.mesh()
        theta = rotation_angle(params, X, Y, Z)
    return np.cos(theta), np.sin(theta)


def adiabatic_components(state: WavepacketState, params: Optional[ModelParams] = None, theta=None):
    """Project onto the (lower, upper) adiabatic states at every grid point.

    Pass ``theta`` (e.g. ``ops.theta``) to skip recomputing the rotation field.
    """
    c, s = _rotation(state, params, theta)
    p1, p2 = state.psi[0], state.psi[1]
    return -s * p1 + c * p2, c * p1 + s * p2


def adiabatic_populations(
    state: WavepacketState, params: Optional[ModelParams] = None, theta=None
) -> tuple[float, float]:
    """Return ``(p_ground, p_excited)``: integrated |.|^2 of each adiabatic branch."""
    lower, upper = adiabatic_components(state, params, theta)
    dV = state.lattice.dV
    return float(np.vdot(lower, lower).real * dV), float(np.vdot(upper, upper).real * dV)


def excited_y_marginal(state: WavepacketState, params: Optional[ModelParams] = None, theta=None):
    """rho(y) of the upper adiabatic component."""
    _, upper = adiabatic_components(state, params, theta)
    return y_marginal(upper, state.lattice)


def asymmetry(rho: np.ndarray, y: np.ndarray, dy: float) -> float:
    """Integral of rho over y > 0 minus the integral over y < 0."""
    rho = np.asarray(rho)
    return float((rho[y > 0].sum() - rho[y < 0].sum()) * dy)


def mirror_values(rho: np.ndarray, y: np.ndarray, yq: np.ndarray) -> np.ndarray:
    """Linear interpolation of rho at -yq (for parity checks on shifted grids)."""
    return np.interp(-np.asarray(yq), y, rho)


@dataclass
class PopulationTrace:
    times: np.ndarray
    p_ground: np.ndarray
    p_excited: np.ndarray
    norms: np.ndarray

    def at(self, t_probe: float) -> float:
        return excited_yield_at(self, t_probe)


@dataclass
class AsymmetryRecord:
    y: np.ndarray
    rho_y: np.ndarray
    A: float
    lineouts: dict = field(default_factory=dict)

    @classmethod
    def from_rho(cls, rho, lattice: Lattice, lineout_y: Iterable[float] = ()):
        y = lattice.y
        lo = {float(v): float(rho[nearest_index(y, v)]) for v in lineout_y}
        return cls(y=np.asarray(y), rho_y=np.asarray(rho), A=asymmetry(rho, y, lattice.dy), lineouts=lo)


class PopulationObserver:
    """Observer for :func:`conical_ctl.propagator.run` recording adiabatic populations.

    ``marginal_times`` lists times (fs) at which the excited-state y-marginal is
    also stored, keyed by time in ``self.marginals``.
    """

    def __init__(self, params: ModelParams, theta=None, marginal_times: Sequence[float] = (), tol=1e-9):
        self.params = params
        self.theta = theta
        self.marginal_times = list(marginal_times)
        self.tol = tol
        self.marginals: dict[float, np.ndarray] = {}

    def __call__(self, t: float, state: WavepacketState):
        lower, upper = adiabatic_components(state, self.params, self.theta)
        dV = state.lattice.dV
        pg = float(np.vdot(lower, lower).real * dV)
        pe = float(np.vdot(upper, upper).real * dV)
        for tm in self.marginal_times:
            if abs(t - tm) < self.tol:
                self.marginals[tm] = y_marginal(upper, state.lattice)
        return (t, pg, pe, norm(state))


def population_trace(records) -> PopulationTrace:
    arr = np.asarray(records, dtype=float).reshape(-1, 4)
    return PopulationTrace(times=arr[:, 0], p_ground=arr[:, 1], p_excited=arr[:, 2], norms=arr[:, 3])


def excited_yield_at(trace: PopulationTrace, t_probe: float = 30.0) -> float:
    """Excited adiabatic population at the snapshot nearest ``t_probe``."""
    times = np.asarray(trace.times)
    if len(times) == 0 or t_probe > times[-1] + 1e-9:
        raise ConfigError(f"t_probe={t_probe} fs lies beyond the end of the run")
    i = int(np.argmin(np.abs(times - t_probe)))
    return float(trace.p_excited[i])


def nearest_index(grid: np.ndarray, value: float) -> int:
    return int(np.argmin(np.abs(np.asarray(grid) - value)))


@dataclass
class DelayScanMap:
    delays: np.ndarray
    y: np.ndarray
    rho: np.ndarray
    difference: np.ndarray
    reference_delay: float
    lineouts: dict


def delay_scan_difference(
    records: Mapping[float, np.ndarray],
    reference_delay: float,
    y: np.ndarray,
    lineout_y: Iterable[float] = DEFAULT_LINEOUT_Y,
    tol: float = 1e-9,
) -> DelayScanMap:
    """Subtract the reference-delay marginal from every delay's marginal.

    Lineouts are read at the grid points nearest each requested y.
    """
    delays = np.array(sorted(records))
    ref = [d for d in delays if abs(d - reference_delay) < tol]
    if not ref:
        raise ConfigError(f"reference delay {reference_delay} fs is not among the scanned delays")
    rho = np.array([records[d] for d in delays])
    diff = rho - np.asarray(records[ref[0]])[None, :]
    lineouts = {float(v): diff[:, nearest_index(y, v)].copy() for v in lineout_y}
    return DelayScanMap(
        delays=delays, y=np.asarray(y), rho=rho, difference=diff,
        reference_delay=float(ref[0]), lineouts=lineouts,
    )


# -- oscillation analysis ----------------------------------------------------


def zero_crossings(t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Linearly interpolated times where ``s`` changes sign."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    out = []
    for i in range(len(s) - 1):
        a, b = s[i], s[i + 1]
        if a == 0.0:
            if i == 0 or np.sign(s[i - 1]) != np.sign(b):
                out.append(t[i])
        elif a * b < 0.0:
            out.append(t[i] - a * (t[i + 1] - t[i]) / (b - a))
    return np.array(out)


def local_extrema(t: np.ndarray, s: np.ndarray, crossings: np.ndarray):
    """Largest |s| between consecutive zero crossings: ``(times, magnitudes)``."""
    t = np.asarray(t)
    s = np.asarray(s)
    times, mags = [], []
    for a, b in zip(crossings, crossings[1:]):
        sel = (t > a) & (t < b)
        if sel.any():
            k = np.argmax(np.abs(s[sel]))
            times.append(t[sel][k])
            mags.append(abs(s[sel][k]))
    return np.array(times), np.array(mags)


def chirped_damped_sine(t, amp, decay, omega0, chirp, phase, offset):
    """amp * exp(-decay t) * cos(omega0 t + chirp t^2 / 2 + phase) + offset, t from scan start."""
    return amp * np.exp(-decay * t) * np.cos(omega0 * t + 0.5 * chirp * t**2 + phase) + offset


@dataclass
class OscillationFit:
    params: dict
    crossings: np.ndarray
    spacings: np.ndarray
    peak_times: np.ndarray
    peak_magnitudes: np.ndarray
    success: bool


def fit_damped_oscillation(t: np.ndarray, s: np.ndarray) -> OscillationFit:
    """Fit a damped sinusoid whose phase grows quadratically with time.

    Zero crossings are taken from the data itself; the fit only supplies the
    smooth guide curve.  The initial frequency guess comes from the first
    crossing spacing.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    tt = t - t[0]
    crossings = zero_crossings(t, s)
    spacings = np.diff(crossings)
    peak_t, peak_m = local_extrema(t, s, crossings)
    omega0 = np.pi / spacings[0] if len(spacings) else 2 * np.pi / max(tt[-1], 1e-9)
    p0 = [np.max(np.abs(s)) or 1.0, 0.05, omega0, 0.0, 0.0, 0.0]
    popt, success = np.array(p0), False
    if len(s) > len(p0):
        try:
            popt, _ = curve_fit(chirped_damped_sine, tt, s, p0=p0, maxfev=20000)
            success = True
        except (RuntimeError, ValueError):
            pass
    names = ("amp", "decay", "omega0", "chirp", "phase", "offset")
    return OscillationFit(
        params=dict(zip(names, map(float, popt))),
        crossings=crossings,
        spacings=spacings,
        peak_times=peak_t,
        peak_magnitudes=peak_m,
        success=success,
    )
