"""Three-factor split-operator propagation in the diabatic picture.

One step applies, right to left::

    U_A exp(-i D(t) dt) U_A^T  exp(-i W dt)  F^-1 exp(-i T dt) F

The dipole factor is a rotation in the adiabatic basis.  Composed with the
basis change it becomes ``cos(a) 1 - i sin(a) M`` where
``M = [[-sin 2theta, cos 2theta], [cos 2theta, sin 2theta]]`` and
``a = mu F(t) dt / hbar``.  ``M`` depends on theta only through 2*theta, so the
sign ambiguity of the adiabatic eigenvectors never enters the propagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.fft

from conical_ctl.errors import ConfigError, NumericalFailure
from conical_ctl.hamiltonian import (
    FieldSpec,
    ModelParams,
    coherent_widths,
    diabatic_elements,
    initial_coherent_state,
)
from conical_ctl.lattice import (
    GridSpec,
    Lattice,
    WavepacketState,
    build_lattice,
    fft_backward,
    fft_forward,
    norm,
)
from conical_ctl.units import HBAR, HBAR2_OVER_AMU_A2

SPLITTINGS = ("lie", "strang")
FIELD_TIMES = ("start", "midpoint")


@dataclass(frozen=True)
class PropagatorConfig:
    """Time stepping.

    ``splitting="strang"`` and ``field_time="midpoint"`` exist for validating
    the default first-order scheme; production runs use the defaults.
    """

    dt: float = 0.1
    t_end: float = 30.0
    observer_stride: int = 1
    splitting: str = "lie"
    field_time: str = "start"
    nan_check_every: int = 50
    workers: Optional[int] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("propagation.dt must be > 0")
        if not self.t_end >= 0:
            raise ConfigError("propagation.t_end must be >= 0")
        if int(self.observer_stride) != self.observer_stride or self.observer_stride < 1:
            raise ConfigError("propagation.observer_stride must be an integer >= 1")
        if self.splitting not in SPLITTINGS:
            raise ConfigError(f"propagation.splitting must be one of {SPLITTINGS}")
        if self.field_time not in FIELD_TIMES:
            raise ConfigError(f"propagation.field_time must be one of {FIELD_TIMES}")
        n = self.t_end / self.dt
        if abs(n - round(n)) > 1e-6:
            raise ConfigError(
                f"propagation.t_end={self.t_end} is not a multiple of dt={self.dt}"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def diabatic_step_elements(w11, w22, w12, tau):
    """Entries of exp(-i W tau / hbar) for a symmetric real 2x2 ``W``.

    Uses the eigen-decomposition in closed form::

        exp(-i W tau/hbar) = exp(-i m tau/hbar) [cos(g tau/hbar) 1 - i sin(g tau/hbar) (W - m)/g]

    with m the mean of the diagonal and g half the gap.  Returns ``(u11, u22, u12)``;
    the matrix is symmetric (u21 = u12).
    """
    mean = 0.5 * (w11 + w22)
    delta = 0.5 * (w11 - w22)
    g = np.hypot(delta, w12)
    phase = np.exp(-1j * mean * (tau / HBAR))
    c = np.cos(g * (tau / HBAR))
    # sin(g tau)/g, finite as g -> 0
    sinc = (tau / HBAR) * np.sinc(g * (tau / HBAR) / np.pi)
    u11 = phase * (c - 1j * sinc * delta)
    u22 = phase * (c + 1j * sinc * delta)
    u12 = phase * (-1j * sinc * w12)
    return u11, u22, u12


@dataclass(eq=False)
class PrecomputedOperators:
    """Time-independent factors of one step, cached per lattice and dt.

    ``kinetic`` is exp(-i hbar k^2 tau / 2m) on the momentum mesh, with
    tau = dt (Lie) or dt/2 (Strang).  ``w11, w22, w12`` are the entries of the
    per-point diabatic exponential (tau = dt for Lie, dt/2 for Strang).
    ``sin2t`` and ``cos2t`` describe the adiabatic rotation field.
    """

    lattice: Lattice
    dt: float
    splitting: str
    kinetic: np.ndarray
    w11: np.ndarray
    w22: np.ndarray
    w12: np.ndarray
    theta: np.ndarray
    sin2t: np.ndarray
    cos2t: np.ndarray
    kinetic_energy: np.ndarray = field(repr=False)
    potential: tuple = field(repr=False)


def precompute(
    params: ModelParams, lattice: Lattice, config: PropagatorConfig
) -> PrecomputedOperators:
    X, Y, Z = lattice.mesh()
    w11, w22, w12 = np.broadcast_arrays(*diabatic_elements(params, X, Y, Z))
    half = np.hypot(0.5 * (w11 - w22), w12)
    if np.any(half == 0.0):
        raise ConfigError(
            "the grid contains the CI degeneracy point; enable grid.offset_y or shift the y axis"
        )
    tau = config.dt if config.splitting == "lie" else 0.5 * config.dt
    ekin = 0.5 * HBAR2_OVER_AMU_A2 / params.mass * lattice.k_squared()
    kinetic = np.exp(-1j * ekin * (tau / HBAR))
    u11, u22, u12 = diabatic_step_elements(w11, w22, w12, tau)
    theta = 0.5 * np.arctan2(2.0 * w12, w11 - w22)
    return PrecomputedOperators(
        lattice=lattice,
        dt=config.dt,
        splitting=config.splitting,
        kinetic=kinetic,
        w11=u11,
        w22=u22,
        w12=u12,
        theta=theta,
        sin2t=w12 / half,
        cos2t=0.5 * (w11 - w22) / half,
        kinetic_energy=ekin,
        potential=(np.ascontiguousarray(w11), np.ascontiguousarray(w22), np.ascontiguousarray(w12)),
    )


def _kinetic(psi, ops, workers):
    phi = fft_forward(psi, workers=workers)
    phi *= ops.kinetic
    return fft_backward(phi, workers=workers)


def _diabatic(psi, ops):
    p1, p2 = psi[0], psi[1]
    out = np.empty_like(psi)
    np.multiply(ops.w11, p1, out=out[0])
    out[0] += ops.w12 * p2
    np.multiply(ops.w22, p2, out=out[1])
    out[1] += ops.w12 * p1
    return out


def dipole_kick(psi, ops, alpha):
    """Apply U_A exp(-i alpha sigma_x) U_A^T in place (diabatic components)."""
    if alpha == 0.0:
        return psi
    ca, sa = math.cos(alpha), math.sin(alpha)
    p1, p2 = psi[0].copy(), psi[1]
    mp1 = -ops.sin2t * p1 + ops.cos2t * p2
    mp2 = ops.cos2t * p1 + ops.sin2t * p2
    psi[0] = ca * p1 - 1j * sa * mp1
    psi[1] = ca * p2 - 1j * sa * mp2
    return psi


def dipole_kick_explicit(psi, ops, alpha):
    """Reference form: rotate to the adiabatic basis, kick, rotate back."""
    c, s = np.cos(ops.theta), np.sin(ops.theta)
    lower = -s * psi[0] + c * psi[1]
    upper = c * psi[0] + s * psi[1]
    ca, sa = math.cos(alpha), math.sin(alpha)
    lower, upper = ca * lower - 1j * sa * upper, ca * upper - 1j * sa * lower
    return np.stack([-s * lower + c * upper, c * lower + s * upper])


def _alpha(params, field_, t, dt, config):
    if field_ is None or field_.kind == "off":
        return 0.0
    t_eval = t + 0.5 * dt if config.field_time == "midpoint" else t
    return params.mu * field_.amplitude_at(t_eval) * dt / HBAR


def step(
    state: WavepacketState,
    ops: PrecomputedOperators,
    params: ModelParams,
    field_: Optional[FieldSpec],
    config: Optional[PropagatorConfig] = None,
) -> WavepacketState:
    """Advance ``state`` by ``ops.dt`` and return it (modified in place).

    The dipole factor uses the field at the start of the step unless
    ``config.field_time == "midpoint"``.
    """
    config = config or PropagatorConfig(dt=ops.dt, t_end=0.0, splitting=ops.splitting)
    workers = config.workers
    psi = state.psi
    alpha = _alpha(params, field_, state.t, ops.dt, config)
    if ops.splitting == "lie":
        psi = _kinetic(psi, ops, workers)
        psi = _diabatic(psi, ops)
        psi = dipole_kick(psi, ops, alpha)
    else:
        psi = _kinetic(psi, ops, workers)
        psi = _diabatic(psi, ops)
        psi = dipole_kick(psi, ops, alpha)
        psi = _diabatic(psi, ops)
        psi = _kinetic(psi, ops, workers)
    state.psi = psi
    state.t = state.t + ops.dt
    return state


Observer = Callable[[float, WavepacketState], object]


@dataclass
class RunResult:
    state: WavepacketState
    records: list = field(default_factory=list)
    norm_drift: float = 0.0


def run(
    state0: WavepacketState,
    params: ModelParams,
    field_: Optional[FieldSpec],
    config: PropagatorConfig,
    observer: Optional[Observer] = None,
    ops: Optional[PrecomputedOperators] = None,
) -> RunResult:
    """Propagate a copy of ``state0`` for ``config.n_steps`` steps.

    ``observer(t, state)`` is called before the first step and after every
    ``observer_stride`` steps; its return values are collected in
    ``RunResult.records``.  The caller's state is not modified.
    """
    if ops is None:
        ops = precompute(params, state0.lattice, config)
    elif ops.dt != config.dt or ops.splitting != config.splitting:
        raise ConfigError("precomputed operators were built for a different dt or splitting")
    state = state0.copy()
    n0 = norm(state)
    records = []
    if observer is not None:
        records.append(observer(state.t, state))
    n_steps = config.n_steps
    t0 = state.t
    for i in range(1, n_steps + 1):
        step(state, ops, params, field_, config)
        # avoid accumulating round-off in t
        state.t = t0 + i * config.dt
        if i % config.nan_check_every == 0 or i == n_steps:
            if not np.isfinite(state.psi).all():
                raise NumericalFailure(f"non-finite wavefunction after step {i}", step=i)
        if observer is not None and i % config.observer_stride == 0:
            records.append(observer(state.t, state))
    return RunResult(state=state, records=records, norm_drift=abs(norm(state) - n0))


def energy_expectation(
    state: WavepacketState, ops: PrecomputedOperators, synchronized: bool = False
) -> tuple[float, float]:
    """Return (<T>, <W>) in eV, field excluded.

    With ``synchronized=True`` the state is first advanced by half a
    kinetic step, exp(-i T dt / 2 hbar).  Lie steps conjugated by that shift
    are exactly Strang steps, so the shifted energy carries only the O(dt^2)
    splitting error instead of the O(dt) offset of the raw Lie iterate.
    Ignored for Strang operators, whose iterates are already synchronized.
    """
    lat = state.lattice
    phi = fft_forward(state.psi)
    psi = state.psi
    if synchronized and ops.splitting == "lie":
        phi = phi * np.exp(-1j * ops.kinetic_energy * (0.5 * ops.dt / HBAR))
        psi = fft_backward(phi)
    t_kin = float(np.sum((np.abs(phi) ** 2) * ops.kinetic_energy) * lat.dV)
    w11, w22, w12 = ops.potential
    p1, p2 = psi[0], psi[1]
    w_pot = np.sum(w11 * np.abs(p1) ** 2 + w22 * np.abs(p2) ** 2 + 2.0 * w12 * (p1.conj() * p2).real)
    return t_kin, float(w_pot * lat.dV)


# -- separable z ------------------------------------------------------------


def propagate_z_factor(params: ModelParams, lattice: Lattice, config: PropagatorConfig, n_steps=None):
    """Evolve the z factor of a separable product state on its own 1D grid.

    When kappa_z1 == kappa_z2 the z-dependent part of W is a multiple of the
    identity and the dipole is z-independent, so the discrete 3D propagator
    factorizes exactly into an (x, y) plane propagation times this 1D chain.
    Returns the z factor (normalized to sum |chi|^2 dz = 1) after ``n_steps``.
    """
    if not params.z_separable:
        raise ConfigError("z factor separation requires kappa_z1 == kappa_z2")
    z, kz, dz = lattice.z, lattice.kz, lattice.dz
    sz = coherent_widths(params)[2]
    chi = np.exp(-(z**2) / (4 * sz**2)).astype(np.complex128)
    chi /= math.sqrt(np.vdot(chi, chi).real * dz)
    n_steps = config.n_steps if n_steps is None else n_steps
    if lattice.spec.n_z == 1:
        return chi
    m = params.mass
    tau = config.dt if config.splitting == "lie" else 0.5 * config.dt
    kin = np.exp(-1j * 0.5 * HBAR2_OVER_AMU_A2 / m * kz**2 * (tau / HBAR))
    pot = np.exp(-1j * params.kappa_z2 * z**2 * (tau / HBAR))
    for _ in range(n_steps):
        if config.splitting == "lie":
            chi = pot * scipy.fft.ifft(kin * scipy.fft.fft(chi, norm="ortho"), norm="ortho")
        else:
            chi = scipy.fft.ifft(kin * scipy.fft.fft(chi, norm="ortho"), norm="ortho")
            chi = pot * pot * chi
            chi = scipy.fft.ifft(kin * scipy.fft.fft(chi, norm="ortho"), norm="ortho")
    return chi


def plane_lattice(spec: GridSpec) -> Lattice:
    return build_lattice(spec.plane())


def expand_plane_state(plane_state: WavepacketState, chi: np.ndarray, lattice: Lattice) -> WavepacketState:
    """Rebuild the full 3D state phi(x, y) * chi(z) on ``lattice``."""
    psi = plane_state.psi[..., 0][..., None] * chi[None, None, None, :]
    return WavepacketState(lattice, psi, plane_state.t)


# -- convergence ------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Self-convergence of final observables under dt halving.

    ``rows`` holds ``(dt, {observable: value})``; ``deviations[i]`` is the max
    over observables of |value(dt_i) - value(dt_{i+1})|, and ``ratios[i]`` is
    ``deviations[i] / deviations[i+1]``.
    """

    rows: list
    deviations: list
    ratios: list


def _final_observables(result: RunResult, params: ModelParams) -> dict:
    from conical_ctl.observables import adiabatic_populations

    pg, pe = adiabatic_populations(result.state, params)
    return {"p_excited": pe, "p_ground": pg}


def convergence_check(
    params: ModelParams,
    field_: Optional[FieldSpec],
    config: PropagatorConfig,
    grid: Optional[GridSpec] = None,
    levels: int = 3,
    x_start: Optional[float] = None,
) -> ConvergenceReport:
    """Run the same scenario at dt, dt/2, ... (``levels`` runs) and compare."""
    grid = grid or GridSpec().plane()
    lattice = build_lattice(grid)
    psi0 = initial_coherent_state(params, lattice, x_start)
    rows = []
    dt = config.dt
    for _ in range(levels):
        cfg = replace(config, dt=dt)
        res = run(psi0, params, field_, cfg)
        rows.append((dt, _final_observables(res, params)))
        dt = dt / 2
    deviations = []
    for (_, a), (_, b) in zip(rows, rows[1:]):
        deviations.append(max(abs(a[k] - b[k]) for k in a))
    ratios = [
        d0 / d1 if d1 > 0 else math.inf for d0, d1 in zip(deviations, deviations[1:])
    ]
    return ConvergenceReport(rows=rows, deviations=deviations, ratios=ratios)
