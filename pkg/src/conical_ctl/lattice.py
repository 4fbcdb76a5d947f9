"""Cartesian grid, two-component wavefunction storage and FFT conventions.

All transforms use the unitary ("ortho") normalization, so the discrete
Parseval relation holds with no extra factors and ``fft_backward`` is the
exact inverse of ``fft_forward``.  Operators elsewhere in the package rely on
this convention and never rescale after a transform.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.fft

from conical_ctl.errors import ConfigError, ContractViolation

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class GridSpec:
    """Axis bounds (Angstrom) and point counts of the simulation box.

    ``offset_y`` shifts the y points by half a cell so that y = 0 is never a
    grid point; the adiabatic rotation is undefined on the CI seam.

    An axis with a single point is *collapsed*: it sits at the axis midpoint
    with unit measure and zero momentum.  This is how the separable z factor
    is integrated out (see ``GridSpec.plane``).
    """

    n_x: int = 128
    n_y: int = 64
    n_z: int = 64
    lo_x: float = -2.4
    hi_x: float = 4.4
    lo_y: float = -1.5
    hi_y: float = 1.5
    lo_z: float = -1.5
    hi_z: float = 1.5
    offset_y: bool = True

    def __post_init__(self):
        for q in AXES:
            n = getattr(self, f"n_{q}")
            lo, hi = getattr(self, f"lo_{q}"), getattr(self, f"hi_{q}")
            if isinstance(n, bool) or int(n) != n or n < 1:
                raise ConfigError(f"grid.n_{q} must be a positive integer, got {n!r}")
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise ConfigError(f"grid bounds for {q} must satisfy lo < hi, got [{lo}, {hi}]")

    def spacing(self, axis: str) -> float:
        n = getattr(self, f"n_{axis}")
        if n == 1:
            return 1.0
        return (getattr(self, f"hi_{axis}") - getattr(self, f"lo_{axis}")) / n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_x, self.n_y, self.n_z)

    def plane(self) -> "GridSpec":
        """Same x-y grid with the z axis collapsed to a single point."""
        return replace(self, n_z=1)

    @classmethod
    def for_fidelity(cls, fidelity: str) -> "GridSpec":
        if fidelity == "ci":
            return cls()
        if fidelity == "paper":
            return cls(n_x=128, n_y=128, n_z=128)
        raise ConfigError(f"unknown fidelity {fidelity!r}; expected 'ci' or 'paper'")


def _axis_points(n, lo, hi, offset):
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    d = (hi - lo) / n
    return lo + (np.arange(n) + (0.5 if offset else 0.0)) * d


def _axis_momenta(n, d):
    if n == 1:
        return np.zeros(1)
    return 2.0 * np.pi * np.fft.fftfreq(n, d)


@dataclass(frozen=True, eq=False)
class Lattice:
    """Position and momentum meshes built from a :class:`GridSpec`.

    Meshes are stored as 1D axes; ``mesh`` and ``kmesh`` return
    broadcastable (sparse) 3D views.
    """

    spec: GridSpec
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray
    dx: float
    dy: float
    dz: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.spec.shape

    @property
    def dV(self) -> float:
        return self.dx * self.dy * self.dz

    def mesh(self):
        """Sparse (X, Y, Z) meshes with shapes (n_x,1,1), (1,n_y,1), (1,1,n_z)."""
        return np.ix_(self.x, self.y, self.z)

    def kmesh(self):
        return np.ix_(self.kx, self.ky, self.kz)

    def k_squared(self) -> np.ndarray:
        kx, ky, kz = self.kmesh()
        return kx**2 + ky**2 + kz**2

    def check(self, arr: np.ndarray) -> None:
        if arr.shape[-3:] != self.shape:
            raise ContractViolation(f"field shape {arr.shape} does not match lattice {self.shape}")


def build_lattice(spec: GridSpec) -> Lattice:
    """Build the meshes for ``spec``.

    Points are ``lo + (i + offset) * d`` with ``offset = 0.5`` on the y axis
    when ``spec.offset_y`` is set; momenta are in FFT order.
    """
    if not isinstance(spec, GridSpec):
        raise ConfigError("build_lattice expects a GridSpec")
    d = {q: spec.spacing(q) for q in AXES}
    pts = {
        q: _axis_points(
            getattr(spec, f"n_{q}"),
            getattr(spec, f"lo_{q}"),
            getattr(spec, f"hi_{q}"),
            q == "y" and spec.offset_y,
        )
        for q in AXES
    }
    ks = {q: _axis_momenta(getattr(spec, f"n_{q}"), d[q]) for q in AXES}
    for arr in (*pts.values(), *ks.values()):
        arr.setflags(write=False)
    return Lattice(
        spec=spec,
        x=pts["x"], y=pts["y"], z=pts["z"],
        kx=ks["x"], ky=ks["y"], kz=ks["z"],
        dx=d["x"], dy=d["y"], dz=d["z"],
    )


@dataclass(eq=False)
class WavepacketState:
    """Diabatic components on a lattice at time ``t`` (fs).

    ``psi`` has shape ``(2, n_x, n_y, n_z)``; ``psi_1`` and ``psi_2`` are
    views into it so both components can be transformed in one FFT call.
    """

    lattice: Lattice
    psi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.psi.shape != (2, *self.lattice.shape):
            raise ContractViolation(
                f"state shape {self.psi.shape} does not match (2, {self.lattice.shape})"
            )

    @classmethod
    def from_components(cls, lattice, psi_1, psi_2, t=0.0):
        lattice.check(np.asarray(psi_1))
        lattice.check(np.asarray(psi_2))
        psi = np.stack([np.asarray(psi_1), np.asarray(psi_2)]).astype(np.complex128)
        return cls(lattice, psi, float(t))

    @property
    def psi_1(self) -> np.ndarray:
        return self.psi[0]

    @property
    def psi_2(self) -> np.ndarray:
        return self.psi[1]

    def copy(self) -> "WavepacketState":
        return WavepacketState(self.lattice, self.psi.copy(), self.t)


def _fft_axes(arr):
    nd = arr.ndim
    return tuple(range(nd - 3, nd))


def fft_forward(fields, workers: Optional[int] = None) -> np.ndarray:
    """Position -> momentum space over the last three axes, per component.

    Accepts a :class:`WavepacketState` or a bare array whose trailing three
    axes are the grid.
    """
    arr = fields.psi if isinstance(fields, WavepacketState) else np.asarray(fields)
    if arr.ndim < 3:
        raise ContractViolation(f"expected at least 3 axes, got shape {arr.shape}")
    return scipy.fft.fftn(arr, axes=_fft_axes(arr), norm="ortho", workers=workers)


def fft_backward(fields, workers: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(fields)
    if arr.ndim < 3:
        raise ContractViolation(f"expected at least 3 axes, got shape {arr.shape}")
    return scipy.fft.ifftn(arr, axes=_fft_axes(arr), norm="ortho", workers=workers)


def component_norms(state: WavepacketState) -> tuple[float, float]:
    dV = state.lattice.dV
    return (
        float(np.vdot(state.psi[0], state.psi[0]).real * dV),
        float(np.vdot(state.psi[1], state.psi[1]).real * dV),
    )


def norm(state: WavepacketState) -> float:
    """Total probability sum(|psi_1|^2 + |psi_2|^2) dV."""
    n1, n2 = component_norms(state)
    return n1 + n2


def y_marginal(field_, lattice: Lattice) -> np.ndarray:
    """rho(y_j) = sum_{i,k} |f(i, j, k)|^2 dx dz."""
    f = np.asarray(field_)
    lattice.check(f)
    dens = f.real**2 + f.imag**2 if np.iscomplexobj(f) else f**2
    return dens.sum(axis=(0, 2)) * (lattice.dx * lattice.dz)


def boundary_leak(state: WavepacketState, cells: int = 3) -> float:
    """Probability inside the outermost ``cells`` layers of every non-collapsed axis."""
    dens = (np.abs(state.psi) ** 2).sum(axis=0)
    mask = np.zeros(dens.shape, dtype=bool)
    for ax, n in enumerate(dens.shape):
        if n <= 2 * cells:
            continue
        idx = [slice(None)] * 3
        idx[ax] = np.r_[0:cells, n - cells:n]
        mask[tuple(idx)] = True
    return float(dens[mask].sum() * state.lattice.dV)


def warn_if_leaking(state: WavepacketState, threshold: float = 1e-4, cells: int = 3) -> float:
    leak = boundary_leak(state, cells)
    if leak > threshold:
        warnings.warn(
            f"{leak:.3e} of the probability reached the outer {cells} grid cells at t={state.t:g} fs",
            RuntimeWarning,
            stacklevel=2,
        )
    return leak
