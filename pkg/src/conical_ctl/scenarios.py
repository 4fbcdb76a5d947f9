"""Scenario drivers: quantum scans, geometric-phase experiments, pathway scans.

Each driver takes a resolved :class:`ScenarioConfig` and returns a
:class:`ScenarioResult` holding tables (name -> columns + rows) and a flat
``summary`` dict that goes into the manifest.  Independent scan points run on a
thread pool; results are collected in input order so the output never depends
on scheduling.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from conical_ctl.config import ScenarioConfig
from conical_ctl.errors import ConicalCtlError, NumericalFailure
from conical_ctl.hamiltonian import FieldSpec, ModelParams, initial_coherent_state
from conical_ctl.lattice import GridSpec, WavepacketState, boundary_leak, build_lattice, norm, y_marginal
from conical_ctl.observables import (
    adiabatic_components,
    asymmetry,
    delay_scan_difference,
    fit_damped_oscillation,
)
from conical_ctl.propagator import (
    PrecomputedOperators,
    PropagatorConfig,
    convergence_check,
    precompute,
    propagate_z_factor,
    step,
)
from conical_ctl.semiclassical import ensemble_average

_TIME_TOL = 1e-9


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)


@dataclass
class ScenarioResult:
    scenario: str
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


@dataclass
class Trajectory:
    """Outcome of one quantum run."""

    times: np.ndarray
    p_ground: np.ndarray
    p_excited: np.ndarray
    marginals: dict
    norm_drift: float
    boundary_leak: float


# -- one quantum run ---------------------------------------------------------


class Simulation:
    """Lattice, operators and initial state shared by the runs of one scan.

    In separable mode the propagation happens on the (x, y) plane; the z
    factor only enters the boundary-leak diagnostic, since populations and
    y-marginals of a normalized product state do not depend on it.
    """

    def __init__(
        self,
        params: ModelParams,
        grid: GridSpec,
        config: PropagatorConfig,
        separable: bool,
        x_start: Optional[float] = None,
    ):
        self.params = params
        self.grid = grid
        self.config = config
        self.separable = separable
        self.lattice = build_lattice(grid.plane() if separable else grid)
        self.ops: PrecomputedOperators = precompute(params, self.lattice, config)
        self.initial = initial_coherent_state(params, self.lattice, x_start)
        self._z_leak_cache: dict[int, float] = {}
        self._z_lattice = build_lattice(grid) if separable and grid.n_z > 1 else None

    def z_leak(self, n_steps: int, cells: int = 3) -> float:
        if self._z_lattice is None:
            return 0.0
        if n_steps not in self._z_leak_cache:
            lat = self._z_lattice
            chi = propagate_z_factor(self.params, lat, self.config, n_steps)
            dens = np.abs(chi) ** 2 * lat.dz
            self._z_leak_cache[n_steps] = float(dens[:cells].sum() + dens[-cells:].sum())
        return self._z_leak_cache[n_steps]

    def leak(self, state: WavepacketState, n_steps: int) -> float:
        plane = boundary_leak(state)
        z = self.z_leak(n_steps)
        # probability of lying in the xy rim or the z rim of a product state
        return plane + z - plane * z

    def propagate(
        self,
        field_: Optional[FieldSpec],
        t_end: float,
        marginal_times: Sequence[float] = (),
        state: Optional[WavepacketState] = None,
    ) -> tuple[WavepacketState, Trajectory]:
        """Step from ``state`` (default: the initial state) up to ``t_end``."""
        st = (self.initial if state is None else state).copy()
        n0 = norm(st)
        dt = self.config.dt
        t0 = st.t
        n_steps = int(round((t_end - t0) / dt))
        times, pg, pe, marg = [], [], [], {}

        def observe():
            lower, upper = adiabatic_components(st, None, self.ops.theta)
            dV = st.lattice.dV
            times.append(st.t)
            pg.append(float(np.vdot(lower, lower).real * dV))
            pe.append(float(np.vdot(upper, upper).real * dV))
            for tm in marginal_times:
                if abs(st.t - tm) < _TIME_TOL:
                    marg[tm] = y_marginal(upper, st.lattice)

        observe()
        for i in range(1, n_steps + 1):
            step(st, self.ops, self.params, field_, self.config)
            st.t = t0 + i * dt
            if i % self.config.nan_check_every == 0 or i == n_steps:
                if not np.isfinite(st.psi).all():
                    raise NumericalFailure(f"non-finite wavefunction after step {i}", step=i)
            observe()
        total_steps = int(round(st.t / dt))
        traj = Trajectory(
            times=np.array(times),
            p_ground=np.array(pg),
            p_excited=np.array(pe),
            marginals=marg,
            norm_drift=abs(norm(st) - n0),
            boundary_leak=self.leak(st, total_steps),
        )
        return st, traj


def value_at(times: np.ndarray, values: np.ndarray, t: float) -> float:
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 0.5 * (times[1] - times[0] if len(times) > 1 else 1.0):
        raise ConicalCtlError(f"no sample near t={t} fs")
    return float(values[i])


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    """Apply ``fn`` to every item; each result is ``(ok, value_or_error)``."""

    def guarded(item):
        try:
            return True, fn(item)
        except ConicalCtlError as exc:
            return False, exc

    if threads <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, items))


def _fail(result: ScenarioResult, label: str, exc: Exception) -> None:
    result.failures.append({"point": label, "error": f"{type(exc).__name__}: {exc}"})


# -- scenarios ---------------------------------------------------------------


def run_single(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    """One quantum run with the configured field; population trace output."""
    params = cfg.model()
    prop = cfg.propagation()
    sim = Simulation(params, cfg.grid(), prop, cfg.separable())
    t_obs = cfg["observe.t_fs"]
    _, traj = sim.propagate(cfg.field(), prop.t_end, marginal_times=[t_obs])
    out = ScenarioResult("single-run")
    out.tables["single-run"] = Table(
        ["t_fs", "p_ground", "p_excited"],
        [list(r) for r in zip(traj.times, traj.p_ground, traj.p_excited)],
    )
    if t_obs in traj.marginals:
        out.tables["single-run-marginal"] = Table(
            ["y_A", "rho_excited"], [list(r) for r in zip(sim.lattice.y, traj.marginals[t_obs])]
        )
    out.summary.update(
        {
            "excited_yield": value_at(traj.times, traj.p_excited, t_obs),
            "norm_drift": traj.norm_drift,
            "boundary_leak": traj.boundary_leak,
        }
    )
    return out


def _kinetic_field(cfg: ScenarioConfig, hw: float, amplitude_v_per_m: float) -> FieldSpec:
    return cfg.field(photon_energy=hw, amplitude=amplitude_v_per_m * 1e-10)


def run_kinetic_scan(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    """Excited yield at ``observe.t_fs`` over photon energy x field strength x x0."""
    params0 = cfg.model()
    prop = cfg.propagation()
    t_obs = cfg["observe.t_fs"]
    separable = cfg.separable()
    out = ScenarioResult("kinetic-scan")
    sims = {}
    for x0 in cfg["scan.x0_A"]:
        try:
            sims[x0] = Simulation(params0.with_overrides(x0=x0), cfg.grid(), prop, separable)
        except ConicalCtlError as exc:
            # the points of this x0 fail individually below
            sims[x0] = exc
    points = [
        (hw, F, x0)
        for x0 in cfg["scan.x0_A"]
        for F in cfg["scan.field_strengths_V_per_m"]
        for hw in cfg["scan.photon_energies_eV"]
    ]

    def one(point):
        hw, F, x0 = point
        if isinstance(sims[x0], Exception):
            raise sims[x0]
        _, traj = sims[x0].propagate(_kinetic_field(cfg, hw, F), prop.t_end)
        return traj

    overlay = cfg["semiclassical.overlay"]
    columns = ["hw_eV", "F_V_per_A", "x0_A", "yield", "norm_drift"]
    if overlay:
        columns.append("P_E_semiclassical")
    table = Table(columns)
    traces = Table(["hw_eV", "F_V_per_A", "x0_A", "t_fs", "p_excited"])
    max_leak = 0.0
    for (hw, F, x0), (ok, res) in zip(points, _map(one, points, threads)):
        F_a = F * 1e-10
        if not ok:
            _fail(out, f"hw={hw} F={F} x0={x0}", res)
            row = [hw, F_a, x0, math.nan, math.nan]
        else:
            row = [hw, F_a, x0, value_at(res.times, res.p_excited, t_obs), res.norm_drift]
            max_leak = max(max_leak, res.boundary_leak)
            traces.rows.extend([hw, F_a, x0, t, pe] for t, pe in zip(res.times, res.p_excited))
        if overlay:
            sc = ensemble_average(
                params0.with_overrides(x0=x0),
                _kinetic_field(cfg, hw, F),
                hw,
                cfg["semiclassical.n_samples"],
                cfg["seed"],
            )
            row.append(sc.P_E)
        table.rows.append(row)
    out.tables["kinetic-scan"] = table
    out.tables["kinetic-scan-traces"] = traces
    out.summary["max_boundary_leak"] = max_leak
    out.summary["max_norm_drift"] = max((r[4] for r in table.rows if not math.isnan(r[4])), default=math.nan)
    return out


def cep_label(cep: float) -> str:
    """Column suffix for a CEP: 0, halfpi, pi, ... for multiples of pi/2."""
    q = cep / (0.5 * math.pi)
    if abs(q - round(q)) < 1e-9:
        k = int(round(q))
        names = {0: "0", 1: "halfpi", 2: "pi", -1: "minus_halfpi", -2: "minus_pi"}
        if k in names:
            return names[k]
        return f"{k}halfpi" if k > 0 else f"minus_{-k}halfpi"
    return f"{cep:.6g}".replace("-", "minus_").replace(".", "p")


def run_geometric_cep(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    """Excited-state y-marginal per CEP plus the field-free baseline."""
    params = cfg.model()
    prop = cfg.propagation()
    t_obs = cfg["observe.t_fs"]
    sim = Simulation(params, cfg.grid(), prop, cfg.separable())
    y, dy = sim.lattice.y, sim.lattice.dy
    cases = [("fieldfree", None)] + [(cep_label(c), c) for c in cfg["scan.ceps_rad"]]

    def one(case):
        _, cep = case
        f = cfg.field(kind="off") if cep is None else cfg.field(cep=cep)
        _, traj = sim.propagate(f, prop.t_end, marginal_times=[t_obs])
        return traj

    out = ScenarioResult("geometric-cep")
    columns, cols = ["y_A"], [y]
    asym = Table(["curve", "cep_rad", "asymmetry"])
    for (label, cep), (ok, res) in zip(cases, _map(one, cases, threads)):
        columns.append("rho_fieldfree" if cep is None else f"rho_cep_{label}")
        if not ok:
            _fail(out, label, res)
            cols.append(np.full_like(y, math.nan))
            a = math.nan
        else:
            rho = res.marginals[t_obs]
            cols.append(rho)
            a = asymmetry(rho, y, dy)
            out.summary[f"norm_drift.{label}"] = res.norm_drift
            out.summary[f"boundary_leak.{label}"] = res.boundary_leak
        asym.rows.append([label, math.nan if cep is None else cep, a])
        out.summary[f"asymmetry.{label}"] = a
    out.tables["geometric-cep"] = Table(columns, [list(r) for r in zip(*cols)])
    out.tables["geometric-cep-asymmetry"] = asym
    return out


def delay_scan_marginals(
    sim: Simulation,
    cfg: ScenarioConfig,
    delays: Sequence[float],
    t_obs: float,
    threads: int = 1,
    cep: Optional[float] = None,
):
    """Excited y-marginal at ``t_obs`` for a pulse at each delay.

    The field-free propagation before each pulse is shared: one base state is
    stepped forward and a branch is split off on the step containing the
    pulse start.  This is exact because the field is zero before the pulse.
    Returns ``{delay: (ok, Trajectory or error)}``.
    """
    dt = sim.config.dt
    base = sim.initial.copy()
    in_flight = threading.BoundedSemaphore(max(1, 2 * threads))
    results = {}

    def branch(args):
        d, st = args
        try:
            f = cfg.field(delay=d) if cep is None else cfg.field(delay=d, cep=cep)
            return sim.propagate(f, t_obs, marginal_times=[t_obs], state=st)[1]
        finally:
            in_flight.release()

    def guarded(args):
        try:
            return True, branch(args)
        except ConicalCtlError as exc:
            return False, exc

    pool = ThreadPoolExecutor(max_workers=max(1, threads))
    futures = {}
    try:
        for d in sorted(delays):
            start = math.floor(d / dt + 1e-9) * dt
            n = int(round((start - base.t) / dt))
            for i in range(n):
                step(base, sim.ops, sim.params, None, sim.config)
            base.t = start
            in_flight.acquire()
            futures[d] = pool.submit(guarded, (d, base.copy()))
        for d, fut in futures.items():
            results[d] = fut.result()
    finally:
        pool.shutdown(wait=True)
    return results


def run_geometric_delay(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    """Delay-resolved y-marginal, reference-subtracted map, lineouts and fit."""
    params = cfg.model()
    prop = cfg.propagation()
    t_obs = cfg["observe.t_fs"]
    sim = Simulation(params, cfg.grid(), prop, cfg.separable())
    delays = list(cfg["scan.delays_fs"])
    raw = delay_scan_marginals(sim, cfg, delays, t_obs, threads)
    out = ScenarioResult("geometric-delay")
    y = sim.lattice.y
    records = {}
    for d in sorted(raw):
        ok, res = raw[d]
        if ok:
            records[d] = res.marginals[t_obs]
            out.summary[f"norm_drift.delay_{d:g}"] = res.norm_drift
            out.summary[f"boundary_leak.delay_{d:g}"] = res.boundary_leak
        else:
            _fail(out, f"delay={d}", res)
    ref = cfg["scan.reference_delay_fs"]
    if not any(abs(d - ref) < _TIME_TOL for d in records):
        # nothing to subtract from; report what ran
        return out
    dmap = delay_scan_difference(records, ref, y, cfg["scan.lineout_y_A"])
    rows = []
    for i, d in enumerate(dmap.delays):
        rows.extend([d, yy, r, df] for yy, r, df in zip(y, dmap.rho[i], dmap.difference[i]))
    out.tables["geometric-delay"] = Table(["delay_fs", "y_A", "rho", "difference"], rows)
    keys = list(dmap.lineouts)
    out.tables["geometric-delay-lineouts"] = Table(
        ["delay_fs"] + [f"lineout_y_{k:g}" for k in keys],
        [[d] + [dmap.lineouts[k][i] for k in keys] for i, d in enumerate(dmap.delays)],
    )
    fit_rows = []
    for k in keys:
        fit = fit_damped_oscillation(dmap.delays, dmap.lineouts[k])
        for j, c in enumerate(fit.crossings):
            spacing = fit.spacings[j - 1] if j > 0 else math.nan
            fit_rows.append([k, c, spacing])
        for name, v in fit.params.items():
            out.summary[f"fit.y_{k:g}.{name}"] = v
        out.summary[f"fit.y_{k:g}.n_crossings"] = len(fit.crossings)
    out.tables["geometric-delay-crossings"] = Table(["lineout_y_A", "crossing_fs", "spacing_fs"], fit_rows)
    return out


def run_semiclassical_scan(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    params = cfg.model()
    hws = list(cfg["scan.photon_energies_eV"])
    F = cfg["field.amplitude_V_per_m"]

    def one(hw):
        return ensemble_average(
            params, _kinetic_field(cfg, hw, F), hw, cfg["semiclassical.n_samples"], cfg["seed"]
        )

    out = ScenarioResult("semiclassical-scan")
    cols = ["hw_eV", "P_L", "P_CI_mean", "P_R", "P_E", "stderr", "validity_ratio"]
    table = Table(cols)
    for hw, (ok, res) in zip(hws, _map(one, hws, threads)):
        if ok:
            table.rows.append([res.as_row()[c] for c in cols])
        else:
            _fail(out, f"hw={hw}", res)
            table.rows.append([hw] + [math.nan] * (len(cols) - 1))
    out.tables["semiclassical-scan"] = table
    return out


def run_convergence(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    """dt-halving self-convergence of the final populations."""
    grid = cfg.grid()
    if cfg.separable():
        grid = grid.plane()
    rep = convergence_check(cfg.model(), cfg.field(), cfg.propagation(), grid, cfg["convergence.levels"])
    table = Table(["dt_fs", "p_excited", "p_ground", "deviation", "ratio"])
    for i, (dt, obs) in enumerate(rep.rows):
        dev = rep.deviations[i - 1] if i > 0 else math.nan
        ratio = rep.ratios[i - 2] if i > 1 else math.nan
        table.rows.append([dt, obs["p_excited"], obs["p_ground"], dev, ratio])
    out = ScenarioResult("convergence", tables={"convergence": table})
    for i, r in enumerate(rep.ratios):
        out.summary[f"ratio.{i}"] = r
    return out


RUNNERS = {
    "single-run": run_single,
    "kinetic-scan": run_kinetic_scan,
    "geometric-cep": run_geometric_cep,
    "geometric-delay": run_geometric_delay,
    "semiclassical-scan": run_semiclassical_scan,
    "convergence": run_convergence,
}


def run_scenario(cfg: ScenarioConfig, threads: Optional[int] = None) -> ScenarioResult:
    threads = cfg["threads"] if threads is None else threads
    return RUNNERS[cfg.scenario](cfg, threads)
