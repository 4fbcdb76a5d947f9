import csv
import re

import numpy as np
import pytest

from conical_ctl import cli
from conical_ctl.config import loads_config
from conical_ctl.errors import NumericalFailure
from conical_ctl.scenarios import cep_label, run_scenario

SMALL_GRID = "grid.n_x = 64\ngrid.n_y = 32\ngrid.n_z = 16\n"
SCI = re.compile(r"^-?\d\.\d{8}e[+-]\d{2}$|^nan$")


def _write(tmp_path, text, name="config.kv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_single_run_outputs_and_manifest(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["single-run", "--config", _write(tmp_path, "propagation.t_end_fs = 2\n"), "--out", str(out)])
    assert code == cli.EXIT_OK
    header, rows = _read_csv(out / "single-run.csv")
    assert header == ["t_fs", "p_ground", "p_excited"]
    assert len(rows) == 21
    assert all(SCI.match(c) for r in rows for c in r)
    manifest = (out / "manifest.kv").read_text()
    for key in ("model.mu = 0.5", "model.lam = ", "model.lam_scale = 1.0", "manifest.engine_version",
                "manifest.summary.norm_drift", "manifest.summary.boundary_leak", "manifest.wall_clock_s"):
        assert key in manifest


def test_manifest_reload_reproduces_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = _write(tmp_path, "propagation.t_end_fs = 2\nfield.photon_energy_eV = 0.7\n")
    assert cli.main(["single-run", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["single-run", "--config", str(a / "manifest.kv"), "--out", str(b)]) == 0
    assert (a / "single-run.csv").read_bytes() == (b / "single-run.csv").read_bytes()

    def body(p):
        return [l for l in p.read_text().splitlines() if not l.startswith("manifest.")]

    assert body(a / "manifest.kv") == body(b / "manifest.kv")


def test_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["single-run", "--config", _write(tmp_path, "field.photon_energy_eV = -1\n")]) == 2
    assert "field.photon_energy_eV" in capsys.readouterr().err
    assert cli.main(["single-run", "--config", _write(tmp_path, "feild.kind = off\n")]) == 2
    assert "did you mean" in capsys.readouterr().err
    assert cli.main(["single-run", "--config", str(tmp_path / "missing.kv")]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["single-run", "--out", str(blocker / "sub")]) == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def boom(cfg, threads=None):
        raise NumericalFailure("non-finite wavefunction after step 50", step=50)

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["single-run", "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL


def test_partial_scan_failure_exits_4_and_keeps_good_points(tmp_path):
    text = SMALL_GRID + "propagation.t_end_fs = 1\nscan.photon_energies_eV = 0.5\nscan.x0_A = -1.24608, -2.3\n"
    out = tmp_path / "out"
    assert cli.main(["kinetic-scan", "--config", _write(tmp_path, text), "--out", str(out)]) == cli.EXIT_PARTIAL
    _, rows = _read_csv(out / "kinetic-scan.csv")
    assert rows[0][3] != "nan" and rows[1][3] == "nan"
    assert "manifest.failure.0" in (out / "manifest.kv").read_text()


def test_scan_is_identical_serial_and_parallel(tmp_path):
    text = SMALL_GRID + "propagation.t_end_fs = 3\nscan.photon_energies_eV = 0.3, 0.5, 0.7\n"
    cfg = _write(tmp_path, text)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["kinetic-scan", "--config", cfg, "--out", str(a), "--threads", "1"]) == 0
    assert cli.main(["kinetic-scan", "--config", cfg, "--out", str(b), "--threads", "3"]) == 0
    for name in ("kinetic-scan.csv", "kinetic-scan-traces.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(cli.ConfigError):
        cli._threads(None)


def test_separable_and_full_grids_agree():
    base = SMALL_GRID + "propagation.t_end_fs = 3\n"
    sep = run_scenario(loads_config(base + "propagation.separable_z = on\n"))
    full = run_scenario(loads_config(base + "propagation.separable_z = off\n"))
    a = np.array(sep.tables["single-run"].rows)
    b = np.array(full.tables["single-run"].rows)
    assert np.max(np.abs(a - b)) < 1e-12


def test_geometric_cep_columns_and_asymmetry_table():
    cfg = loads_config("scenario = geometric-cep\nscan.ceps_rad = 0, 3.141592653589793\n" + SMALL_GRID)
    res = run_scenario(cfg, threads=2)
    assert res.tables["geometric-cep"].columns == ["y_A", "rho_fieldfree", "rho_cep_0", "rho_cep_pi"]
    labels = [r[0] for r in res.tables["geometric-cep-asymmetry"].rows]
    assert labels == ["fieldfree", "0", "pi"]


def test_delay_scan_reference_row_vanishes():
    cfg = loads_config("scenario = geometric-delay\nscan.delays_fs = 24:25:0.25\n" + SMALL_GRID)
    res = run_scenario(cfg, threads=2)
    rows = np.array(res.tables["geometric-delay"].rows)
    ref = rows[rows[:, 0] == 25.0]
    assert len(ref) == 32 and np.all(ref[:, 3] == 0.0)
    assert res.tables["geometric-delay-lineouts"].columns == ["delay_fs", "lineout_y_0.18", "lineout_y_-0.18"]


def test_delay_branching_matches_direct_runs():
    from conical_ctl.scenarios import Simulation, delay_scan_marginals

    cfg = loads_config("scenario = geometric-delay\nscan.delays_fs = 24.25, 25\n" + SMALL_GRID)
    sim = Simulation(cfg.model(), cfg.grid(), cfg.propagation(), True)
    t_obs = cfg["observe.t_fs"]
    branched = delay_scan_marginals(sim, cfg, [24.25, 25.0], t_obs, threads=2)
    for d in (24.25, 25.0):
        _, direct = sim.propagate(cfg.field(delay=d), t_obs, marginal_times=[t_obs])
        ok, res = branched[d]
        assert ok
        assert np.max(np.abs(res.marginals[t_obs] - direct.marginals[t_obs])) < 1e-12


def test_semiclassical_scan_columns(tmp_path):
    text = "scan.photon_energies_eV = 0.5, 0.6\nsemiclassical.n_samples = 50\n"
    out = tmp_path / "sc"
    assert cli.main(["semiclassical-scan", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
    header, rows = _read_csv(out / "semiclassical-scan.csv")
    assert header == ["hw_eV", "P_L", "P_CI_mean", "P_R", "P_E", "stderr", "validity_ratio"]
    vals = np.array(rows, dtype=float)
    assert np.all((vals[:, 1:5] >= 0) & (vals[:, 1:5] <= 1))


def test_convergence_scenario(tmp_path):
    text = SMALL_GRID + "propagation.t_end_fs = 3\n"
    res = run_scenario(loads_config("scenario = convergence\n" + text))
    rows = res.tables["convergence"].rows
    assert [r[0] for r in rows] == [0.1, 0.05, 0.025]


@pytest.mark.parametrize(
    "cep, label",
    [(0.0, "0"), (np.pi / 2, "halfpi"), (np.pi, "pi"), (-np.pi / 2, "minus_halfpi"), (0.3, "0p3")],
)
def test_cep_labels(cep, label):
    assert cep_label(cep) == label
