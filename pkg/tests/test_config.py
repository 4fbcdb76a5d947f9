import math

import pytest

from conical_ctl.config import SCHEMA, ConfigParseError, load_config, loads_config, parse_text, resolve
from conical_ctl.errors import ConfigError
from conical_ctl.hamiltonian import ModelParams


def test_empty_file_gives_all_defaults(tmp_path):
    path = tmp_path / "config.kv"
    path.write_text("")
    cfg = load_config(str(path))
    assert cfg.scenario == "single-run"
    assert set(cfg.values) == set(SCHEMA)
    assert all(v is not None for v in cfg.values.values())
    assert cfg.model() == ModelParams()
    assert cfg.grid().shape == (128, 64, 64)


def test_comments_quotes_and_types():
    vals = parse_text(
        """
        # full-line comment
        scenario = "kinetic-scan"   # trailing comment
        grid.offset_y = false
        scan.photon_energies_eV = 0.1:0.3:0.1
        scan.field_strengths_V_per_m = 1e9, 2e9
        seed = 12
        """
    )
    assert vals["scenario"] == "kinetic-scan"
    assert vals["grid.offset_y"] is False
    assert vals["scan.photon_energies_eV"] == [0.1, 0.2, 0.3]
    assert vals["scan.field_strengths_V_per_m"] == [1e9, 2e9]
    assert vals["seed"] == 12


def test_negative_photon_energy_names_the_field():
    with pytest.raises(ConfigError, match="field.photon_energy_eV"):
        parse_text("field.photon_energy_eV = -1")


def test_unknown_key_suggests_the_closest():
    with pytest.raises(ConfigError, match="did you mean 'field.photon_energy_eV'") as info:
        parse_text("seed = 1\nfield.photon_energy = 0.5\n")
    assert info.value.line == 2 and info.value.column == 1


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("seed = 1\nmodel.mu 0.3\n", 2, 1),
        ("  = 3\n", 1, 3),
        ("model.mu = abc\n", 1, 12),
        ("model.mu =\n", 1, 11),
        ("seed = 1\nseed = 2\n", 2, 1),
        ("grid.offset_y = maybe\n", 1, 17),
        ("seed = 1.5\n", 1, 8),
    ],
)
def test_parse_errors_carry_line_and_column(text, line, column):
    with pytest.raises(ConfigParseError) as info:
        parse_text(text)
    assert (info.value.line, info.value.column) == (line, column)


@pytest.mark.parametrize(
    "text",
    [
        "model.mass = 0",
        "grid.n_x = 0",
        "threads = 0",
        "scenario = fit",
        "scan.delays_fs = 24, 25\nscenario = geometric-delay\nscan.reference_delay_fs = 41",
        "propagation.dt_fs = 0.3\npropagation.t_end_fs = 1",
        "observe.t_fs = 40\npropagation.t_end_fs = 30",
        "model.kappa_z1 = 0.2\npropagation.separable_z = on",
        "fidelity = ultra",
    ],
)
def test_invalid_settings_rejected(text):
    with pytest.raises(ConfigError):
        loads_config(text)


def test_manifest_round_trip_is_exact():
    cfg = loads_config(
        "scenario = geometric-delay\nscan.delays_fs = 24:26:0.25\nmodel.mu = 0.7\nfield.cep_rad = 0.3\n"
    )
    again = loads_config(cfg.to_text() + "manifest.engine_version = 0.1.0\n")
    assert again.values == cfg.values
    assert again.to_text() == cfg.to_text()


def test_scenario_dependent_defaults():
    geo = resolve({"scenario": "geometric-cep"})
    assert geo["model.lam_scale"] == 10.0
    assert geo.model().lam == pytest.approx(10 * ModelParams().lam)
    f = geo.field()
    assert (f.kind, f.photon_energy, f.duration, f.delay) == ("pulsed", 1.0, 6.0, 24.0)
    assert f.amplitude == pytest.approx(0.1)
    assert geo["observe.t_fs"] == 30.0
    delay = resolve({"scenario": "geometric-delay"})
    assert delay["scan.reference_delay_fs"] == 41.0
    assert delay["observe.t_fs"] == 47.0
    assert len(delay["scan.delays_fs"]) == 69
    kin = resolve({"scenario": "kinetic-scan"})
    assert kin["scan.photon_energies_eV"][0] == 0.1 and kin["scan.photon_energies_eV"][-1] == 1.2
    assert len(kin["scan.photon_energies_eV"]) == 23
    assert kin.model().lam == ModelParams().lam


def test_fidelity_switch_sets_grid_unless_overridden():
    assert resolve({}, "paper").grid().shape == (128, 128, 128)
    assert resolve({"grid.n_z": 32}, "paper").grid().shape == (128, 128, 32)
    assert resolve({"fidelity": "paper"}, "ci").grid().shape == (128, 64, 64)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.kv")


def test_range_syntax_is_inclusive_and_clean():
    vals = parse_text("scan.photon_energies_eV = 0.1:1.2:0.05")["scan.photon_energies_eV"]
    assert len(vals) == 23 and vals[-1] == 1.2 and repr(vals[3]) == "0.25"
    assert not any(math.isnan(v) for v in vals)
