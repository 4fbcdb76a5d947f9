"""Flat key-value scenario configuration.

File format, one entry per line::

    # comment
    scenario = kinetic-scan
    field.amplitude_V_per_m = 1e9
    scan.photon_energies_eV = 0.1:1.2:0.05     # inclusive range
    scan.ceps_rad = 0, 1.5707963267948966       # explicit list

Keys are dotted ``section.name``.  Every key is optional; omitted keys take a
scenario-dependent default, and the fully resolved set is what the manifest
records.  Keys under ``manifest.`` are provenance written by the engine and
are skipped on load, so a manifest can be fed back in as a config.
"""

from __future__ import annotations

import difflib
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from conical_ctl.errors import ConfigError
from conical_ctl.hamiltonian import FieldSpec, ModelParams
from conical_ctl.lattice import GridSpec
from conical_ctl.propagator import FIELD_TIMES, SPLITTINGS, PropagatorConfig
from conical_ctl.units import V_PER_M

SCENARIOS = (
    "single-run",
    "kinetic-scan",
    "geometric-cep",
    "geometric-delay",
    "semiclassical-scan",
    "convergence",
)
RESERVED_PREFIX = "manifest."


class ConfigParseError(ConfigError):
    """Malformed config text; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int, path: str = "<config>"):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.line = line
        self.column = column


# -- value types -------------------------------------------------------------


def _parse_float(text: str) -> float:
    return float(text)


def _parse_int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_str(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _parse_float_list(text: str) -> list[float]:
    """Comma-separated floats, or an inclusive ``start:stop:step`` range."""
    text = text.strip()
    if not text:
        raise ValueError("empty list")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"range needs step > 0 and stop >= start, got {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        # rounding keeps 0.1 + k*0.05 free of binary noise in the manifest
        return [round(start + i * step, 12) for i in range(n)]
    return [float(p) for p in text.split(",")]


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Optional[Callable[[Any], Optional[str]]] = None
    doc: str = ""


def _positive(v):
    return None if v > 0 else "must be > 0"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _choice(options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"

    return check


def _list_check(item_check=None):
    def check(v):
        if not v:
            return "must be a non-empty list"
        if item_check:
            for item in v:
                msg = item_check(item)
                if msg:
                    return f"entries {msg}"
        return None

    return check


def _finite(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(math.isfinite(x) for x in vals) else "must be finite"


def _scenario_default(**by_scenario):
    """Default that depends on the scenario; ``_`` is the fallback."""

    def pick(scenario):
        return by_scenario.get(scenario.replace("-", "_"), by_scenario["_"])

    return pick


_PI = math.pi
_HW_GRID = _parse_float_list("0.1:1.2:0.05")
_DEFAULT_MODEL = ModelParams()
_DEFAULT_GRID = GridSpec()


def _model_keys() -> dict[str, Key]:
    out = {}
    for name, value in _DEFAULT_MODEL.as_dict().items():
        check = _positive if name.startswith("kappa") or name == "mass" else None
        if name == "mu":
            check = _nonneg
        out[f"model.{name}"] = Key(_parse_float, value, check)
    out["model.lam_scale"] = Key(
        _parse_float,
        _scenario_default(geometric_cep=10.0, geometric_delay=10.0, _=1.0),
        _nonneg,
        "factor applied to model.lam",
    )
    return out


def _grid_keys() -> dict[str, Key]:
    out = {}
    for q in "xyz":
        out[f"grid.n_{q}"] = Key(_parse_int, None, _positive, "points; default from fidelity")
        out[f"grid.lo_{q}"] = Key(_parse_float, getattr(_DEFAULT_GRID, f"lo_{q}"), _finite)
        out[f"grid.hi_{q}"] = Key(_parse_float, getattr(_DEFAULT_GRID, f"hi_{q}"), _finite)
    out["grid.offset_y"] = Key(_parse_bool, True)
    return out


SCHEMA: dict[str, Key] = {
    "scenario": Key(_parse_str, "single-run", _choice(SCENARIOS)),
    "fidelity": Key(_parse_str, "ci", _choice(("ci", "paper"))),
    "seed": Key(_parse_int, 0, _nonneg),
    "threads": Key(_parse_int, 1, _positive),
    **_model_keys(),
    **_grid_keys(),
    "field.kind": Key(
        _parse_str,
        _scenario_default(geometric_cep="pulsed", geometric_delay="pulsed", _="continuous"),
        _choice(("off", "continuous", "pulsed")),
    ),
    "field.amplitude_V_per_m": Key(_parse_float, 1e9, _nonneg),
    "field.photon_energy_eV": Key(
        _parse_float, _scenario_default(geometric_cep=1.0, geometric_delay=1.0, _=0.5), _nonneg
    ),
    "field.cep_rad": Key(_parse_float, 0.0, _finite),
    "field.duration_fs": Key(_parse_float, 6.0, _positive),
    "field.delay_fs": Key(_parse_float, _scenario_default(geometric_cep=24.0, _=0.0), _finite),
    "propagation.dt_fs": Key(_parse_float, 0.1, _positive),
    "propagation.t_end_fs": Key(_parse_float, None, _nonneg, "default: observation time"),
    "propagation.splitting": Key(_parse_str, "lie", _choice(SPLITTINGS)),
    "propagation.field_time": Key(_parse_str, "start", _choice(FIELD_TIMES)),
    "propagation.separable_z": Key(_parse_str, "auto", _choice(("auto", "on", "off"))),
    "scan.photon_energies_eV": Key(_parse_float_list, list(_HW_GRID), _list_check(_nonneg)),
    "scan.field_strengths_V_per_m": Key(_parse_float_list, [1e9], _list_check(_nonneg)),
    "scan.x0_A": Key(_parse_float_list, [_DEFAULT_MODEL.x0], _list_check(_finite)),
    "scan.ceps_rad": Key(_parse_float_list, [0.0, 0.5 * _PI, _PI], _list_check(_finite)),
    "scan.delays_fs": Key(_parse_float_list, _parse_float_list("24:41:0.25"), _list_check(_finite)),
    "scan.reference_delay_fs": Key(_parse_float, None, _finite, "default: last delay"),
    "scan.lineout_y_A": Key(_parse_float_list, [0.18, -0.18], _list_check(_finite)),
    "observe.t_fs": Key(_parse_float, None, _nonneg, "default depends on scenario"),
    "semiclassical.n_samples": Key(_parse_int, 2000, _positive),
    "semiclassical.overlay": Key(_parse_bool, False),
    "convergence.levels": Key(_parse_int, 3, lambda v: None if v >= 3 else "must be >= 3"),
}


# -- parsing ------------------------------------------------------------------


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def parse_text(text: str, path: str = "<config>") -> dict[str, Any]:
    """Parse config text into ``{key: typed value}`` with schema checks.

    Raises :class:`ConfigParseError` (line/column) for malformed lines and
    :class:`ConfigError` for unknown keys or invalid values.
    """
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        if "=" not in line:
            col = len(line) - len(line.lstrip()) + 1
            raise ConfigParseError("expected 'key = value'", lineno, col, path)
        eq = line.index("=")
        key = line[:eq].strip()
        key_col = len(line) - len(line.lstrip()) + 1
        if not key:
            raise ConfigParseError("missing key before '='", lineno, eq + 1, path)
        if any(ch.isspace() for ch in key):
            raise ConfigParseError(f"key {key!r} contains whitespace", lineno, key_col, path)
        rest = line[eq + 1:]
        value_text = rest.strip()
        value_col = eq + 2 + (len(rest) - len(rest.lstrip()))
        if key.startswith(RESERVED_PREFIX):
            continue
        if key not in SCHEMA:
            close = difflib.get_close_matches(key, SCHEMA.keys(), n=1, cutoff=0.6)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigParseError(f"unknown key {key!r}{hint}", lineno, key_col, path)
        if key in values:
            raise ConfigParseError(f"duplicate key {key!r}", lineno, key_col, path)
        if not value_text:
            raise ConfigParseError(f"missing value for {key!r}", lineno, value_col, path)
        spec = SCHEMA[key]
        try:
            value = spec.parse(value_text)
        except ValueError as exc:
            raise ConfigParseError(f"bad value for {key!r}: {exc}", lineno, value_col, path) from None
        _check(key, value)
        values[key] = value
    return values


def _check(key: str, value: Any) -> None:
    spec = SCHEMA[key]
    if value is None or spec.check is None:
        return
    msg = spec.check(value)
    if msg:
        raise ConfigError(f"{key} {msg}, got {format_value(value)}")


# -- resolved configuration ----------------------------------------------------


@dataclass
class ScenarioConfig:
    """Fully resolved scenario settings; ``values`` maps every schema key."""

    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def scenario(self) -> str:
        return self.values["scenario"]

    def model(self) -> ModelParams:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("model.")}
        scale = kw.pop("lam_scale")
        kw["lam"] = kw["lam"] * scale
        return ModelParams(**kw)

    def grid(self) -> GridSpec:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("grid.")}
        return GridSpec(**kw)

    def field(self, **overrides) -> FieldSpec:
        v = self.values
        kw = dict(
            kind=v["field.kind"],
            amplitude=v["field.amplitude_V_per_m"] * V_PER_M,
            photon_energy=v["field.photon_energy_eV"],
            cep=v["field.cep_rad"],
            duration=v["field.duration_fs"],
            delay=v["field.delay_fs"],
        )
        kw.update(overrides)
        return FieldSpec(**kw)

    def propagation(self, t_end: Optional[float] = None) -> PropagatorConfig:
        v = self.values
        return PropagatorConfig(
            dt=v["propagation.dt_fs"],
            t_end=v["propagation.t_end_fs"] if t_end is None else t_end,
            splitting=v["propagation.splitting"],
            field_time=v["propagation.field_time"],
        )

    def separable(self) -> bool:
        mode = self.values["propagation.separable_z"]
        z_ok = self.model().z_separable
        if mode == "on" and not z_ok:
            raise ConfigError("propagation.separable_z = on requires model.kappa_z1 == model.kappa_z2")
        return mode == "on" or (mode == "auto" and z_ok)

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.values.items())


def _observe_default(values: dict) -> float:
    scenario = values["scenario"]
    if scenario == "geometric-delay":
        return max(values["scan.delays_fs"]) + values["field.duration_fs"]
    return 30.0


def resolve(overrides: dict[str, Any], fidelity: Optional[str] = None) -> ScenarioConfig:
    """Fill defaults for every key not in ``overrides``.

    ``fidelity`` (from the command line) wins over the file's setting and
    picks the default grid point counts.
    """
    values = dict(overrides)
    if fidelity is not None:
        _check("fidelity", fidelity)
        values["fidelity"] = fidelity
    scenario = values.get("scenario", SCHEMA["scenario"].default)
    out: dict[str, Any] = {}
    for key, spec in SCHEMA.items():
        if key in values:
            out[key] = values[key]
        elif callable(spec.default):
            out[key] = spec.default(scenario)
        elif isinstance(spec.default, list):
            out[key] = list(spec.default)
        else:
            out[key] = spec.default
    tier = GridSpec.for_fidelity(out["fidelity"])
    for q in "xyz":
        if out[f"grid.n_{q}"] is None:
            out[f"grid.n_{q}"] = getattr(tier, f"n_{q}")
    if out["observe.t_fs"] is None:
        t_end = out["propagation.t_end_fs"]
        out["observe.t_fs"] = _observe_default(out) if t_end is None else t_end
    if out["propagation.t_end_fs"] is None:
        out["propagation.t_end_fs"] = out["observe.t_fs"]
    if out["scan.reference_delay_fs"] is None:
        out["scan.reference_delay_fs"] = max(out["scan.delays_fs"])
    cfg = ScenarioConfig(out)
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    v = cfg.values
    # constructing the domain objects runs their own range checks
    cfg.model()
    cfg.grid()
    cfg.field()
    cfg.propagation()
    if v["observe.t_fs"] > v["propagation.t_end_fs"] + 1e-9:
        raise ConfigError("observe.t_fs lies beyond propagation.t_end_fs")
    if cfg.scenario == "geometric-delay":
        ref = v["scan.reference_delay_fs"]
        if not any(abs(d - ref) < 1e-9 for d in v["scan.delays_fs"]):
            raise ConfigError("scan.reference_delay_fs must be one of scan.delays_fs")
        end = max(v["scan.delays_fs"]) + v["field.duration_fs"]
        if v["observe.t_fs"] < end - 1e-9:
            raise ConfigError("observe.t_fs must not precede the end of the last pulse")
    cfg.separable()


def load_config(path: Optional[str], fidelity: Optional[str] = None) -> ScenarioConfig:
    """Read and resolve a config file; ``None`` means all defaults."""
    if path is None:
        return resolve({}, fidelity)
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return resolve(parse_text(text, path), fidelity)


def loads_config(text: str, fidelity: Optional[str] = None) -> ScenarioConfig:
    return resolve(parse_text(text), fidelity)

