"""Scenario configuration: flat ``key = value`` INI sections with strict keys.

Rates are written in units of 2pi MHz, times in us.  Every key has a
default; an unknown section or key is an error.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field

from .core import REFERENCE_KAPPA_LOSS_MHZ, REFERENCE_N_MODES, REFERENCE_RATES_MHZ, REFERENCE_TC

SCENARIOS = ("simulate", "sweep", "optimize", "retrieve-chain", "tcmin")
PULSES = ("F", "D", "G", "X", "opt", "file")
SWEEP_AXES = ("gamma", "kappa", "Tc", "kappa_loss", "Delta")


class ConfigError(ValueError):
    pass


def _float(v):
    return float(v)


def _opt_float(v):
    return None if v.strip().lower() in ("", "auto", "none") else float(v)


def _int(v):
    return int(v)


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v):
    return v.strip()


def _list(v):
    return [x.strip() for x in v.split(",") if x.strip()]


def _float_list(v):
    return [float(x) for x in _list(v)]


def _fmt(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# section -> key -> (parser, default, help)
SCHEMA = {
    "params": {
        "g_mhz": (_float, REFERENCE_RATES_MHZ[0], "atom-cavity coupling"),
        "kappa_mhz": (_float, REFERENCE_RATES_MHZ[1], "cavity decay into the line"),
        "gamma_mhz": (_float, REFERENCE_RATES_MHZ[2], "excited-state decay"),
        "kappa_loss_mhz": (_float, REFERENCE_KAPPA_LOSS_MHZ, "parasitic cavity decay"),
        "delta_mhz": (_float, 0.0, "one-photon detuning"),
        "delta2_mhz": (_float, 0.0, "two-photon detuning"),
        "tc": (_float, REFERENCE_TC, "photon coherence time [us]"),
    },
    "geometry": {
        "n_modes": (_int, REFERENCE_N_MODES, "odd number of line modes"),
        "line_length": (_opt_float, None, "line length [us]; auto = max(12 tc, 15/kappa)"),
        "window": (_float, 6.0, "half window in units of tc"),
    },
    "pulse": {
        "kind": (_str, "X", "F | D | G | X | opt | file"),
        "file": (_str, "", "pulse CSV for kind = file"),
        "interpolation": (_str, "spline", "spline | piecewise (for kind = file)"),
    },
    "numerics": {
        "tol": (_float, 1e-9, "integrator rtol = atol"),
        "output_points": (_int, 2001, "rows of the record CSV"),
        "table_points": (_int, 20001, "pulse table nodes; also the exported pulse grid"),
        "backend": (_str, "auto", "auto | compiled | python"),
    },
    "sweep": {
        "variable": (_str, "kappa_loss", "gamma | kappa | Tc | kappa_loss | Delta"),
        "start": (_float, 0.0, "first value (2pi MHz, or us for Tc)"),
        "stop": (_float, 1.21, "last value"),
        "points": (_int, 11, "number of values"),
        "spacing": (_str, "linear", "linear | log"),
        "pulses": (_list, ["F", "D", "G", "X"], "analytic pulses to run"),
    },
    "optimize": {
        "slices": (_int, 256, "piecewise-constant slices"),
        "max_iters": (_int, 200, "optimizer iterations"),
        "g_tol": (_float, 1e-7, "projected-gradient tolerance"),
        "bound_mhz": (_float, 100.0, "box bound on Re and Im of every slice"),
        "model": (_str, "modes", "modes | io"),
        "tc_values": (_float_list, [], "optional coherence-time scan [us]"),
    },
    "tcmin": {
        "eta_target": (_float, 2.0 / 3.0, "threshold efficiency"),
        "g_min_over_kappa": (_float, 0.1, "smallest g / kappa"),
        "g_max_over_kappa": (_float, 10.0, "largest g / kappa"),
        "per_decade": (_int, 8, "g values per decade"),
        "slices": (_int, 64, "slices per optimization"),
        "window": (_float, 6.0, "half window in units of tc"),
        "model": (_str, "io", "io | modes"),
        "max_iters": (_int, 150, "iterations per optimization"),
    },
    "chain": {
        "hops": (_int, 5, "node-to-node transfers"),
        "backend": (_str, "io", "io | full"),
        "points": (_int, 4001, "time grid points"),
    },
}


@dataclass
class ScenarioConfig:
    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, key):
        section, name = key.split(".")
        return self.values[section][name]

    def section(self, name) -> dict:
        return dict(self.values[name])

    def dump(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (_, _, help_) in keys.items():
                lines.append(f"# {help_}")
                lines.append(f"{key} = {_fmt(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)


def defaults() -> ScenarioConfig:
    return ScenarioConfig({s: {k: spec[1] if not isinstance(spec[1], list) else list(spec[1])
                               for k, spec in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_file(io.StringIO(text), source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = defaults()
    cfg.source = source
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            conv = SCHEMA[section][key][0]
            try:
                cfg.values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {raw!r} ({exc})") from exc
    validate(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    if path is None:
        return defaults()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def validate(cfg: ScenarioConfig) -> None:
    def fail(key, why):
        raise ConfigError(f"{cfg.source}: {key}: {why}")

    if cfg["pulse.kind"] not in PULSES:
        fail("pulse.kind", f"must be one of {', '.join(PULSES)}")
    if cfg["pulse.kind"] == "file" and not cfg["pulse.file"]:
        fail("pulse.file", "required when kind = file")
    if cfg["pulse.interpolation"] not in ("spline", "piecewise"):
        fail("pulse.interpolation", "must be spline or piecewise")
    if cfg["sweep.variable"] not in SWEEP_AXES:
        fail("sweep.variable", f"must be one of {', '.join(SWEEP_AXES)}")
    if cfg["sweep.spacing"] not in ("linear", "log"):
        fail("sweep.spacing", "must be linear or log")
    bad = [p for p in cfg["sweep.pulses"] if p not in ("F", "D", "G", "X")]
    if bad or not cfg["sweep.pulses"]:
        fail("sweep.pulses", "must list analytic pulses among F, D, G, X")
    if cfg["sweep.points"] < 1:
        fail("sweep.points", "must be >= 1")
    if cfg["sweep.spacing"] == "log" and min(cfg["sweep.start"], cfg["sweep.stop"]) <= 0:
        fail("sweep.start", "log spacing needs positive bounds")
    if cfg["params.tc"] <= 0:
        fail("params.tc", "must be > 0")
    if cfg["geometry.n_modes"] < 3 or cfg["geometry.n_modes"] % 2 == 0:
        fail("geometry.n_modes", "must be an odd integer >= 3")
    if cfg["numerics.backend"] not in ("auto", "compiled", "python"):
        fail("numerics.backend", "must be auto, compiled or python")
    if cfg["optimize.model"] not in ("modes", "io") or cfg["tcmin.model"] not in ("modes", "io"):
        fail("optimize.model", "models are modes or io")
    if cfg["optimize.slices"] < 16:
        fail("optimize.slices", "must be >= 16")
    if not 0 < cfg["tcmin.eta_target"] < 1:
        fail("tcmin.eta_target", "must lie in (0, 1)")
    if cfg["chain.backend"] not in ("io", "full"):
        fail("chain.backend", "must be io or full")
    if cfg["chain.hops"] < 1:
        fail("chain.hops", "must be >= 1")
    for key in ("params.g_mhz", "params.kappa_mhz", "params.gamma_mhz", "params.kappa_loss_mhz"):
        if not math.isfinite(cfg[key]) or cfg[key] < 0:
            fail(key, "must be finite and >= 0")
