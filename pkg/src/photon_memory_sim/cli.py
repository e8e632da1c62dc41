"""``photon-memory-sim <scenario> --config FILE [--jobs N] [--out DIR] [--print-config]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 sweep finished with failed points.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import SCENARIOS, ConfigError, ScenarioConfig, load_config
from .core import SystemParams, default_scenario_geometry, mhz
from .envelopes import SechEnvelope, write_envelope_csv
from .grape import (evaluate_with_losses, fit_two_regimes, min_coherence_time_point,
                    optimize_storage)
from .io_oracle import OracleIntegrationError, node_chain
from .propagator import IntegrationError, simulate
from .pulses import (PiecewisePulse, PulseDivergenceError, efficiency_bounds, omega_D, omega_F,
                     omega_G, omega_X, read_pulse_csv, write_pulse_csv)

log = logging.getLogger("photon_memory_sim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
NUMERIC_ERRORS = (IntegrationError, PulseDivergenceError, FloatingPointError,
                  OracleIntegrationError, ArithmeticError)
DEFAULT_OUT = "pms-output"


def _num(x) -> str:
    return f"{x:.12g}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_num(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row) + "\n")


def _write_summary(path: Path, items: dict) -> None:
    _write_csv(path, ("quantity", "value"), items.items())


# --------------------------------------------------------------------------
# building blocks

def build_params(cfg: ScenarioConfig, **override) -> SystemParams:
    """System parameters from the ``[params]`` and ``[geometry]`` blocks.

    ``override`` replaces ``[params]`` entries (same units).
    """
    p = cfg.section("params")
    p.update(override)
    tc = p["tc"]
    try:
        length, t1, t2 = default_scenario_geometry(tc, mhz(p["kappa_mhz"]), cfg["geometry.window"])
        if cfg["geometry.line_length"] is not None:
            length = cfg["geometry.line_length"]
        return SystemParams.from_mhz(
            g=p["g_mhz"], kappa=p["kappa_mhz"], gamma=p["gamma_mhz"],
            kappa_loss=p["kappa_loss_mhz"], delta_1=p["delta_mhz"], delta_2=p["delta2_mhz"],
            n_modes=cfg["geometry.n_modes"], line_length=length, t_start=t1, t_end=t2,
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.source}: invalid parameters: {exc}") from exc


def build_envelope(cfg: ScenarioConfig, tc: float | None = None) -> SechEnvelope:
    return SechEnvelope.from_tc(cfg["params.tc"] if tc is None else tc, window=cfg["geometry.window"])


def _backend(cfg):
    b = cfg["numerics.backend"]
    return None if b == "auto" else b


def optimized_pulse(cfg: ScenarioConfig, params: SystemParams, env):
    lossless = params.with_(gamma=0.0, kappa_loss=0.0)
    return optimize_storage(lossless, env, cfg["optimize.slices"], cfg["optimize.max_iters"],
                            cfg["optimize.g_tol"], mhz(cfg["optimize.bound_mhz"]),
                            model=cfg["optimize.model"])


def build_pulse(cfg: ScenarioConfig, kind: str, params: SystemParams, env):
    if kind == "F":
        return omega_F(params, env)
    if kind == "D":
        return omega_D(params, env)
    if kind == "G":
        return omega_G(params, env)
    if kind == "X":
        return omega_X(params, env)
    if kind == "opt":
        return optimized_pulse(cfg, params, env).pulse
    if kind == "file":
        try:
            return read_pulse_csv(cfg["pulse.file"], kind=cfg["pulse.interpolation"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{cfg.source}: pulse.file: {exc}") from exc
    raise ConfigError(f"unknown pulse kind {kind!r}")


def _pulse_times(cfg, pulse, params):
    if isinstance(pulse, PiecewisePulse):
        return None
    return np.linspace(params.t_start, params.t_end, cfg["numerics.table_points"])


def _run(params, env, pulse, cfg):
    t_grid = np.linspace(params.t_start, params.t_end, cfg["numerics.output_points"])
    return simulate(params, env, pulse, t_grid, cfg["numerics.tol"], backend=_backend(cfg),
                    table_points=cfg["numerics.table_points"])


def _bounds_summary(params) -> dict:
    b = efficiency_bounds(params)
    return {"C": b.C, "C_prime": b.C_prime, "eta_max": b.eta_max, "eta_prime_max": b.eta_prime_max}


# --------------------------------------------------------------------------
# scenarios

def run_simulate(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> int:
    params = build_params(cfg)
    env = build_envelope(cfg)
    kind = cfg["pulse.kind"]
    pulse = build_pulse(cfg, kind, params, env)
    record = _run(params, env, pulse, cfg)
    record.to_csv(out / "record.csv")
    write_pulse_csv(out / "pulse.csv", pulse, _pulse_times(cfg, pulse, params))
    summary = {"pulse": kind, **record.summary(), "closure_error": float(np.max(np.abs(record.closure() - 1))),
               **_bounds_summary(params)}
    _write_summary(out / "summary.csv", summary)
    log.info("eta(t2) = %.6f with pulse %s", summary["eta"], kind)
    return EXIT_OK


def _axis_values(cfg) -> np.ndarray:
    a, b, n = cfg["sweep.start"], cfg["sweep.stop"], cfg["sweep.points"]
    if cfg["sweep.spacing"] == "log":
        return np.geomspace(a, b, n)
    return np.linspace(a, b, n)


AXIS_KEYS = {"gamma": "gamma_mhz", "kappa": "kappa_mhz", "Tc": "tc",
             "kappa_loss": "kappa_loss_mhz", "Delta": "delta_mhz"}


def _sweep_point(cfg: ScenarioConfig, variable: str, x: float, kind: str):
    """One sweep row; failures are returned in the status column."""
    override = {AXIS_KEYS[variable]: float(x)}
    try:
        params = build_params(cfg, **override)
        env = build_envelope(cfg, tc=override.get("tc"))
        pulse = build_pulse(cfg, kind, params, env)
        s = _run(params, env, pulse, cfg).summary()
        return [float(x), kind, s["eta"], s["p_r"], s["p_s"], s["p_loss"], "ok"]
    except (ConfigError, *NUMERIC_ERRORS, ValueError) as exc:
        reason = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        log.warning("sweep point %s=%g pulse %s failed: %s", variable, x, kind, reason)
        nan = float("nan")
        return [float(x), kind, nan, nan, nan, nan, f"failed ({reason})"]


def _map(func, args, jobs):
    if jobs <= 1:
        return [func(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(func, *a) for a in args]
        return [f.result() for f in futures]


def run_sweep(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> int:
    variable = cfg["sweep.variable"]
    tasks = [(cfg, variable, x, kind) for x in _axis_values(cfg) for kind in cfg["sweep.pulses"]]
    rows = _map(_sweep_point, tasks, jobs)
    _write_csv(out / "sweep.csv", ("x", "pulse", "eta", "p_r", "p_s", "p_loss", "status"), rows)
    failed = sum(r[-1] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d sweep points failed", failed, len(rows))
        return EXIT_PARTIAL
    return EXIT_OK


def _optimize_point(cfg: ScenarioConfig, tc: float):
    params = build_params(cfg, tc=tc)
    env = build_envelope(cfg, tc=tc)
    rep = optimized_pulse(cfg, params, env)
    eta_opt, _ = evaluate_with_losses(rep.pulse, params, env, tol=cfg["numerics.tol"])
    eta_x, _ = evaluate_with_losses(omega_X(params, env), params, env, tol=cfg["numerics.tol"])
    return rep, eta_x, eta_opt


def run_optimize(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> int:
    params = build_params(cfg)
    rep, eta_x, eta_opt = _optimize_point(cfg, cfg["params.tc"])
    write_pulse_csv(out / "pulse_opt.csv", rep.pulse)
    _write_csv(out / "history.csv", ("iteration", "eta", "grad_norm"),
               [(i, float(e), float(g)) for i, (e, g) in enumerate(zip(rep.eta_history, rep.grad_norms))])
    summary = {"eta_opt_lossless": rep.eta, "eta_opt": eta_opt, "eta_x": eta_x,
               "iterations": rep.iterations, "reason": rep.reason.replace(",", ";"),
               **_bounds_summary(params)}
    _write_summary(out / "summary.csv", summary)
    tcs = cfg["optimize.tc_values"]
    if tcs:
        results = _map(_optimize_point, [(cfg, tc) for tc in tcs], jobs)
        _write_csv(out / "eta_vs_tc.csv", ("tc", "eta_x", "eta_opt", "eta_opt_lossless"),
                   [(float(tc), eta_x, eta_o, r.eta) for tc, (r, eta_x, eta_o) in zip(tcs, results)])
    return EXIT_OK


def tcmin_g_values(cfg: ScenarioConfig, kappa: float) -> np.ndarray:
    lo, hi = math.log10(cfg["tcmin.g_min_over_kappa"]), math.log10(cfg["tcmin.g_max_over_kappa"])
    n = int(round((hi - lo) * cfg["tcmin.per_decade"])) + 1
    return kappa * np.logspace(lo, hi, max(n, 1))


def run_tcmin(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> int:
    params = build_params(cfg)
    g_values = tcmin_g_values(cfg, params.kappa)
    kw = dict(n_slices=cfg["tcmin.slices"], window=cfg["tcmin.window"],
              model=cfg["tcmin.model"], max_iters=cfg["tcmin.max_iters"])
    results = _map(_tcmin_point, [(g, cfg["tcmin.eta_target"], params, kw) for g in g_values], jobs)
    two_pi = 2 * math.pi
    _write_csv(out / "tcmin.csv", ("g", "tc_min", "eta_achieved", "iters", "status"),
               [(r.g / two_pi, r.tc_min, r.eta_achieved, r.iters, r.status) for r in results])
    fit = fit_two_regimes([r.g for r in results], [r.tc_min for r in results], params.kappa)
    _write_summary(out / "tcmin_fit.csv", fit)
    if any(r.status != "ok" for r in results):
        return EXIT_PARTIAL
    return EXIT_OK


def _tcmin_point(g, eta_target, params, kw):
    return min_coherence_time_point(g, eta_target, params, **kw)


def run_retrieve_chain(cfg: ScenarioConfig, out: Path, jobs: int = 1) -> int:
    params = build_params(cfg)
    env = build_envelope(cfg)
    chain = node_chain(params, env, cfg["chain.hops"] + 1, backend=cfg["chain.backend"],
                       n_points=cfg["chain.points"], kernel_backend=_backend(cfg))
    _write_csv(out / "chain.csv", ("hop", "storage_eta", "retrieval_eta"),
               [(k + 1, s, r) for k, (s, r) in enumerate(zip(chain.storage_eta, chain.retrieval_eta))])
    for k, e in enumerate(chain.envelopes, start=1):
        write_envelope_csv(out / f"envelope_hop{k}.csv", e.times, e.values)
    return EXIT_OK


PLOT_STUB = '''"""Plot every CSV written by photon-memory-sim in this directory."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        continue
    cols = list(rows[0])
    if cols[:2] == ["quantity", "value"]:
        continue
    x = cols[0]
    fig, ax = plt.subplots()
    for y in cols[1:]:
        try:
            ax.plot([float(r[x]) for r in rows], [float(r[y]) for r in rows], label=y)
        except ValueError:
            pass
    ax.set_xlabel(x)
    ax.legend()
    ax.set_title(os.path.basename(path))
    fig.savefig(path[:-4] + ".png", dpi=120)
    plt.close(fig)
'''


def write_plot_stub(out: Path) -> Path:
    path = out / "plot_results.py"
    path.write_text(PLOT_STUB)
    return path


RUNNERS = {
    "simulate": run_simulate,
    "sweep": run_sweep,
    "optimize": run_optimize,
    "retrieve-chain": run_retrieve_chain,
    "tcmin": run_tcmin,
}


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="photon-memory-sim",
                                 description="Cavity photon-storage simulations and sweeps.")
    ap.add_argument("scenario", choices=SCENARIOS + ("plot-stub",))
    ap.add_argument("--config", help="INI file; omitted keys take their defaults")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("--out", help="output directory (default $PMS_OUT or ./pms-output)")
    ap.add_argument("--print-config", action="store_true",
                    help="print the fully resolved configuration and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or os.environ.get("PMS_OUT") or DEFAULT_OUT)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.scenario == "plot-stub":
        print(write_plot_stub(out))
        return EXIT_OK
    try:
        return RUNNERS[args.scenario](cfg, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure in {args.scenario}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
