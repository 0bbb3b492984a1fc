"""Command-line experiment runner.

Each subcommand reads an INI config (plus ``--set`` overrides), does one
job, and writes CSVs and a ``manifest.json`` into a run directory.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from .adaptive import adaptive_loop, distribution_candidates, grid_candidates
from .config import Config, ConfigError, load_config
from .cross_entropy import ce_iterate
from .distributions import GaussianUV, format_distribution
from .estimation import (
    EventSpec,
    ProbEstimate,
    crude_mc,
    estimate_prob_expected,
    estimate_prob_plugin,
    surrogate_indicator,
)
from .importance import is_estimate
from .kriging import DesignSet, KernelParams, KrigingModel, build, design_bounds, fit_mean, fit_mle, load_design
from .lane_change import LaneChangeSimulator, SimConfig, min_range, natural_distribution
from .streams import RandomStream

log = logging.getLogger("kriging_ae")

SUBCOMMANDS = ("fit", "estimate", "is", "ce", "adapt", "simulate", "pipeline")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class TailIndicator:
    """``I{x_1 >= threshold}`` with a call counter; the analytic toy black box."""

    def __init__(self, threshold: float):
        self.threshold = float(threshold)
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(-1, 1)
        with self._lock:
            self.calls += x.shape[0]
        return (x[:, 0] >= self.threshold).astype(float)


@dataclass
class Scenario:
    natural: object
    simulator: object


def make_scenario(cfg: Config) -> Scenario:
    sc = cfg["scenario"]
    if sc["kind"] == "tail":
        natural = sc["natural"] if sc["natural"] is not None else GaussianUV(0.0, 1.0)
        return Scenario(natural, TailIndicator(sc["threshold"]))
    sim = dict(cfg["simulator"])
    serialize = sim.pop("serialize")
    try:
        sim_cfg = SimConfig(**sim)
    except ValueError as err:
        raise ConfigError("simulator", str(err)) from err
    natural = sc["natural"] if sc["natural"] is not None else natural_distribution()
    if natural.dim != 2:
        raise ConfigError("scenario.natural", "the lane-change scenario needs a 2-d distribution")
    return Scenario(natural, LaneChangeSimulator(sc["lead_speed"], sim_cfg, serialize=serialize))


def load_model(cfg: Config, required_by: str) -> KrigingModel:
    kr = cfg["kriging"]
    model_path = cfg.path("kriging.model")
    if model_path is not None:
        return KrigingModel.load(model_path)
    design_path = cfg.path("kriging.design")
    if design_path is None:
        raise ConfigError("kriging.design", f"a design CSV or kriging.model is required for {required_by}")
    design = load_design(design_path)
    bounds = "design" if kr["bounds"] == "design" else None
    if kr["fit"] == "mle":
        res = fit_mle(design, nugget=kr["nugget"], bounds=bounds)
        params = res.params
        if res.at_bound:
            log.warning("maximum-likelihood estimate sits on the search boundary")
    else:
        beta = kr["beta"] if kr["beta"] is not None else fit_mean(design.Y)
        params = KernelParams(beta, kr["tau2"], kr["theta"], kr["nugget"])
    return build(design, params, bounds=bounds)


def indicator_for(cfg: Config, scenario: Scenario, mode: str, what: str):
    if mode == "true":
        return scenario.simulator
    model = load_model(cfg, f"{what} --indicator {mode}")
    if model.d != scenario.natural.dim:
        raise ConfigError("kriging.design", f"model has d={model.d}, scenario has d={scenario.natural.dim}")
    return surrogate_indicator(model, EventSpec(cfg["event"]["gamma"]), mode)


# -- CSV writers


def _f(v: float) -> str:
    return repr(float(v))


RESULT_COLUMNS = ["method", "value", "std_error", "n_samples", "seed", "max_log_ratio", "unstable"]


def write_results(path: Path, estimates: list[ProbEstimate], seed: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for e in estimates:
            mlr = e.diagnostics.get("max_log_ratio", 0.0)
            w.writerow(
                [e.method, _f(e.value), _f(e.std_error), e.n_samples, seed, _f(mlr),
                 int(bool(e.diagnostics.get("unstable", False)))]
            )


def write_points(path: Path, X: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(1, X.shape[1] + 1)] + ["y"])
        for row, v in zip(X, y):
            w.writerow([_f(t) for t in row] + [_f(v)])


# -- subcommands; each returns a dict of extra manifest fields


def cmd_fit(cfg: Config, out: Path, scenario: Scenario) -> dict:
    model = load_model(cfg, "fit")
    model.save(out / "model.json")
    p = model.params
    with open(out / "fit.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "tau2", "theta", "nugget", "n_design"])
        w.writerow([_f(p.beta), _f(p.tau2), _f(p.theta), _f(p.nugget), model.n])
    return {"params": {"beta": p.beta, "tau2": p.tau2, "theta": p.theta, "nugget": p.nugget}}


def cmd_estimate(cfg: Config, out: Path, scenario: Scenario) -> dict:
    run = cfg["run"]
    n, seed, workers, mode = cfg["estimate"]["n"], run["seed"], run["workers"], run["indicator"]
    stream = RandomStream(seed).split("estimate")
    if mode == "true":
        est = crude_mc(scenario.simulator, scenario.natural, n, stream, workers)
    else:
        model = load_model(cfg, f"estimate --indicator {mode}")
        spec = EventSpec(cfg["event"]["gamma"])
        fn = estimate_prob_plugin if mode == "plugin" else estimate_prob_expected
        est = fn(model, spec, scenario.natural, n, stream, workers)
    write_results(out / "results.csv", [est], seed)
    return {}


def _require_f_star(cfg: Config):
    f_star = cfg["is"]["f_star"]
    if f_star is None:
        raise ConfigError("is.f_star", "an importance distribution is required")
    return f_star


def run_is(cfg, out, scenario, indicator, f_star) -> ProbEstimate:
    run = cfg["run"]
    trace = out / "trace.csv" if cfg["is"]["trace"] else None
    est = is_estimate(
        indicator, scenario.natural, f_star, cfg["is"]["n"], RandomStream(run["seed"]).split("is"),
        run["workers"], trace_path=trace,
    )
    est.method = "is-crude" if run["indicator"] == "true" else f"is-{run['indicator']}"
    if est.diagnostics["unstable"]:
        log.warning("largest log likelihood ratio %.1f exceeds the stability flag", est.diagnostics["max_log_ratio"])
    return est


def cmd_is(cfg: Config, out: Path, scenario: Scenario) -> dict:
    f_star = _require_f_star(cfg)
    if f_star.dim != scenario.natural.dim:
        raise ConfigError("is.f_star", f"dimension {f_star.dim} does not match the scenario ({scenario.natural.dim})")
    indicator = indicator_for(cfg, scenario, cfg["run"]["indicator"], "is")
    est = run_is(cfg, out, scenario, indicator, f_star)
    write_results(out / "results.csv", [est], cfg["run"]["seed"])
    return {"f_star": format_distribution(f_star)}


def run_ce(cfg: Config, out: Path, scenario: Scenario, indicator):
    ce, run = cfg["ce"], cfg["run"]
    theta0 = ce["theta0"] if ce["theta0"] is not None else scenario.natural
    if theta0.dim != scenario.natural.dim:
        raise ConfigError("ce.theta0", f"dimension {theta0.dim} does not match the scenario ({scenario.natural.dim})")
    state = ce_iterate(
        indicator, scenario.natural, theta0, ce["n_per_iter"], ce["max_iter"], ce["tol"],
        RandomStream(run["seed"]).split("ce"), smoothing=ce["smoothing"], source=run["indicator"],
        workers=run["workers"], update_gaussian_sd=ce["update_sd"],
    )
    state.write_history(out / "ce_history.csv")
    if not state.converged:
        log.warning("cross-entropy stopped after %d iterations without meeting the tolerance", state.iteration)
    return state


def cmd_ce(cfg: Config, out: Path, scenario: Scenario) -> dict:
    indicator = indicator_for(cfg, scenario, cfg["run"]["indicator"], "ce")
    state = run_ce(cfg, out, scenario, indicator)
    return {"f_star": format_distribution(state.theta_s), "ce_iterations": state.iteration, "ce_converged": state.converged}


def cmd_pipeline(cfg: Config, out: Path, scenario: Scenario) -> dict:
    indicator = indicator_for(cfg, scenario, cfg["run"]["indicator"], "pipeline")
    state = run_ce(cfg, out, scenario, indicator)
    est = run_is(cfg, out, scenario, indicator, state.theta_s)
    write_results(out / "results.csv", [est], cfg["run"]["seed"])
    return {"f_star": format_distribution(state.theta_s), "ce_iterations": state.iteration, "ce_converged": state.converged}


def cmd_adapt(cfg: Config, out: Path, scenario: Scenario) -> dict:
    ad = cfg["adapt"]
    model = load_model(cfg, "adapt")
    if ad["candidates"] == "grid":
        if ad["lower"] is not None:
            lower, upper = np.array(ad["lower"]), np.array(ad["upper"])
            if lower.size != model.d:
                raise ConfigError("adapt.lower", f"needs {model.d} values")
        else:
            lower, upper = design_bounds(model.design.X)
        gen = grid_candidates(lower, upper, ad["grid_points"])
    else:
        gen = distribution_candidates(scenario.natural, ad["n_candidates"])
    res = adaptive_loop(
        model, gen, ad["criterion"], ad["budget"], scenario.simulator, EventSpec(cfg["event"]["gamma"]),
        RandomStream(cfg["run"]["seed"]).split("adapt"), F=scenario.natural, F_pool_size=ad["pool_size"],
        quad_nodes=ad["quad_nodes"],
    )
    res.write_audit(out / "audit.csv")
    write_points(out / "design.csv", res.model.design.X, res.model.design.Y)
    res.model.save(out / "model.json")
    return {"added_points": len(res.audit), "simulation_failures": res.failures}


def cmd_simulate(cfg: Config, out: Path, scenario: Scenario) -> dict:
    path = cfg.path("simulate.input")
    if path is None:
        raise ConfigError("simulate.input", "an input CSV of points is required")
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if X.shape[1] != scenario.natural.dim:
        raise ConfigError("simulate.input", f"expected {scenario.natural.dim} columns, found {X.shape[1]}")
    y = scenario.simulator(X)
    with open(out / "indicator.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(scenario.simulator, LaneChangeSimulator):
            sim = scenario.simulator
            r_min = min_range(X, sim.v, sim.cfg)
            w.writerow(["ttc_inv", "r_inv", "min_range", "indicator"])
            for row, m, v in zip(X, r_min, y):
                w.writerow([_f(row[0]), _f(row[1]), _f(m), int(v)])
        else:
            w.writerow([f"x{i}" for i in range(1, X.shape[1] + 1)] + ["indicator"])
            for row, v in zip(X, y):
                w.writerow([_f(t) for t in row] + [int(v)])
    return {"points": int(X.shape[0])}


COMMANDS = {
    "fit": cmd_fit,
    "estimate": cmd_estimate,
    "is": cmd_is,
    "ce": cmd_ce,
    "adapt": cmd_adapt,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
}


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("kriging-ae", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def run(subcommand: str, config_path=None, overrides=(), out_dir=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    if subcommand not in COMMANDS:
        print(f"error: unknown subcommand {subcommand!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(config_path, overrides)
        scenario = make_scenario(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    digest = cfg.hash()
    if out_dir is None:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
        out_dir = Path("runs") / f"{stamp}-{digest[:12]}"
    out = Path(out_dir)
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[subcommand](cfg, out, scenario)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # anything else is a runtime failure with a message, not a traceback
        log.debug("run failed", exc_info=True)
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest = {
        "subcommand": subcommand,
        "config_hash": digest,
        "seed": cfg["run"]["seed"],
        "workers": cfg["run"]["workers"],
        "indicator": cfg["run"]["indicator"],
        "config": cfg.canonical(),
        "config_dir": str(cfg.base_dir),
        "versions": _versions(),
        "simulator_calls": int(scenario.simulator.calls),
        "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3),
        **extra,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kriging-ae", description="Kriging-surrogate rare-event estimation runner")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("-c", "--config", help="INI config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--workers", type=int, help="worker pool size (run.workers)")
    p.add_argument("--indicator", choices=("true", "plugin", "expected"), help="indicator mode (run.indicator)")
    p.add_argument("-o", "--out", help="run directory (default runs/<timestamp>-<config hash>)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    for key in ("seed", "workers", "indicator"):
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"run.{key}={value}")
    return run(args.subcommand, args.config, overrides, args.out)


if __name__ == "__main__":
    sys.exit(main())
