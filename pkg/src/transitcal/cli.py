"""Command-line pipeline: generate, simulate, calibrate and compare.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a configuration or
validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path as FsPath
from typing import Mapping, Sequence

from . import reporting
from .calibration import CalibrationConfig, CalibrationProblem, InsufficientDataWarning, calibrate
from .choice import TRUE_PARAMS, ChoiceParams, benchmark_params, load_params, save_params
from .datagen import (DemandProfile, SyntheticDataset, bundled_small_network, generate_demand,
                      generate_ground_truth, load_dataset, save_dataset)
from .network import NetworkError, format_hms, load_network, load_timetable, parse_hms
from .simulator import DROPPED, SimConfig, extract_indicators, run_simulation, write_sim_output

__all__ = ["ConfigError", "RunConfig", "main", "cmd_generate", "cmd_simulate", "cmd_calibrate", "cmd_compare"]

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _time(v) -> float:
    return float(parse_hms(v)) if isinstance(v, str) else float(v)


@dataclass
class RunConfig:
    """Every knob of the pipeline in one place.

    Times may be given as seconds or ``HH:MM:SS`` strings. ``network``,
    ``timetable`` and ``profile`` are file paths; when unset the bundled
    network and its demand profile are used.
    """

    network: str | None = None
    timetable: str | None = None
    profile: str | None = None
    seed: int = 0
    capacity: float | None = 200.0
    walk_speed: float = 1.5
    gamma: float = 5.0
    k: int = 5
    detour_cap: float = 2.0
    tau: float = 900.0
    t0: float = 17 * 3600.0
    eta: float = 600.0
    qkl: int = 50
    budget: int = 100
    bounds: Sequence[Sequence[float]] = ((-10.0, 0.0),) * 4
    window: Sequence[float] = (18 * 3600.0, 19 * 3600.0)
    report_windows: Sequence[Sequence] = field(
        default_factory=lambda: [(w.name, w.start, w.end) for w in reporting.DEFAULT_WINDOWS])

    def __post_init__(self) -> None:
        self.t0 = _time(self.t0)
        self.window = tuple(_time(t) for t in self.window)
        if self.capacity is None:
            self.capacity = math.inf
        self.report_windows = [self._report_window(w) for w in self.report_windows]
        checks = [
            (self.walk_speed > 0, "walk_speed must be positive"),
            (self.capacity > 0, "capacity must be positive"),
            (self.gamma >= 0, "gamma must be non-negative"),
            (self.k >= 1, "k must be at least 1"),
            (self.detour_cap >= 1, "detour_cap must be at least 1"),
            (self.seed >= 0, "seed must be non-negative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.calibration_config()
            self.sim_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @staticmethod
    def _report_window(w) -> reporting.ReportWindow:
        if isinstance(w, reporting.ReportWindow):
            return w
        if len(w) == 2:
            a, b = _time(w[0]), _time(w[1])
            return reporting.ReportWindow(f"{format_hms(a)[:5]}-{format_hms(b)[:5]}", a, b)
        return reporting.ReportWindow(str(w[0]), _time(w[1]), _time(w[2]))

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def sim_config(self, seed: int | None = None) -> SimConfig:
        return SimConfig(tau=self.tau, t0=self.t0, capacity=self.capacity,
                         seed=self.seed if seed is None else seed)

    def calibration_config(self) -> CalibrationConfig:
        return CalibrationConfig(eta=self.eta, qkl=self.qkl, tau=self.tau, t0=self.t0, window=tuple(self.window),
                                 bounds=tuple(tuple(b) for b in self.bounds), budget=self.budget, seed=self.seed)


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------

def _require(path: str | FsPath) -> FsPath:
    p = FsPath(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def cmd_generate(config: RunConfig, out: str | FsPath) -> SyntheticDataset:
    """Write a synthetic dataset generated under the true coefficients."""
    bundled = bundled_small_network(config.capacity)
    network = load_network(_require(config.network)) if config.network else bundled.network
    network = replace(network, walk_speed=config.walk_speed)
    timetable = load_timetable(_require(config.timetable)) if config.timetable else bundled.timetable
    timetable.validate(network)
    if config.profile:
        with open(_require(config.profile)) as fh:
            profile = DemandProfile.from_dict(json.load(fh))
    else:
        profile = bundled.profile
    for o, d in profile.od_rates:
        if o not in network.stations or d not in network.stations:
            raise ConfigError(f"profile OD ({o}, {d}) references an unknown station")
    demand = generate_demand(profile, config.seed)
    ds = generate_ground_truth(network, timetable, demand, TRUE_PARAMS, config.sim_config(), config.k,
                               config.detour_cap, config.gamma,
                               extra_metadata={"seed": config.seed, "profile": profile.to_dict()})
    save_dataset(ds, out)
    return ds


def _load(dataset: str | FsPath) -> SyntheticDataset:
    d = FsPath(dataset)
    for name in ("metadata.json", "network.json", "timetable.csv", "demand.csv", "afc.csv"):
        _require(d / name)
    return load_dataset(d)


def _model(choice: str, beta: str | None, ds: SyntheticDataset):
    if choice == "true":
        return ds.true_params
    if choice == "calibrated":
        if beta is None:
            raise ConfigError("--choice calibrated needs --beta FILE")
        return load_params(_require(beta))
    return benchmark_params(choice)


def cmd_simulate(config: RunConfig, dataset: str | FsPath, out: str | FsPath, choice: str = "true",
                 beta: str | None = None) -> int:
    """Simulate the dataset's demand and write outputs and indicators; returns the number dropped."""
    ds = _load(dataset)
    sim = replace(ds.sim_config, tau=config.tau, t0=config.t0)
    output = run_simulation(ds.network, ds.timetable, ds.choice_sets(), _model(choice, beta, ds), ds.demand, sim)
    write_sim_output(output, out, extract_indicators(output, config.tau))
    return sum(1 for p in output.passengers if p.status == DROPPED)


def _problem(ds: SyntheticDataset, config: RunConfig) -> CalibrationProblem:
    # common random numbers: the simulator keeps the dataset's seed for every evaluation
    sim = replace(ds.sim_config, tau=config.tau, t0=config.t0)
    return CalibrationProblem(ds.network, ds.timetable, ds.choice_sets(), ds.demand, sim)


def cmd_calibrate(config: RunConfig, dataset: str | FsPath, out: str | FsPath, progress=None):
    """Calibrate against the dataset's AFC records and write the estimate, trace and recovery table."""
    ds = _load(dataset)
    report = calibrate(ds.afc, _problem(ds, config), config.calibration_config(), progress)
    d = FsPath(out)
    d.mkdir(parents=True, exist_ok=True)
    save_params(report.best, d / "beta_best.json")
    reporting.write_trace(report.trace, d / "trace.csv")
    true = ds.metadata.get("true_params")
    reporting.write_recovery_table(report.best.to_dict(), true, d / "recovery.csv")
    return report


def _horizon(ds: SyntheticDataset) -> tuple[float, float]:
    prof = ds.metadata.get("profile")
    if prof is not None:
        return float(prof["start"]), float(prof["end"])
    times = [r.tap_in for r in ds.demand] + [r.tap_out for r in ds.afc if r.tap_out is not None]
    return min(times), max(times)


def cmd_compare(config: RunConfig, dataset: str | FsPath, beta: str | FsPath, out: str | FsPath) -> list[dict]:
    """RMSE table and scatter data for the calibrated model and the benchmarks."""
    ds = _load(dataset)
    horizon = _horizon(ds)
    for w in config.report_windows:
        reporting.check_window(w, horizon)
    problem = _problem(ds, config)
    models = {"calibrated": load_params(_require(beta)), "uniform": benchmark_params("uniform"),
              "shortest": benchmark_params("shortest_path")}
    if "true_params" in ds.metadata:
        models["true"] = ds.true_params
    runs = {name: run_simulation(problem.network, problem.timetable, problem.choice_sets, m, problem.demand,
                                 problem.sim_config).passengers
            for name, m in models.items()}
    rows = reporting.compare_models(ds.afc, runs, config.report_windows, config.tau, config.t0, horizon)
    d = FsPath(out)
    d.mkdir(parents=True, exist_ok=True)
    reporting.write_rmse_table(rows, d / "rmse.csv")
    full = max(config.report_windows, key=lambda w: w.end - w.start)
    reporting.write_scatter(reporting.scatter_rows(ds.afc, runs, full, config.tau, config.t0), d / "scatter.csv")
    return rows


# ----------------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transitcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with run settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--tau", type=float, help="interval length in seconds")

    sub.add_parser("generate", parents=[common], help="generate a synthetic AFC dataset")

    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset's demand")
    p.add_argument("--dataset", required=True)
    p.add_argument("--choice", choices=("calibrated", "uniform", "shortest", "true"), default="true")
    p.add_argument("--beta", help="coefficients file for --choice calibrated")

    p = sub.add_parser("calibrate", parents=[common], help="estimate choice coefficients")
    p.add_argument("--dataset", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--qkl", type=int)
    p.add_argument("--quiet", action="store_true", help="no per-evaluation progress")

    p = sub.add_parser("compare", parents=[common], help="RMSE of calibrated and benchmark models")
    p.add_argument("--dataset", required=True)
    p.add_argument("--beta", required=True)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        with open(_require(args.config)) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    for key in ("seed", "tau", "budget", "eta", "qkl"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


def _progress(row: Mapping) -> None:
    print(f"eval {row['iteration']:3d}  total {row['total']:.6g}  best {row['best']:.6g}", file=sys.stderr)


def run(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.command == "generate":
        ds = cmd_generate(config, args.out)
        print(f"{len(ds.demand)} passengers written to {args.out}")
    elif args.command == "simulate":
        dropped = cmd_simulate(config, args.dataset, args.out, args.choice, args.beta)
        if dropped:
            print(f"warning: {dropped} passengers had no path and were dropped", file=sys.stderr)
        print(f"simulation written to {args.out}")
    elif args.command == "calibrate":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", InsufficientDataWarning)
            report = cmd_calibrate(config, args.dataset, args.out, None if args.quiet else _progress)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        coeffs = "  ".join(f"{k}={v:.4f}" for k, v in report.best.to_dict().items())
        print(f"objective {report.value.total:.6g}  {coeffs}")
    elif args.command == "compare":
        for row in cmd_compare(config, args.dataset, args.beta, args.out):
            print(f"{row['window']:>12}  {row['model']:>10}  rmse {row['rmse']:.3f}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, FileNotFoundError, NetworkError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
