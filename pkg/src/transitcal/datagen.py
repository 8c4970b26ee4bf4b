"""Synthetic demand, ground-truth AFC data and the bundled test network."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Mapping, Sequence

import numpy as np

from .choice import ChoiceParams, TRUE_PARAMS
from .network import (ChoiceSet, Line, Network, Station, Timetable, build_choice_sets, load_network,
                      load_timetable, make_timetable, save_network, save_timetable)
from .simulator import SimConfig, SimOutput, TapIn, load_demand, run_simulation, save_demand

__all__ = [
    "DemandProfile",
    "SyntheticDataset",
    "BundledScenario",
    "generate_demand",
    "generate_ground_truth",
    "bundled_small_network",
    "save_dataset",
    "load_dataset",
    "replay",
]

HOUR = 3600.0


@dataclass
class DemandProfile:
    """Hourly OD entry rates scaled by a per-interval shape.

    The study period runs from ``start`` to ``end`` in intervals of
    ``interval`` seconds; ``shape`` holds one multiplier per interval. The
    warm-up ends at ``estimation[0]`` and the cool-down starts at
    ``estimation[1]``.
    """

    od_rates: Mapping[tuple[str, str], float]
    start: float = 17 * HOUR
    end: float = 20 * HOUR
    estimation: tuple[float, float] = (18 * HOUR, 19 * HOUR)
    interval: float = 900.0
    shape: Sequence[float] | None = None

    def __post_init__(self) -> None:
        if any(r < 0 for r in self.od_rates.values()):
            raise ValueError("rates must be non-negative")
        if not self.start <= self.estimation[0] <= self.estimation[1] <= self.end:
            raise ValueError("windows must be ordered start <= estimation <= end")
        n = self.n_intervals
        if self.shape is None:
            self.shape = (1.0,) * n
        self.shape = tuple(float(s) for s in self.shape)
        if len(self.shape) != n or any(s < 0 for s in self.shape):
            raise ValueError(f"shape needs {n} non-negative multipliers")

    @property
    def n_intervals(self) -> int:
        return int(round((self.end - self.start) / self.interval))

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "estimation": list(self.estimation),
                "interval": self.interval, "shape": list(self.shape),
                "od_rates": [[o, d, r] for (o, d), r in sorted(self.od_rates.items())]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "DemandProfile":
        return cls({(o, d): float(r) for o, d, r in data["od_rates"]}, data["start"], data["end"],
                   tuple(data["estimation"]), data["interval"], data["shape"])


def generate_demand(profile: DemandProfile, seed: int = 0) -> list[TapIn]:
    """Poisson tap-ins per OD and interval, uniform within the interval.

    Tap-in times are whole seconds. Records are sorted by time and numbered.
    """
    rng = np.random.default_rng(seed)
    raw = []
    for (o, d) in sorted(profile.od_rates):
        rate = profile.od_rates[(o, d)]
        for k, mult in enumerate(profile.shape):
            lam = rate * mult * profile.interval / HOUR
            n = int(rng.poisson(lam)) if lam > 0 else 0
            if n:
                lo = profile.start + k * profile.interval
                times = np.floor(lo + rng.random(n) * profile.interval)
                raw.extend((float(t), o, d) for t in times)
    raw.sort()
    return [TapIn(f"P{i:06d}", o, d, t) for i, (t, o, d) in enumerate(raw)]


@dataclass
class SyntheticDataset:
    network: Network
    timetable: Timetable
    demand: list[TapIn]
    afc: list[TapIn]
    true_paths: dict[str, int | None]
    metadata: dict
    output: SimOutput | None = field(default=None, repr=False)

    @property
    def true_params(self) -> ChoiceParams:
        return ChoiceParams.from_dict(self.metadata["true_params"])

    @property
    def sim_config(self) -> SimConfig:
        return SimConfig.from_dict(self.metadata["sim_config"])

    def choice_sets(self) -> dict[tuple[str, str], ChoiceSet]:
        cs = self.metadata["choice_sets"]
        ods = {(r.origin, r.destination) for r in self.demand}
        return build_choice_sets(self.network, ods, cs["k"], cs["detour_cap"], cs["gamma"])


def generate_ground_truth(network: Network, timetable: Timetable, demand: Sequence[TapIn],
                          true_params: ChoiceParams = TRUE_PARAMS, sim_config: SimConfig | None = None,
                          k: int = 5, detour_cap: float = 2.0, gamma: float = 5.0,
                          extra_metadata: Mapping | None = None) -> SyntheticDataset:
    """Simulate the demand under known choice parameters to obtain tap-outs.

    The sampled path of every passenger is kept in ``true_paths`` for
    evaluation only; calibration sees just the AFC records.
    """
    sim_config = sim_config or SimConfig()
    ods = {(r.origin, r.destination) for r in demand}
    choice_sets = build_choice_sets(network, ods, k, detour_cap, gamma)
    out = run_simulation(network, timetable, choice_sets, true_params, demand, sim_config)
    by_id = out.by_id()
    afc = [TapIn(r.passenger_id, r.origin, r.destination, r.tap_in, by_id[r.passenger_id].tap_out)
           for r in demand]
    true_paths = {r.passenger_id: by_id[r.passenger_id].path_index for r in demand}
    meta = {
        "true_params": true_params.to_dict(),
        "sim_config": sim_config.to_dict(),
        "choice_sets": {"k": k, "detour_cap": detour_cap, "gamma": gamma},
        "demand_model": "poisson arrivals, uniform within interval",
        "n_passengers": len(demand),
        "max_times_left_behind": max((p.times_left_behind for p in out.passengers), default=0),
        "n_left_behind": sum(1 for p in out.passengers if p.times_left_behind > 0),
    }
    if extra_metadata:
        meta.update(extra_metadata)
    return SyntheticDataset(network, timetable, list(demand), afc, true_paths, meta, out)


def replay(dataset: SyntheticDataset) -> SimOutput:
    """Re-run the simulator from the dataset's own metadata."""
    return run_simulation(dataset.network, dataset.timetable, dataset.choice_sets(), dataset.true_params,
                          dataset.demand, dataset.sim_config)


def save_dataset(dataset: SyntheticDataset, directory: str | FsPath) -> None:
    d = FsPath(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_network(dataset.network, d / "network.json")
    save_timetable(dataset.timetable, d / "timetable.csv")
    save_demand(dataset.demand, d / "demand.csv")
    save_demand(dataset.afc, d / "afc.csv", with_tap_out=True)
    with open(d / "true_paths.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["passenger_id", "path_index"])
        for pid, idx in dataset.true_paths.items():
            w.writerow([pid, "" if idx is None else idx])
    with open(d / "metadata.json", "w") as fh:
        json.dump(dataset.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory: str | FsPath) -> SyntheticDataset:
    d = FsPath(directory)
    with open(d / "metadata.json") as fh:
        meta = json.load(fh)
    true_paths: dict[str, int | None] = {}
    if (d / "true_paths.csv").exists():
        with open(d / "true_paths.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                true_paths[row["passenger_id"]] = int(row["path_index"]) if row["path_index"] else None
    return SyntheticDataset(load_network(d / "network.json"), load_timetable(d / "timetable.csv"),
                            load_demand(d / "demand.csv"), load_demand(d / "afc.csv"), true_paths, meta)


# ----------------------------------------------------------------------------
# Bundled network
# ----------------------------------------------------------------------------

@dataclass
class BundledScenario:
    network: Network
    timetable: Timetable
    profile: DemandProfile
    target_ods: tuple[tuple[str, str], ...]
    capacity: float


_COORDS = {
    "A": (0, 0), "B": (2500, 0), "C": (5000, 0), "D": (7500, 0), "E": (10000, 0),
    "F": (2500, 3000), "G": (5000, 3500), "H": (7500, 3000),
    "I": (5000, -3000), "J": (5000, 6500),
}
_ROUTES = {
    "RED": ("A", "B", "C", "D", "E"),
    "BLUE": ("A", "F", "G", "H", "E"),
    "GREEN": ("J", "G", "C", "I"),
}
_HEADWAY = {"RED": 180.0, "BLUE": 300.0, "GREEN": 360.0}
# m/s including acceleration losses; Red is an all-stops local, Blue an express
_SPEED = {"RED": 11.0, "BLUE": 20.0, "GREEN": 15.0}
_GATE = {"A": 120, "B": 150, "C": 250, "D": 120, "E": 180, "F": 140, "G": 260, "H": 130, "I": 110, "J": 100}
_TRANSFER = {"A": 180.0, "C": 240.0, "E": 150.0, "G": 300.0, "B": 200.0}

# high-volume OD pairs with several reasonable paths
# volumes sit just above what the journey-time term needs per interval; heavier
# flows add exit-count noise faster than they add path-share information
_TARGETS = {
    ("A", "E"): 600.0, ("E", "A"): 300.0,
    ("A", "H"): 480.0, ("I", "E"): 300.0,
    ("J", "A"): 360.0, ("B", "H"): 300.0,
    ("F", "D"): 240.0, ("I", "A"): 240.0,
}
_BACKGROUND = 20.0
_SHAPE = (0.6, 0.75, 0.9, 1.0, 1.15, 1.3, 1.3, 1.1, 0.95, 0.8, 0.7, 0.6)


def _run_time(route: str, a: str, b: str) -> float:
    (xa, ya), (xb, yb) = _COORDS[a], _COORDS[b]
    return float(5 * round(math.hypot(xb - xa, yb - ya) / _SPEED[route] / 5))


def bundled_small_network(capacity: float = 200.0) -> BundledScenario:
    """Ten stations on three two-way routes with an evening-peak demand profile.

    Red runs along the south, Blue arcs north between the same end stations
    and Green crosses both, so most long OD pairs have competing paths.
    """
    lines = {}
    for route, stops in _ROUTES.items():
        for direction, seq in (("up", stops), ("down", tuple(reversed(stops)))):
            lid = f"{route}_{direction}"
            lines[lid] = Line(lid, seq, tuple(_run_time(route, a, b) for a, b in zip(seq, seq[1:])), direction=direction)
    stations = {}
    for sid, (x, y) in _COORDS.items():
        serving = sorted(lid for lid, ln in lines.items() if sid in ln.stops)
        gate = {lid: float(_GATE[sid] + 20 * (i // 2)) for i, lid in enumerate(serving)}
        transfers = {}
        if sid in _TRANSFER:
            for i, a in enumerate(serving):
                for b in serving[i + 1:]:
                    if a.split("_")[0] != b.split("_")[0]:
                        transfers[(a, b)] = _TRANSFER[sid]
        stations[sid] = Station(sid, f"Station {sid}", float(x), float(y), gate, transfers)
    network = Network(stations, lines)

    start = 16 * HOUR + 30 * 60
    first = {}
    for lid in lines:
        route = lid.split("_")[0]
        offset = 60.0 if lid.endswith("down") else 0.0
        first[lid] = start + offset
    headways = {lid: _HEADWAY[lid.split("_")[0]] for lid in lines}
    timetable = make_timetable(network, first, 20 * HOUR + 45 * 60, headways, dwell=30.0)

    rates: dict[tuple[str, str], float] = {}
    ids = sorted(_COORDS)
    for o in ids:
        for d in ids:
            if o != d:
                rates[(o, d)] = _TARGETS.get((o, d), _BACKGROUND)
    profile = DemandProfile(rates, shape=_SHAPE)
    return BundledScenario(network, timetable, profile, tuple(sorted(_TARGETS)), capacity)
