"""Event-based loading of passengers onto timetabled trains.

Train arrivals and departures are processed in time order. Before each
event, passengers who tapped in since the previous event are assigned a
path and queued at their first platform. Arrivals offload passengers who
exit or transfer; departures board waiting passengers first come, first
served, up to the remaining capacity. Passengers that do not fit are left
behind and keep their place at the head of the queue.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

import numpy as np

from .choice import ChoiceModel, index_from_uniform, path_probabilities
from .network import ChoiceSet, Network, Path, Timetable, Trip, format_hms, parse_hms

__all__ = [
    "ARRIVAL",
    "DEPARTURE",
    "Event",
    "TapIn",
    "SimConfig",
    "Passenger",
    "Train",
    "SimState",
    "SimOutput",
    "PassengerRecord",
    "LoadRecord",
    "BoardingRecord",
    "Indicators",
    "SimulationStateError",
    "UnreachableODError",
    "build_event_list",
    "run_simulation",
    "process_arrival",
    "process_departure",
    "extract_indicators",
    "write_sim_output",
    "load_demand",
    "save_demand",
]

log = logging.getLogger(__name__)

ARRIVAL = "arrival"
DEPARTURE = "departure"

PENDING = "pending"
QUEUED = "queued"
ONBOARD = "onboard"
EXITED = "exited"
DROPPED = "dropped"


class SimulationStateError(RuntimeError):
    pass


class UnreachableODError(RuntimeError):
    pass


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    train_id: str
    station: str
    line_id: str
    stop_index: int

    @property
    def platform(self) -> tuple[str, str]:
        return (self.station, self.line_id)

    def sort_key(self) -> tuple:
        return (self.time, 0 if self.kind == ARRIVAL else 1, self.train_id, self.stop_index)


def build_event_list(timetable: Timetable) -> list[Event]:
    """One arrival and one departure per timetabled stop, in processing order.

    Equal times put arrivals before departures, then order by train id.
    """
    events = []
    for trip in timetable.trips:
        for idx, (station, arr, dep) in enumerate(trip.stops):
            events.append(Event(arr, ARRIVAL, trip.train_id, station, trip.line_id, idx))
            events.append(Event(dep, DEPARTURE, trip.train_id, station, trip.line_id, idx))
    events.sort(key=Event.sort_key)
    return events


@dataclass(frozen=True)
class TapIn:
    passenger_id: str
    origin: str
    destination: str
    tap_in: float
    tap_out: float | None = None


@dataclass
class SimConfig:
    """Simulation knobs.

    ``capacity`` is the default train capacity for lines without their own;
    ``math.inf`` disables crowding. With ``walk_noise`` the walk times are
    scaled by a mean-one lognormal factor with coefficient of variation
    ``walk_cv``. ``on_unreachable`` is ``"drop"`` or ``"abort"``.
    """

    tau: float = 900.0
    t0: float = 17 * 3600.0
    capacity: float = 200.0
    seed: int = 0
    horizon: tuple[float, float] | None = None
    walk_noise: bool = False
    walk_cv: float = 0.2
    on_unreachable: str = "drop"

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.capacity > 0:
            raise ValueError("capacity must be positive")
        if self.walk_cv < 0:
            raise ValueError("walk_cv must be non-negative")
        if self.on_unreachable not in ("drop", "abort"):
            raise ValueError("on_unreachable must be 'drop' or 'abort'")
        if self.horizon is not None and not self.horizon[0] <= self.horizon[1]:
            raise ValueError("horizon start after end")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "t0": self.t0,
            "capacity": None if math.isinf(self.capacity) else self.capacity,
            "seed": self.seed,
            "horizon": list(self.horizon) if self.horizon is not None else None,
            "walk_noise": self.walk_noise,
            "walk_cv": self.walk_cv,
            "on_unreachable": self.on_unreachable,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimConfig":
        d = dict(data)
        if d.get("capacity", 200.0) is None:
            d["capacity"] = math.inf
        if d.get("horizon") is not None:
            d["horizon"] = tuple(d["horizon"])
        return cls(**d)


class Passenger:
    __slots__ = ("order", "id", "origin", "destination", "tap_in", "path", "path_index", "leg",
                 "platform_arrival", "times_left_behind", "tap_out", "status", "train", "rides")

    def __init__(self, order: int, rec: TapIn):
        self.order = order
        self.id = rec.passenger_id
        self.origin = rec.origin
        self.destination = rec.destination
        self.tap_in = rec.tap_in
        self.path: Path | None = None
        self.path_index: int | None = None
        self.leg = 0
        self.platform_arrival: float | None = None
        self.times_left_behind = 0
        self.tap_out: float | None = None
        self.status = PENDING
        self.train: str | None = None
        self.rides: list[tuple[float, str, float]] = []

    def queue_key(self) -> tuple[float, int]:
        return (self.platform_arrival, self.order)


class Train:
    __slots__ = ("id", "line_id", "trip", "capacity", "onboard", "load", "location", "_downstream")

    def __init__(self, trip: Trip, capacity: float):
        self.id = trip.train_id
        self.line_id = trip.line_id
        self.trip = trip
        self.capacity = capacity
        self.onboard: dict[str, list[Passenger]] = {}
        self.load = 0
        self.location: tuple[str, int] | None = None
        self._downstream: dict[int, frozenset] = {}

    def serves_after(self, stop_index: int, station: str) -> bool:
        if stop_index not in self._downstream:
            self._downstream[stop_index] = frozenset(s for s, _, _ in self.trip.stops[stop_index + 1:])
        return station in self._downstream[stop_index]


@dataclass(frozen=True)
class PassengerRecord:
    passenger_id: str
    origin: str
    destination: str
    tap_in: float
    tap_out: float | None
    path_index: int | None
    times_left_behind: int
    status: str
    # (platform arrival, train id, boarding time) per completed boarding
    rides: tuple[tuple[float, str, float], ...] = ()

    @property
    def journey_time(self) -> float | None:
        return None if self.tap_out is None else self.tap_out - self.tap_in


@dataclass(frozen=True)
class LoadRecord:
    train_id: str
    line_id: str
    from_station: str
    to_station: str
    time: float
    load: int


@dataclass(frozen=True)
class BoardingRecord:
    time: float
    station: str
    line_id: str
    train_id: str
    boarded: int
    left_behind: int
    queue_after: int


@dataclass
class SimOutput:
    passengers: list[PassengerRecord]
    exit_flows: dict[tuple[str, str, int], int]
    loads: list[LoadRecord]
    boardings: list[BoardingRecord]
    tau: float
    t0: float
    n_events: int = 0

    def status_counts(self, od: tuple[str, str] | None = None) -> Counter:
        return Counter(p.status for p in self.passengers
                       if od is None or (p.origin, p.destination) == od)

    def by_id(self) -> dict[str, PassengerRecord]:
        return {p.passenger_id: p for p in self.passengers}


class SimState:
    """Mutable state of one simulation run."""

    def __init__(self, network: Network, timetable: Timetable, choice_sets: Mapping[tuple[str, str], ChoiceSet],
                 model: ChoiceModel, demand: Sequence[TapIn], config: SimConfig):
        self.network = network
        self.choice_sets = choice_sets
        self.model = model
        self.config = config
        self.trips = {t.train_id: t for t in timetable.trips}
        self.trains: dict[str, Train] = {}
        self.queues: dict[tuple[str, str], list[Passenger]] = {}
        order = sorted(range(len(demand)), key=lambda i: (demand[i].tap_in, i))
        self.passengers = [Passenger(k, demand[i]) for k, i in enumerate(order)]
        self.next_pending = 0
        self.clock = -math.inf
        self.exit_flows: Counter = Counter()
        self.loads: list[LoadRecord] = []
        self.boardings: list[BoardingRecord] = []
        self._probs: dict[tuple[str, str], np.ndarray] = {}

        choice_rng, walk_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
        n = len(self.passengers)
        # common random numbers: one draw per passenger regardless of the choice model
        self.uniforms = choice_rng.random(n)
        max_legs = max((len(p.legs) for cs in choice_sets.values() for p in cs.paths), default=1)
        n_walks = max_legs + 1
        if config.walk_noise and config.walk_cv > 0:
            sigma = math.sqrt(math.log1p(config.walk_cv ** 2))
            self.walk_factors = walk_rng.lognormal(-0.5 * sigma ** 2, sigma, size=(n, n_walks))
        else:
            self.walk_factors = np.ones((n, n_walks))

    # -- helpers -------------------------------------------------------------

    def _tick(self, t: float) -> None:
        if t < self.clock:
            raise SimulationStateError(f"time went backwards: {t} < {self.clock}")
        self.clock = t

    def walk_seconds(self, p: Passenger, slot: int, base: float) -> int:
        # walk durations are whole seconds, matching AFC timestamp resolution
        return int(math.floor(base * self.walk_factors[p.order, slot] + 0.5))

    def interval(self, t: float) -> int:
        return int(math.floor((t - self.config.t0) / self.config.tau))

    def enqueue(self, p: Passenger, platform: tuple[str, str]) -> None:
        q = self.queues.setdefault(platform, [])
        bisect.insort(q, p, key=Passenger.queue_key)
        p.status = QUEUED
        p.train = None

    def capacity_of(self, line_id: str) -> float:
        cap = self.network.lines[line_id].capacity
        return self.config.capacity if cap is None else cap

    def train_for(self, event: Event) -> Train:
        train = self.trains.get(event.train_id)
        if train is None:
            train = Train(self.trips[event.train_id], self.capacity_of(event.line_id))
            self.trains[event.train_id] = train
        return train

    def assign_until(self, t: float) -> None:
        """Assign a path to every pending passenger with ``tap_in <= t``."""
        ps = self.passengers
        while self.next_pending < len(ps) and ps[self.next_pending].tap_in <= t:
            self.assign(ps[self.next_pending])
            self.next_pending += 1

    def assign(self, p: Passenger) -> None:
        od = (p.origin, p.destination)
        cs = self.choice_sets.get(od)
        if cs is None:
            if self.config.on_unreachable == "abort":
                raise UnreachableODError(f"no choice set for {od} (passenger {p.id})")
            log.warning("dropping passenger %s: no path for %s", p.id, od)
            p.status = DROPPED
            return
        probs = self._probs.get(od)
        if probs is None:
            probs = self._probs[od] = path_probabilities(cs, self.model).probs
        p.path_index = index_from_uniform(probs, self.uniforms[p.order])
        p.path = cs.paths[p.path_index]
        first = p.path.legs[0]
        access = self.walk_seconds(p, 0, self.network.access_time(first.board, first.line))
        p.platform_arrival = p.tap_in + access
        self.enqueue(p, (first.board, first.line))

    def output(self, n_events: int) -> SimOutput:
        records = [PassengerRecord(p.id, p.origin, p.destination, p.tap_in, p.tap_out, p.path_index,
                                   p.times_left_behind, p.status, tuple(p.rides)) for p in self.passengers]
        return SimOutput(records, dict(self.exit_flows), self.loads, self.boardings,
                         self.config.tau, self.config.t0, n_events)


def process_arrival(state: SimState, event: Event) -> SimState:
    """Offload passengers ending a leg here; they exit or walk to their next platform."""
    state._tick(event.time)
    train = state.train_for(event)
    train.location = (event.station, event.stop_index)
    alighting = train.onboard.pop(event.station, [])
    for p in alighting:
        if p.status != ONBOARD or p.train != train.id:
            raise SimulationStateError(f"passenger {p.id} alighting from {train.id} but not onboard")
        train.load -= 1
        leg = p.path.legs[p.leg]
        p.leg += 1
        if p.leg == len(p.path.legs):
            egress = state.walk_seconds(p, 1, state.network.access_time(event.station, leg.line))
            p.tap_out = event.time + egress
            p.status = EXITED
            p.train = None
            state.exit_flows[(p.origin, p.destination, state.interval(p.tap_out))] += 1
        else:
            nxt = p.path.legs[p.leg]
            walk = state.walk_seconds(p, 1 + p.leg, state.network.transfer_time(event.station, leg.line, nxt.line))
            p.platform_arrival = event.time + walk
            state.enqueue(p, (nxt.board, nxt.line))
    return state


def process_departure(state: SimState, event: Event) -> SimState:
    """Board present passengers in queue order until the train is full."""
    state._tick(event.time)
    train = state.train_for(event)
    train.location = (event.station, event.stop_index)
    queue = state.queues.get(event.platform, [])
    remaining = train.capacity - train.load
    kept: list[Passenger] = []
    boarded = denied = 0
    for i, p in enumerate(queue):
        if p.platform_arrival > event.time:
            kept.extend(queue[i:])
            break
        alight = p.path.legs[p.leg].alight
        if not train.serves_after(event.stop_index, alight):
            kept.append(p)
        elif remaining >= 1:
            train.onboard.setdefault(alight, []).append(p)
            p.status = ONBOARD
            p.train = train.id
            p.rides.append((p.platform_arrival, train.id, event.time))
            train.load += 1
            remaining -= 1
            boarded += 1
        else:
            p.times_left_behind += 1
            denied += 1
            kept.append(p)
    if event.platform in state.queues:
        state.queues[event.platform] = kept
    waiting = sum(1 for p in kept if p.platform_arrival <= event.time)
    state.boardings.append(BoardingRecord(event.time, event.station, event.line_id, train.id,
                                          boarded, denied, waiting))
    stops = train.trip.stops
    if event.stop_index + 1 < len(stops):
        state.loads.append(LoadRecord(train.id, train.line_id, event.station, stops[event.stop_index + 1][0],
                                      event.time, train.load))
    return state


def run_simulation(network: Network, timetable: Timetable, choice_sets: Mapping[tuple[str, str], ChoiceSet],
                   model: ChoiceModel, demand: Sequence[TapIn], config: SimConfig | None = None) -> SimOutput:
    """Simulate one day of operation and return passenger and train outcomes.

    Deterministic given ``config.seed``: each passenger's path draw and walk
    noise come from per-passenger slots of seeded streams, so runs under
    different choice models share random numbers.
    """
    config = config or SimConfig()
    if config.horizon is not None:
        lo, hi = config.horizon
        for rec in demand:
            if not lo <= rec.tap_in <= hi:
                raise ValueError(f"tap-in of {rec.passenger_id} outside the horizon")
    state = SimState(network, timetable, choice_sets, model, demand, config)
    events = build_event_list(timetable)
    if config.horizon is not None:
        events = [e for e in events if config.horizon[0] <= e.time <= config.horizon[1]]
    for event in events:
        state.assign_until(event.time)
        if event.kind == ARRIVAL:
            process_arrival(state, event)
        else:
            process_departure(state, event)
    state.assign_until(math.inf)
    return state.output(len(events))


# ----------------------------------------------------------------------------
# Indicators
# ----------------------------------------------------------------------------

@dataclass
class Indicators:
    train_loads: list[dict] = field(default_factory=list)
    journey_times: list[dict] = field(default_factory=list)
    left_behind: list[dict] = field(default_factory=list)
    peak_queues: list[dict] = field(default_factory=list)


def extract_indicators(output: SimOutput, tau: float | None = None) -> Indicators:
    """Tabulate loads, journey times per (o, d, tap-in interval), left-behinds and peak queues."""
    tau = output.tau if tau is None else tau
    t0 = output.t0

    def interval(t: float) -> int:
        return int(math.floor((t - t0) / tau))

    ind = Indicators()
    ind.train_loads = [dict(train_id=r.train_id, line_id=r.line_id, from_station=r.from_station,
                            to_station=r.to_station, time=r.time, load=r.load) for r in output.loads]

    groups: dict[tuple[str, str, int], list[float]] = {}
    for p in output.passengers:
        if p.tap_out is not None:
            groups.setdefault((p.origin, p.destination, interval(p.tap_in)), []).append(p.tap_out - p.tap_in)
    for key in sorted(groups):
        jt = np.array(groups[key])
        ind.journey_times.append(dict(origin=key[0], destination=key[1], interval=key[2], count=len(jt),
                                      mean=float(jt.mean()), p50=float(np.percentile(jt, 50)),
                                      p90=float(np.percentile(jt, 90))))

    lb: dict[tuple[str, str, int], list[int]] = {}
    peaks: dict[tuple[str, str], tuple[int, float]] = {}
    for r in output.boardings:
        acc = lb.setdefault((r.station, r.line_id, interval(r.time)), [0, 0])
        acc[0] += r.boarded
        acc[1] += r.left_behind
        waiting = r.queue_after
        best = peaks.get((r.station, r.line_id))
        if best is None or waiting > best[0]:
            peaks[(r.station, r.line_id)] = (waiting, r.time)
    for key in sorted(lb):
        boarded, denied = lb[key]
        attempts = boarded + denied
        ind.left_behind.append(dict(station=key[0], line_id=key[1], interval=key[2], boarded=boarded,
                                    left_behind=denied, rate=denied / attempts if attempts else 0.0))
    for key in sorted(peaks):
        ind.peak_queues.append(dict(station=key[0], line_id=key[1], peak_queue=peaks[key][0],
                                    time=peaks[key][1]))
    return ind


# ----------------------------------------------------------------------------
# Files
# ----------------------------------------------------------------------------

def _fmt_time(t: float | None) -> str:
    return "" if t is None else format_hms(t)


def _write_rows(path: FsPath, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_sim_output(output: SimOutput, directory: str | FsPath, indicators: Indicators | None = None) -> None:
    d = FsPath(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_rows(d / "passengers.out",
                ["passenger_id", "origin", "destination", "tap_in_time", "tap_out_time", "path_index",
                 "times_left_behind", "status"],
                ([p.passenger_id, p.origin, p.destination, _fmt_time(p.tap_in), _fmt_time(p.tap_out),
                  "" if p.path_index is None else p.path_index, p.times_left_behind, p.status]
                 for p in output.passengers))
    _write_rows(d / "od_exit_flows.out", ["origin", "destination", "interval_index", "count"],
                ([o, dd, t, c] for (o, dd, t), c in sorted(output.exit_flows.items())))
    _write_rows(d / "loads.out", ["train_id", "line_id", "from_station", "to_station", "departure_time", "load"],
                ([r.train_id, r.line_id, r.from_station, r.to_station, _fmt_time(r.time), r.load]
                 for r in output.loads))
    _write_rows(d / "queues.out",
                ["time", "station", "line_id", "train_id", "boarded", "left_behind", "queue_after"],
                ([_fmt_time(r.time), r.station, r.line_id, r.train_id, r.boarded, r.left_behind, r.queue_after]
                 for r in output.boardings))
    if indicators is not None:
        _write_rows(d / "journey_times.out", ["origin", "destination", "interval_index", "count", "mean_s",
                                              "p50_s", "p90_s"],
                    ([r["origin"], r["destination"], r["interval"], r["count"], f"{r['mean']:.3f}",
                      f"{r['p50']:.3f}", f"{r['p90']:.3f}"] for r in indicators.journey_times))
        _write_rows(d / "left_behind.out", ["station", "line_id", "interval_index", "boarded", "left_behind",
                                            "rate"],
                    ([r["station"], r["line_id"], r["interval"], r["boarded"], r["left_behind"],
                      f"{r['rate']:.6f}"] for r in indicators.left_behind))
        _write_rows(d / "peak_queues.out", ["station", "line_id", "peak_queue", "time"],
                    ([r["station"], r["line_id"], r["peak_queue"], _fmt_time(r["time"])]
                     for r in indicators.peak_queues))


def load_demand(path: str | FsPath) -> list[TapIn]:
    """Read AFC-style rows; ``tap_out_time`` is optional and may be blank."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tap_out = row.get("tap_out_time") or None
            out.append(TapIn(row["passenger_id"], row["origin"], row["destination"], parse_hms(row["tap_in_time"]),
                             parse_hms(tap_out) if tap_out else None))
    return out


def save_demand(records: Sequence[TapIn], path: str | FsPath, with_tap_out: bool = False) -> None:
    header = ["passenger_id", "origin", "destination", "tap_in_time"]
    if with_tap_out:
        header.append("tap_out_time")
    rows = []
    for r in records:
        row = [r.passenger_id, r.origin, r.destination, format_hms(r.tap_in)]
        if with_tap_out:
            row.append(_fmt_time(r.tap_out))
        rows.append(row)
    _write_rows(FsPath(path), header, rows)
