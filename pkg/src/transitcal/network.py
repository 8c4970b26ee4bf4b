"""Network, timetable and path choice-set model.

Times are stored in seconds, choice-model attributes in minutes, distances
in meters and path map distances in kilometers.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "NetworkError",
    "NoPathError",
    "MissingRunTimeError",
    "Station",
    "Line",
    "Leg",
    "Trip",
    "Timetable",
    "Network",
    "Path",
    "ChoiceSet",
    "enumerate_choice_set",
    "build_choice_sets",
    "path_attributes",
    "commonality_factor",
    "parse_hms",
    "format_hms",
    "load_network",
    "save_network",
    "load_timetable",
    "save_timetable",
    "make_timetable",
]

WALK_SPEED = 1.5  # m/s


class NetworkError(ValueError):
    """Raised when network or timetable data violate their invariants."""


class NoPathError(NetworkError):
    pass


class MissingRunTimeError(NetworkError):
    pass


def parse_hms(text: str) -> int:
    """Parse ``HH:MM:SS`` (hours may exceed 23) into seconds from midnight."""
    parts = text.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"expected HH:MM:SS, got {text!r}")
    h, m, s = (int(p) for p in parts)
    return h * 3600 + m * 60 + s


def format_hms(seconds: float) -> str:
    s = int(round(seconds))
    return f"{s // 3600:02d}:{(s % 3600) // 60:02d}:{s % 60:02d}"


@dataclass(frozen=True)
class Station:
    """A station with its walking geometry.

    ``gate_distance`` maps a line id to the gate-to-platform distance of that
    line's platform; the key ``"*"`` is a fallback for unlisted lines.
    ``transfer_distance`` maps ``(from_line, to_line)`` to the walk between
    the two platforms and is looked up in both orientations.
    """

    id: str
    name: str = ""
    x: float | None = None
    y: float | None = None
    gate_distance: Mapping[str, float] = field(default_factory=dict)
    transfer_distance: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, d in self.gate_distance.items():
            if not d >= 0:
                raise NetworkError(f"station {self.id}: negative gate distance for {key}")
        for key, d in self.transfer_distance.items():
            if not d >= 0:
                raise NetworkError(f"station {self.id}: negative transfer distance for {key}")

    @property
    def has_coordinates(self) -> bool:
        return self.x is not None and self.y is not None

    def access_distance(self, line_id: str) -> float:
        return float(self.gate_distance.get(line_id, self.gate_distance.get("*", 0.0)))

    def platform_transfer_distance(self, from_line: str, to_line: str) -> float:
        d = self.transfer_distance
        if (from_line, to_line) in d:
            return float(d[(from_line, to_line)])
        if (to_line, from_line) in d:
            return float(d[(to_line, from_line)])
        return float(d.get(("*", "*"), 0.0))


@dataclass(frozen=True)
class Line:
    """One direction of a rail service.

    ``run_times[i]`` is the run time in seconds from ``stops[i]`` to
    ``stops[i + 1]``; ``segment_lengths`` (meters) is optional and only used
    for map distances when stations carry no coordinates.
    """

    id: str
    stops: tuple[str, ...]
    run_times: tuple[float, ...]
    direction: str = ""
    segment_lengths: tuple[float, ...] | None = None
    capacity: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "stops", tuple(self.stops))
        object.__setattr__(self, "run_times", tuple(float(r) for r in self.run_times))
        if self.segment_lengths is not None:
            object.__setattr__(self, "segment_lengths", tuple(float(v) for v in self.segment_lengths))
        if len(self.stops) < 2:
            raise NetworkError(f"line {self.id}: needs at least 2 stops")
        if any(a == b for a, b in zip(self.stops, self.stops[1:])):
            raise NetworkError(f"line {self.id}: immediate repeat in stop sequence")
        if len(self.run_times) != len(self.stops) - 1:
            raise NetworkError(f"line {self.id}: expected {len(self.stops) - 1} run times")
        if any(not r > 0 for r in self.run_times):
            raise NetworkError(f"line {self.id}: run times must be positive")
        if self.segment_lengths is not None and len(self.segment_lengths) != len(self.run_times):
            raise NetworkError(f"line {self.id}: segment_lengths length mismatch")
        if self.capacity is not None and not self.capacity > 0:
            raise NetworkError(f"line {self.id}: capacity must be positive")

    def positions(self, station: str) -> list[int]:
        return [i for i, s in enumerate(self.stops) if s == station]

    def span(self, board: str, alight: str) -> tuple[int, int]:
        """Stop indices of the first ride from ``board`` to ``alight``."""
        for i in self.positions(board):
            for j in range(i + 1, len(self.stops)):
                if self.stops[j] == alight:
                    return i, j
        raise MissingRunTimeError(f"line {self.id} does not run from {board} to {alight}")


@dataclass(frozen=True, order=True)
class Leg:
    board: str
    alight: str
    line: str


@dataclass(frozen=True)
class Trip:
    """One timetabled run: ``stops`` holds ``(station, arrival, departure)``."""

    train_id: str
    line_id: str
    stops: tuple[tuple[str, float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "stops", tuple((s, float(a), float(d)) for s, a, d in self.stops))
        prev_dep = -math.inf
        for station, arr, dep in self.stops:
            if dep < arr:
                raise NetworkError(f"trip {self.train_id}: departure before arrival at {station}")
            if not arr > prev_dep:
                raise NetworkError(f"trip {self.train_id}: times not increasing at {station}")
            prev_dep = dep


@dataclass(frozen=True)
class Timetable:
    trips: tuple[Trip, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "trips", tuple(self.trips))
        ids = [t.train_id for t in self.trips]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate train ids in timetable")

    def __len__(self) -> int:
        return len(self.trips)

    def validate(self, network: "Network") -> None:
        for trip in self.trips:
            if trip.line_id not in network.lines:
                raise NetworkError(f"trip {trip.train_id}: unknown line {trip.line_id}")
            line = network.lines[trip.line_id]
            names = [s for s, _, _ in trip.stops]
            # trips may run a contiguous part of the line
            n = len(names)
            if not any(list(line.stops[i:i + n]) == names for i in range(len(line.stops) - n + 1)):
                raise NetworkError(f"trip {trip.train_id}: stops are not a contiguous part of line {line.id}")


@dataclass(frozen=True)
class Network:
    stations: Mapping[str, Station]
    lines: Mapping[str, Line]
    walk_speed: float = WALK_SPEED

    def __post_init__(self) -> None:
        if not self.walk_speed > 0:
            raise NetworkError("walk_speed must be positive")
        serving: dict[str, set[str]] = {s: set() for s in self.stations}
        for line in self.lines.values():
            for s in line.stops:
                if s not in self.stations:
                    raise NetworkError(f"line {line.id}: unknown station {s}")
                serving[s].add(line.id)
        for st in self.stations.values():
            for key in st.gate_distance:
                if key != "*" and key not in serving[st.id]:
                    raise NetworkError(f"station {st.id}: gate distance for line {key} not serving it")
            for pair in st.transfer_distance:
                for key in pair:
                    if key != "*" and key not in serving[st.id]:
                        raise NetworkError(f"station {st.id}: transfer distance for line {key} not serving it")
        object.__setattr__(self, "_serving", {s: tuple(sorted(v)) for s, v in serving.items()})

    def lines_at(self, station: str) -> tuple[str, ...]:
        return self._serving[station]  # type: ignore[attr-defined]

    def access_time(self, station: str, line_id: str) -> float:
        """Gate-to-platform walk in seconds (used for both access and egress)."""
        return self.stations[station].access_distance(line_id) / self.walk_speed

    def transfer_time(self, station: str, from_line: str, to_line: str) -> float:
        return self.stations[station].platform_transfer_distance(from_line, to_line) / self.walk_speed

    def run_time(self, leg: Leg) -> float:
        if leg.line not in self.lines:
            raise MissingRunTimeError(f"unknown line {leg.line}")
        line = self.lines[leg.line]
        i, j = line.span(leg.board, leg.alight)
        return sum(line.run_times[i:j])

    def leg_stations(self, leg: Leg) -> tuple[str, ...]:
        line = self.lines[leg.line]
        i, j = line.span(leg.board, leg.alight)
        return line.stops[i:j + 1]

    def _segment_km(self, line: Line, k: int) -> float:
        a, b = self.stations[line.stops[k]], self.stations[line.stops[k + 1]]
        if a.has_coordinates and b.has_coordinates:
            return math.hypot(b.x - a.x, b.y - a.y) / 1000.0
        if line.segment_lengths is not None:
            return line.segment_lengths[k] / 1000.0
        raise NetworkError(f"no coordinates or segment length for {a.id}-{b.id}")

    def map_distance(self, legs: Sequence[Leg]) -> float:
        """Map distance in km: straight-line hops between consecutive stations."""
        total = 0.0
        for leg in legs:
            line = self.lines[leg.line]
            i, j = line.span(leg.board, leg.alight)
            total += sum(self._segment_km(line, k) for k in range(i, j))
        return total


@dataclass(frozen=True)
class Path:
    """A route through the network for one OD pair.

    ``in_vehicle_time`` is in minutes, ``relative_walk_time`` in minutes of
    walking per km of map distance. ``commonality`` is filled in once the
    path belongs to a choice set.
    """

    od: tuple[str, str]
    legs: tuple[Leg, ...]
    station_list: tuple[str, ...]
    in_vehicle_time: float
    relative_walk_time: float
    n_transfers: int
    walk_time: float = 0.0
    commonality: float = 0.0

    @property
    def x(self) -> np.ndarray:
        return np.array([self.in_vehicle_time, self.relative_walk_time, float(self.n_transfers)])

    @property
    def generalized_time(self) -> float:
        return self.in_vehicle_time + self.walk_time

    @property
    def lines(self) -> tuple[str, ...]:
        return tuple(leg.line for leg in self.legs)


@dataclass(frozen=True)
class ChoiceSet:
    od: tuple[str, str]
    paths: tuple[Path, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "paths", tuple(self.paths))
        if not self.paths:
            raise NetworkError(f"empty choice set for {self.od}")
        if len({p.legs for p in self.paths}) != len(self.paths):
            raise NetworkError(f"duplicate paths in choice set for {self.od}")

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i: int) -> Path:
        return self.paths[i]

    def attribute_matrix(self) -> np.ndarray:
        return np.array([p.x for p in self.paths])

    def commonality_vector(self) -> np.ndarray:
        return np.array([p.commonality for p in self.paths])

    def shortest_index(self) -> int:
        """Minimum in-vehicle time; ties by fewer transfers, then leg order."""
        return min(range(len(self.paths)),
                   key=lambda i: (self.paths[i].in_vehicle_time, self.paths[i].n_transfers,
                                  self.paths[i].legs))


def path_attributes(network: Network, legs: Sequence[Leg]) -> tuple[float, float, int]:
    """Return ``(in_vehicle_time, relative_walk_time, n_transfers)`` for a leg list."""
    return _attributes(network, tuple(legs))[:3]


def _attributes(network: Network, legs: tuple[Leg, ...]) -> tuple[float, float, int, float]:
    if not legs:
        raise NetworkError("path has no legs")
    for a, b in zip(legs, legs[1:]):
        if a.alight != b.board:
            raise NetworkError(f"legs do not chain at {a.alight}/{b.board}")
    ivt = sum(network.run_time(leg) for leg in legs) / 60.0
    walk = network.access_time(legs[0].board, legs[0].line)
    walk += sum(network.transfer_time(a.alight, a.line, b.line) for a, b in zip(legs, legs[1:]))
    walk += network.access_time(legs[-1].alight, legs[-1].line)
    walk /= 60.0
    dist = network.map_distance(legs)
    rwt = walk / dist if dist > 0 else 0.0
    return ivt, rwt, len(legs) - 1, walk


def _make_path(network: Network, od: tuple[str, str], legs: tuple[Leg, ...]) -> Path:
    ivt, rwt, ntr, walk = _attributes(network, legs)
    stations: list[str] = [legs[0].board]
    for leg in legs:
        stations.extend(network.leg_stations(leg)[1:])
    return Path(od=od, legs=legs, station_list=tuple(stations), in_vehicle_time=ivt,
                relative_walk_time=rwt, n_transfers=ntr, walk_time=walk)


def commonality_factor(choice_set: ChoiceSet | Sequence[Path], path_index: int, gamma: float = 5.0) -> float:
    """Overlap penalty of one path against every path in its choice set.

    ``F_i = ln sum_j (N_ij / (N_i N_j))**gamma`` with ``N_ij`` the number of
    distinct stations shared by paths ``i`` and ``j``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    paths = choice_set.paths if isinstance(choice_set, ChoiceSet) else tuple(choice_set)
    mine = set(paths[path_index].station_list)
    if not mine:
        raise ValueError("empty station list")
    log_ni = math.log(len(mine))
    logs = []
    for other in paths:
        theirs = set(other.station_list)
        shared = len(mine & theirs)
        if shared:
            logs.append(gamma * (math.log(shared) - log_ni - math.log(len(theirs))))
    top = max(logs)
    return top + math.log(sum(math.exp(v - top) for v in logs))


def _min_in_vehicle_time(network: Network, origin: str, destination: str) -> float:
    adj: dict[str, list[tuple[str, float]]] = {}
    for line in network.lines.values():
        for a, b, r in zip(line.stops, line.stops[1:], line.run_times):
            adj.setdefault(a, []).append((b, r))
    best = {origin: 0.0}
    heap = [(0.0, origin)]
    while heap:
        d, s = heapq.heappop(heap)
        if s == destination:
            return d
        if d > best.get(s, math.inf):
            continue
        for t, r in adj.get(s, ()):
            if d + r < best.get(t, math.inf):
                best[t] = d + r
                heapq.heappush(heap, (d + r, t))
    raise NoPathError(f"{destination} unreachable from {origin}")


def _loop_free_leg_sequences(network: Network, origin: str, destination: str, max_ivt: float):
    """Depth-first search over leg sequences with in-vehicle time <= ``max_ivt`` (seconds)."""
    tol = 1e-9 * max(1.0, max_ivt)
    out: list[tuple[Leg, ...]] = []

    def extend(station: str, prev_line: str | None, visited: frozenset, legs: tuple, ivt: float):
        for line_id in network.lines_at(station):
            if line_id == prev_line:
                continue
            line = network.lines[line_id]
            for i in line.positions(station):
                t = ivt
                seen = set(visited)
                for j in range(i + 1, len(line.stops)):
                    nxt = line.stops[j]
                    t += line.run_times[j - 1]
                    if nxt in seen or t > max_ivt + tol:
                        break
                    seen.add(nxt)
                    leg_seq = legs + (Leg(station, nxt, line_id),)
                    if nxt == destination:
                        out.append(leg_seq)
                        break
                    extend(nxt, line_id, frozenset(seen), leg_seq, t)

    extend(origin, None, frozenset([origin]), (), 0.0)
    return out


def enumerate_choice_set(network: Network, od: tuple[str, str], k: int = 5, detour_cap: float = 2.0,
                         gamma: float = 5.0) -> ChoiceSet:
    """Up to ``k`` loop-free paths ordered by generalized time.

    Paths whose in-vehicle time exceeds ``detour_cap`` times the minimum are
    dropped. The minimum in-vehicle-time path is always kept so the
    shortest-path benchmark is a member of the set.
    """
    origin, destination = od
    if origin == destination:
        raise ValueError("origin equals destination")
    for s in od:
        if s not in network.stations:
            raise NetworkError(f"unknown station {s}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if detour_cap < 1:
        raise ValueError("detour_cap must be >= 1")
    min_ivt = _min_in_vehicle_time(network, origin, destination)
    seqs = _loop_free_leg_sequences(network, origin, destination, detour_cap * min_ivt)
    paths = sorted({legs: _make_path(network, od, legs) for legs in seqs}.values(),
                   key=lambda p: (p.generalized_time, p.n_transfers, p.legs))
    shortest = min(paths, key=lambda p: (p.in_vehicle_time, p.n_transfers, p.legs))
    chosen = paths[:k]
    if shortest not in chosen:
        chosen[-1] = shortest
        chosen.sort(key=lambda p: (p.generalized_time, p.n_transfers, p.legs))
    return with_commonality(ChoiceSet(od, tuple(chosen)), gamma)


def with_commonality(choice_set: ChoiceSet, gamma: float = 5.0) -> ChoiceSet:
    paths = tuple(replace(p, commonality=commonality_factor(choice_set, i, gamma))
                  for i, p in enumerate(choice_set.paths))
    return ChoiceSet(choice_set.od, paths)


def build_choice_sets(network: Network, ods: Iterable[tuple[str, str]], k: int = 5,
                      detour_cap: float = 2.0, gamma: float = 5.0) -> dict[tuple[str, str], ChoiceSet]:
    return {od: enumerate_choice_set(network, od, k, detour_cap, gamma) for od in sorted(set(ods))}


# ----------------------------------------------------------------------------
# Files
# ----------------------------------------------------------------------------

def network_to_dict(network: Network) -> dict:
    stations = []
    for st in network.stations.values():
        stations.append({
            "id": st.id,
            "name": st.name,
            "x": st.x,
            "y": st.y,
            "gate_distance": dict(st.gate_distance),
            "transfers": [{"from_line": a, "to_line": b, "distance": d}
                          for (a, b), d in st.transfer_distance.items()],
        })
    lines = []
    for line in network.lines.values():
        entry = {"id": line.id, "direction": line.direction, "stops": list(line.stops),
                 "run_times": list(line.run_times)}
        if line.segment_lengths is not None:
            entry["segment_lengths"] = list(line.segment_lengths)
        if line.capacity is not None:
            entry["capacity"] = line.capacity
        lines.append(entry)
    return {"walk_speed": network.walk_speed, "stations": stations, "lines": lines}


def network_from_dict(data: Mapping) -> Network:
    stations = {}
    for s in data["stations"]:
        transfers = {(t["from_line"], t["to_line"]): float(t["distance"]) for t in s.get("transfers", [])}
        stations[s["id"]] = Station(id=s["id"], name=s.get("name", ""), x=s.get("x"), y=s.get("y"),
                                    gate_distance={k: float(v) for k, v in s.get("gate_distance", {}).items()},
                                    transfer_distance=transfers)
    lines = {}
    for ln in data["lines"]:
        lines[ln["id"]] = Line(id=ln["id"], direction=ln.get("direction", ""), stops=tuple(ln["stops"]),
                               run_times=tuple(ln["run_times"]),
                               segment_lengths=tuple(ln["segment_lengths"]) if "segment_lengths" in ln else None,
                               capacity=ln.get("capacity"))
    return Network(stations=stations, lines=lines, walk_speed=float(data.get("walk_speed", WALK_SPEED)))


def load_network(path: str | FsPath) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(network: Network, path: str | FsPath) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(network), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_timetable(path: str | FsPath) -> Timetable:
    rows: dict[str, list] = {}
    lines: dict[str, str] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tid = row["train_id"]
            rows.setdefault(tid, []).append((row["station_id"], parse_hms(row["arrival_time"]),
                                             parse_hms(row["departure_time"])))
            if lines.setdefault(tid, row["line_id"]) != row["line_id"]:
                raise NetworkError(f"train {tid} appears on more than one line")
    return Timetable(tuple(Trip(tid, lines[tid], tuple(stops)) for tid, stops in rows.items()))


def save_timetable(timetable: Timetable, path: str | FsPath) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["train_id", "line_id", "station_id", "arrival_time", "departure_time"])
        for trip in timetable.trips:
            for s, a, d in trip.stops:
                w.writerow([trip.train_id, trip.line_id, s, format_hms(a), format_hms(d)])


def make_timetable(network: Network, first_departure: Mapping[str, float], last_departure: float,
                   headway: Mapping[str, float] | float, dwell: float = 30.0) -> Timetable:
    """Regular-headway timetable for every line in ``first_departure``.

    Run times come from the line definitions; each stop gets ``dwell``
    seconds between arrival and departure.
    """
    trips = []
    for line_id, start in first_departure.items():
        line = network.lines[line_id]
        h = headway[line_id] if isinstance(headway, Mapping) else headway
        n = 0
        dep0 = start
        while dep0 <= last_departure:
            stops = []
            t = dep0 - dwell
            for idx, s in enumerate(line.stops):
                arr = t
                dep = arr + dwell
                stops.append((s, arr, dep))
                if idx < len(line.run_times):
                    t = dep + line.run_times[idx]
            trips.append(Trip(f"{line_id}-{n:03d}", line_id, tuple(stops)))
            n += 1
            dep0 += h
    return Timetable(tuple(trips))
