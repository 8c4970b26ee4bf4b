from __future__ import annotations

import math

import numpy as np
import pytest

from transitcal.network import Line, Network, Station, Timetable, Trip, make_timetable
from transitcal.simulator import TapIn


def linear_network(n: int = 3, run: float = 120.0, gate: float = 150.0, spacing: float = 1000.0,
                   both_ways: bool = False) -> Network:
    """Stations S0..S{n-1} on one straight line ``L`` (plus ``L_r`` when ``both_ways``)."""
    ids = [f"S{i}" for i in range(n)]
    lines = {"L": Line("L", tuple(ids), (run,) * (n - 1))}
    if both_ways:
        lines["L_r"] = Line("L_r", tuple(reversed(ids)), (run,) * (n - 1))
    stations = {s: Station(s, s, i * spacing, 0.0, {"*": gate}) for i, s in enumerate(ids)}
    return Network(stations, lines)


def two_line_network() -> Network:
    """Two parallel lines between A and D: ``P`` via B and ``Q`` via C."""
    stations = {
        "A": Station("A", "A", 0, 0, {"*": 90.0}),
        "B": Station("B", "B", 1000, 500, {"*": 90.0}),
        "C": Station("C", "C", 1000, -500, {"*": 90.0}),
        "D": Station("D", "D", 2000, 0, {"*": 90.0}),
    }
    lines = {"P": Line("P", ("A", "B", "D"), (100.0, 100.0)), "Q": Line("Q", ("A", "C", "D"), (90.0, 130.0))}
    return Network(stations, lines)


def single_trip_timetable(network: Network, line_id: str, first_arrival: float, dwell: float = 30.0,
                          train_id: str = "T1") -> Trip:
    line = network.lines[line_id]
    stops = []
    t = first_arrival
    for i, s in enumerate(line.stops):
        stops.append((s, t, t + dwell))
        if i < len(line.run_times):
            t = t + dwell + line.run_times[i]
    return Trip(train_id, line_id, tuple(stops))


def random_scenario(rng: np.random.Generator, capacity: float | None = None, max_passengers: int = 40):
    """Random small network with a few two-way lines, a timetable and tap-ins."""
    n_st = int(rng.integers(3, 7))
    ids = [f"S{i}" for i in range(n_st)]
    coords = {s: (float(rng.uniform(0, 5000)), float(rng.uniform(0, 5000))) for s in ids}
    lines = {}
    n_lines = int(rng.integers(1, 4))
    for k in range(n_lines):
        m = int(rng.integers(2, n_st + 1))
        stops = [ids[i] for i in rng.permutation(n_st)[:m]]
        runs = tuple(float(rng.integers(60, 300)) for _ in range(m - 1))
        lines[f"L{k}u"] = Line(f"L{k}u", tuple(stops), runs)
        lines[f"L{k}d"] = Line(f"L{k}d", tuple(reversed(stops)), tuple(reversed(runs)))
    stations = {}
    for s in ids:
        serving = [lid for lid, ln in lines.items() if s in ln.stops]
        gate = {lid: float(rng.integers(0, 300)) for lid in serving}
        transfers = {}
        for i, a in enumerate(serving):
            for b in serving[i + 1:]:
                transfers[(a, b)] = float(rng.integers(0, 400))
        stations[s] = Station(s, s, *coords[s], gate, transfers)
    network = Network(stations, lines)
    first = {lid: 3600.0 + float(rng.integers(0, 300)) for lid in lines}
    headways = {lid: float(rng.integers(120, 600)) for lid in lines}
    timetable = make_timetable(network, first, 3600.0 + 3000.0, headways, dwell=float(rng.integers(0, 60)))
    served = sorted({(o, d) for ln in lines.values() for i, o in enumerate(ln.stops) for d in ln.stops[i + 1:]})
    n_pax = int(rng.integers(0, max_passengers + 1))
    demand = []
    for i in range(n_pax):
        o, d = served[int(rng.integers(len(served)))]
        demand.append(TapIn(f"P{i:03d}", o, d, float(rng.integers(3600, 3600 + 2400))))
    if capacity is None:
        capacity = math.inf if rng.random() < 0.2 else float(rng.integers(1, 6))
    return network, timetable, demand, capacity


@pytest.fixture
def line3():
    return linear_network(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one (criterion, verdict, detail) row per acceptance criterion, printed after the run
ACCEPTANCE: list[tuple[int, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {verdict}  {detail}")
