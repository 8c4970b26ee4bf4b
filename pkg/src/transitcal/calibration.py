"""Path-choice calibration against observed exit flows and journey times.

The objective is the squared error of OD exit flows plus ``eta`` times the
KL divergence between model and observed journey-time histograms, summed
over (origin, destination, interval) cells that have at least ``qkl``
observed exits. Exit flows are keyed by the tap-out interval, journey-time
histograms by the tap-in interval.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .choice import ChoiceParams
from .network import ChoiceSet, Network, Timetable
from .simulator import SimConfig, TapIn, run_simulation
from .surrogate import CorsResult, cors_optimize

__all__ = [
    "ExitFlowTensor",
    "JourneyTimeDistribution",
    "ObservedData",
    "ObjectiveValue",
    "CalibrationConfig",
    "CalibrationProblem",
    "CalibrationReport",
    "BinMismatchError",
    "InsufficientDataWarning",
    "exit_flows",
    "journey_time_distributions",
    "kl_divergence",
    "smooth",
    "observe",
    "wt_star",
    "score",
    "objective",
    "calibrate",
]

FlowKey = tuple[str, str, int]


class BinMismatchError(ValueError):
    pass


class InsufficientDataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExitFlowTensor:
    counts: Mapping[FlowKey, int]
    tau: float
    t0: float

    def __getitem__(self, key: FlowKey) -> int:
        return self.counts.get(key, 0)

    def total(self) -> int:
        return sum(self.counts.values())


def _interval(t: float, tau: float, t0: float) -> int:
    return int(math.floor((t - t0) / tau))


def exit_flows(records: Iterable, tau: float = 900.0, t0: float = 17 * 3600.0) -> ExitFlowTensor:
    """Count exits per (origin, destination, tap-out interval); records without tap-out are skipped."""
    counts: Counter = Counter()
    for r in records:
        if r.tap_out is not None:
            counts[(r.origin, r.destination, _interval(r.tap_out, tau, t0))] += 1
    return ExitFlowTensor(dict(counts), tau, t0)


@dataclass(frozen=True)
class JourneyTimeDistribution:
    key: FlowKey
    edges: np.ndarray
    mass: np.ndarray
    n: int


def journey_time_distributions(records: Iterable, tau: float = 900.0, t0: float = 17 * 3600.0,
                               bin_width: float = 60.0, max_time: float = 7200.0
                               ) -> dict[FlowKey, JourneyTimeDistribution]:
    """Journey-time histograms per (origin, destination, tap-in interval).

    Journey times beyond ``max_time`` fall into the last bin.
    """
    edges = np.arange(0.0, max_time + bin_width / 2, bin_width)
    nbins = len(edges) - 1
    groups: dict[FlowKey, list[float]] = {}
    for r in records:
        if r.tap_out is not None:
            key = (r.origin, r.destination, _interval(r.tap_in, tau, t0))
            groups.setdefault(key, []).append(r.tap_out - r.tap_in)
    out = {}
    for key, jt in groups.items():
        idx = np.clip((np.asarray(jt) // bin_width).astype(int), 0, nbins - 1)
        counts = np.bincount(idx, minlength=nbins)
        out[key] = JourneyTimeDistribution(key, edges, counts / counts.sum(), len(jt))
    return out


def smooth(q: JourneyTimeDistribution, p: JourneyTimeDistribution, eps: float = 1e-6) -> JourneyTimeDistribution:
    """Add ``eps`` to every bin of ``q`` if ``p`` has mass where ``q`` has none."""
    if np.any((p.mass > 0) & (q.mass == 0)):
        m = q.mass + eps
        return replace(q, mass=m / m.sum())
    return q


def kl_divergence(p: JourneyTimeDistribution, q: JourneyTimeDistribution) -> float:
    """Discrete KL divergence ``sum_x p(x) log(p(x) / q(x))``; empty ``p`` bins contribute 0."""
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise BinMismatchError("histograms have different bin edges")
    support = p.mass > 0
    if np.any(q.mass[support] == 0):
        raise ValueError("q has zero mass where p has mass; smooth q first")
    d = float(np.sum(p.mass[support] * np.log(p.mass[support] / q.mass[support])))
    return max(d, 0.0)


@dataclass
class CalibrationConfig:
    """Calibration knobs. Times in seconds; ``window`` is the estimation period."""

    eta: float = 600.0
    qkl: int = 50
    tau: float = 900.0
    t0: float = 17 * 3600.0
    window: tuple[float, float] | None = (18 * 3600.0, 19 * 3600.0)
    bounds: Sequence[tuple[float, float]] = ((-10.0, 0.0),) * 4
    budget: int = 100
    seed: int = 0
    bin_width: float = 60.0
    max_journey: float = 7200.0
    eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.qkl < 1:
            raise ValueError("qkl must be at least 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.window is not None and not self.window[0] < self.window[1]:
            raise ValueError("window start must precede its end")
        self.bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        if len(self.bounds) != 4 or any(not (math.isfinite(a) and math.isfinite(b) and a < b)
                                        for a, b in self.bounds):
            raise ValueError("bounds must be 4 finite (low, high) pairs with low < high")
        n_initial = 2 * (len(self.bounds) + 1)
        if self.budget < n_initial:
            raise ValueError(f"budget {self.budget} below the initial design size {n_initial}")

    def in_window(self, t: int) -> bool:
        if self.window is None:
            return True
        start = self.t0 + t * self.tau
        return start >= self.window[0] and start + self.tau <= self.window[1]

    def to_dict(self) -> dict:
        return {"eta": self.eta, "qkl": self.qkl, "tau": self.tau, "t0": self.t0,
                "window": list(self.window) if self.window else None,
                "bounds": [list(b) for b in self.bounds], "budget": self.budget, "seed": self.seed,
                "bin_width": self.bin_width, "max_journey": self.max_journey, "eps": self.eps}

    @classmethod
    def from_dict(cls, data: Mapping) -> "CalibrationConfig":
        d = dict(data)
        if d.get("window") is not None:
            d["window"] = tuple(d["window"])
        if "bounds" in d:
            d["bounds"] = tuple(tuple(b) for b in d["bounds"])
        return cls(**d)


@dataclass
class ObservedData:
    flows: ExitFlowTensor
    distributions: dict[FlowKey, JourneyTimeDistribution]


def observe(records: Sequence, config: CalibrationConfig) -> ObservedData:
    return ObservedData(exit_flows(records, config.tau, config.t0),
                        journey_time_distributions(records, config.tau, config.t0, config.bin_width,
                                                   config.max_journey))


def wt_star(observed: ObservedData, config: CalibrationConfig) -> list[FlowKey]:
    """Cells with at least ``qkl`` observed exits and ``qkl`` observed journey times."""
    out = []
    for key, count in observed.flows.counts.items():
        dist = observed.distributions.get(key)
        if count >= config.qkl and config.in_window(key[2]) and dist is not None and dist.n >= config.qkl:
            out.append(key)
    return sorted(out)


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    flow: float
    kl: float
    kl_terms: Mapping[FlowKey, float] = field(default_factory=dict)


def score(model_records: Sequence, observed: ObservedData, config: CalibrationConfig) -> ObjectiveValue:
    """Objective value of a finished model run against observed data."""
    model_flows = exit_flows(model_records, config.tau, config.t0)
    keys = set(observed.flows.counts) | set(model_flows.counts)
    flow = float(sum((model_flows[k] - observed.flows[k]) ** 2 for k in keys if config.in_window(k[2])))

    cells = wt_star(observed, config)
    kl_terms: dict[FlowKey, float] = {}
    if cells:
        model_dists = journey_time_distributions(model_records, config.tau, config.t0, config.bin_width,
                                                 config.max_journey)
        for key in cells:
            obs = observed.distributions[key]
            mod = model_dists.get(key)
            if mod is None:
                # no simulated exits for this cell: charge a point mass on the least likely bin
                q = obs.mass + config.eps
                q = q / q.sum()
                kl_terms[key] = float(-np.log(q.min()))
            else:
                kl_terms[key] = kl_divergence(mod, smooth(obs, mod, config.eps))
    kl = float(sum(kl_terms.values()))
    return ObjectiveValue(flow + config.eta * kl, flow, kl, kl_terms)


@dataclass
class CalibrationProblem:
    """Everything the simulator needs apart from the choice parameters."""

    network: Network
    timetable: Timetable
    choice_sets: Mapping[tuple[str, str], ChoiceSet]
    demand: Sequence[TapIn]
    sim_config: SimConfig


def objective(params: ChoiceParams, observed: ObservedData, problem: CalibrationProblem,
              config: CalibrationConfig) -> ObjectiveValue:
    out = run_simulation(problem.network, problem.timetable, problem.choice_sets, params, problem.demand,
                         problem.sim_config)
    return score(out.passengers, observed, config)


@dataclass
class CalibrationReport:
    best: ChoiceParams
    value: ObjectiveValue
    trace: list[dict]
    wt_size: int
    result: CorsResult


def calibrate(afc: Sequence[TapIn], problem: CalibrationProblem, config: CalibrationConfig,
              progress=None) -> CalibrationReport:
    """Estimate choice parameters from AFC tap-in/tap-out records.

    The simulator seed in ``problem.sim_config`` is held fixed for every
    evaluation so the objective is a deterministic function of the
    parameters.
    """
    observed = observe(afc, config)
    n_cells = len(wt_star(observed, config))
    if n_cells == 0 and config.eta > 0:
        warnings.warn("no (o, d, t) cell reaches qkl observed exits; KL term is 0", InsufficientDataWarning,
                      stacklevel=2)
    values: list[ObjectiveValue] = []
    trace: list[dict] = []

    def fun(beta: np.ndarray) -> float:
        val = objective(ChoiceParams.from_array(beta), observed, problem, config)
        values.append(val)
        return val.total

    def record(entry) -> None:
        val = values[entry.iteration]
        row = {"iteration": entry.iteration, **ChoiceParams.from_array(entry.x).to_dict(),
               "flow": val.flow, "kl": val.kl, "total": val.total, "best": entry.best, "phase": entry.phase}
        trace.append(row)
        if progress is not None:
            progress(row)

    res = cors_optimize(fun, config.bounds, config.budget, seed=config.seed, log_transform=True,
                        callback=record)
    i = int(np.argmin([v.total for v in values]))
    return CalibrationReport(ChoiceParams.from_array(res.x), values[i], trace, n_cells, res)
