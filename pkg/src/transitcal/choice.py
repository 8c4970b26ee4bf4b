"""C-logit path choice probabilities, sampling and benchmark rules."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Sequence, Union

import numpy as np

from .network import ChoiceSet

__all__ = [
    "ATTRIBUTES",
    "ChoiceParams",
    "ShortestPathRule",
    "PathProbabilities",
    "NonFiniteUtilityError",
    "TRUE_PARAMS",
    "choice_probabilities",
    "path_probabilities",
    "sample_path",
    "index_from_uniform",
    "benchmark_params",
    "load_params",
    "save_params",
]

ATTRIBUTES = ("in_vehicle_time", "relative_walk_time", "n_transfers")
PARAM_NAMES = ATTRIBUTES + ("commonality",)


class NonFiniteUtilityError(ValueError):
    pass


@dataclass(frozen=True)
class ChoiceParams:
    """Coefficients on the path attributes plus the commonality coefficient."""

    beta_x: tuple[float, float, float]
    beta_f: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta_x", tuple(float(b) for b in self.beta_x))
        object.__setattr__(self, "beta_f", float(self.beta_f))
        if len(self.beta_x) != len(ATTRIBUTES):
            raise ValueError(f"beta_x must have {len(ATTRIBUTES)} entries")

    def as_array(self) -> np.ndarray:
        return np.array(self.beta_x + (self.beta_f,))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ChoiceParams":
        values = [float(v) for v in values]
        if len(values) != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} values")
        return cls(tuple(values[:3]), values[3])

    def to_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, self.as_array().tolist()))

    @classmethod
    def from_dict(cls, data: dict) -> "ChoiceParams":
        return cls.from_array([data[name] for name in PARAM_NAMES])


# Hypothetical "true" behaviour used to generate synthetic AFC data.
TRUE_PARAMS = ChoiceParams((-0.147, -1.271, -0.573), -3.679)


class ShortestPathRule:
    """Deterministic assignment to the minimum in-vehicle-time path."""

    def __repr__(self) -> str:
        return "ShortestPathRule()"

    def __eq__(self, other) -> bool:
        return isinstance(other, ShortestPathRule)

    def __hash__(self) -> int:
        return hash(ShortestPathRule)


ChoiceModel = Union[ChoiceParams, ShortestPathRule]


@dataclass(frozen=True)
class PathProbabilities:
    od: tuple[str, str]
    probs: np.ndarray

    def __len__(self) -> int:
        return len(self.probs)


def choice_probabilities(choice_set: ChoiceSet, params: ChoiceParams) -> PathProbabilities:
    """Logit probabilities with utility ``beta_x . X_i + beta_f * F_i``.

    The largest utility is subtracted before exponentiating.
    """
    x = choice_set.attribute_matrix()
    f = choice_set.commonality_vector()
    beta = np.asarray(params.beta_x)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(f)) and np.all(np.isfinite(beta))
            and math.isfinite(params.beta_f)):
        raise NonFiniteUtilityError(f"non-finite attribute or coefficient for {choice_set.od}")
    v = x @ beta + params.beta_f * f
    w = np.exp(v - v.max())
    return PathProbabilities(choice_set.od, w / w.sum())


def path_probabilities(choice_set: ChoiceSet, model: ChoiceModel) -> PathProbabilities:
    if isinstance(model, ShortestPathRule):
        probs = np.zeros(len(choice_set))
        probs[choice_set.shortest_index()] = 1.0
        return PathProbabilities(choice_set.od, probs)
    return choice_probabilities(choice_set, model)


def index_from_uniform(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF lookup; zero-probability paths are never returned."""
    cum = np.cumsum(probs)
    i = int(np.searchsorted(cum / cum[-1], u, side="right"))
    n = len(probs)
    if i >= n:
        i = n - 1
        while probs[i] == 0:
            i -= 1
    return i


def sample_path(probabilities: PathProbabilities | np.ndarray, rng: np.random.Generator) -> int:
    probs = probabilities.probs if isinstance(probabilities, PathProbabilities) else np.asarray(probabilities)
    return index_from_uniform(probs, rng.random())


def benchmark_params(kind: str) -> ChoiceModel:
    """``"uniform"`` gives all-zero coefficients, ``"shortest_path"`` the argmin rule."""
    if kind == "uniform":
        return ChoiceParams((0.0, 0.0, 0.0), 0.0)
    if kind in ("shortest_path", "shortest"):
        return ShortestPathRule()
    raise ValueError(f"unknown benchmark {kind!r}")


def save_params(params: ChoiceParams, path: str | FsPath) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2)
        fh.write("\n")


def load_params(path: str | FsPath) -> ChoiceParams:
    with open(path) as fh:
        return ChoiceParams.from_dict(json.load(fh))
