"""Cubic RBF surrogate and the CORS response-surface optimizer.

The search runs in the unit cube; bounds are applied only when the
objective is called. Each refinement step minimizes the surrogate subject
to a minimum distance from all evaluated points. The distance requirement
cycles from a large fraction of the cube diagonal (global search) down to
almost zero (local search).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import qmc

__all__ = ["CubicRBF", "TraceEntry", "CorsResult", "latin_hypercube", "cors_optimize", "DISTANCE_CYCLE"]

# fractions of the unit-cube diagonal, global to local
DISTANCE_CYCLE = (0.2, 0.1, 0.05, 0.02, 0.005, 0.0)
MIN_SEPARATION = 1e-4
SIGMA_MAX = 0.2
SIGMA_MIN = 0.2 / 64


class CubicRBF:
    """Interpolant ``s(x) = sum_i w_i |x - x_i|^3 + c_0 + c . x``."""

    def __init__(self, dim: int):
        self.dim = dim
        self.X = np.empty((0, dim))
        self.fX = np.empty(0)
        self.weights = np.empty(0)
        self.tail = np.zeros(dim + 1)

    @property
    def npts(self) -> int:
        return len(self.fX)

    def fit(self, X: np.ndarray, fX: np.ndarray) -> "CubicRBF":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        fX = np.asarray(fX, dtype=float).ravel()
        n, d = X.shape
        if n < d + 1:
            raise ValueError(f"need at least {d + 1} points to fit a linear tail")
        phi = cdist(X, X) ** 3
        P = np.hstack([np.ones((n, 1)), X])
        A = np.block([[phi, P], [P.T, np.zeros((d + 1, d + 1))]])
        rhs = np.concatenate([fX, np.zeros(d + 1)])
        with warnings.catch_warnings():
            # singularity is detected below and handled by the caller
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(A, check_finite=True)
        if np.any(np.abs(np.diag(lu[0])) < 1e-13 * max(1.0, np.abs(A).max())):
            raise np.linalg.LinAlgError("singular RBF system")
        sol = scipy.linalg.lu_solve(lu, rhs)
        # iterative refinement keeps the interpolation residual near machine precision
        for _ in range(3):
            sol += scipy.linalg.lu_solve(lu, rhs - A @ sol)
        self.X, self.fX = X, fX
        self.weights, self.tail = sol[:n], sol[n:]
        return self

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        r = cdist(x, self.X)
        return (r ** 3) @ self.weights + self.tail[0] + x @ self.tail[1:]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        diff = x - self.X
        r = np.linalg.norm(diff, axis=1)
        return 3.0 * (self.weights * r) @ diff + self.tail[1:]


def latin_hypercube(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return qmc.LatinHypercube(d=dim, seed=rng).random(n)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    x: tuple[float, ...]
    value: float
    best: float
    phase: str
    radius: float


@dataclass
class CorsResult:
    x: np.ndarray
    fun: float
    trace: list[TraceEntry] = field(default_factory=list)
    surrogate: CubicRBF | None = None

    @property
    def nfev(self) -> int:
        return len(self.trace)


def _fit_with_fallback(model: CubicRBF, X: np.ndarray, fX: np.ndarray, rng: np.random.Generator) -> None:
    try:
        model.fit(X, fX)
        return
    except np.linalg.LinAlgError:
        pass
    # nudge coincident points apart and refit
    Xp = X.copy()
    for attempt in range(5):
        dist = cdist(Xp, Xp) + np.eye(len(Xp))
        dup = np.unique(np.nonzero(dist < MIN_SEPARATION)[0])
        if len(dup) == 0:
            dup = np.arange(len(Xp))
        Xp[dup] += rng.normal(scale=MIN_SEPARATION * 10 ** attempt, size=(len(dup), Xp.shape[1]))
        try:
            model.fit(Xp, fX)
            return
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("could not repair singular RBF system")


def _reflect(u: np.ndarray) -> np.ndarray:
    # mirror steps at the faces; clipping would pile candidates onto the boundary
    u = np.abs(u)
    u = np.where(u > 1.0, 2.0 - u, u)
    return np.clip(u, 0.0, 1.0)


def _next_point(model: CubicRBF, X: np.ndarray, radius: float, best: np.ndarray, sigma: float,
                rng: np.random.Generator, n_candidates: int) -> np.ndarray:
    """Surrogate minimizer among points at least ``radius`` from every evaluated point.

    Candidates mix uniform samples with Gaussian steps of scale ``sigma``
    around the incumbent. The best candidate is polished with SLSQP inside a
    box of half-width ``2 * sigma`` around the incumbent.
    """
    dim = X.shape[1]
    cands = np.vstack([
        rng.random((n_candidates, dim)),
        _reflect(best + rng.normal(scale=sigma, size=(n_candidates, dim))),
    ])
    floor = max(radius, MIN_SEPARATION)
    dmin = cdist(cands, X).min(axis=1)
    feasible = dmin >= floor
    if not feasible.any():
        return cands[np.argmax(dmin)]
    vals = model(cands[feasible])
    start = cands[feasible][np.argmin(vals)]

    lo = np.clip(np.minimum(best, start) - 2 * sigma, 0.0, 1.0)
    hi = np.clip(np.maximum(best, start) + 2 * sigma, 0.0, 1.0)
    cons = {
        "type": "ineq",
        "fun": lambda x: np.sum((X - x) ** 2, axis=1) - floor ** 2,
        "jac": lambda x: -2.0 * (X - x),
    }
    with warnings.catch_warnings():
        # SLSQP may step marginally outside the box; the result is clipped below
        warnings.filterwarnings("ignore", message="Values in x were outside bounds")
        res = minimize(lambda x: float(model(x)[0]), start, jac=model.gradient, method="SLSQP",
                       bounds=list(zip(lo, hi)), constraints=[cons], options={"maxiter": 200, "ftol": 1e-12})
    x = np.clip(res.x, lo, hi)
    if cdist(x[None, :], X).min() >= floor * (1 - 1e-6) and model(x)[0] <= model(start)[0]:
        return x
    return start


def cors_optimize(fun: Callable[[np.ndarray], float], bounds: Sequence[tuple[float, float]], budget: int,
                  seed: int = 0, n_initial: int | None = None, cycle: Sequence[float] = DISTANCE_CYCLE,
                  n_candidates: int = 1000, log_transform: bool = False,
                  callback: Callable[[TraceEntry], None] | None = None) -> CorsResult:
    """Minimize an expensive black-box function over a box.

    Parameters
    ----------
    fun : callable
        Objective taking a point in the original bounds.
    bounds : sequence of (low, high)
        Finite box with ``low < high`` per dimension.
    budget : int
        Total number of ``fun`` evaluations, including the initial design.
    seed : int
        Seeds the Latin hypercube and candidate generation.
    n_initial : int, optional
        Initial design size, default ``2 * (dim + 1)``.
    log_transform : bool
        Fit the surrogate to ``log1p(f)`` instead of ``f``. Needs ``f >= 0``;
        suited to objectives spanning several orders of magnitude.

    Returns
    -------
    CorsResult
        Incumbent point and value, the full evaluation trace and the last
        fitted surrogate (in unit-cube coordinates, on the transformed
        scale when ``log_transform`` is set).
    """
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or not np.all(np.isfinite(b)) or not np.all(b[:, 0] < b[:, 1]):
        raise ValueError("bounds must be finite (low, high) pairs with low < high")
    dim = len(b)
    n_initial = 2 * (dim + 1) if n_initial is None else n_initial
    if budget < n_initial:
        raise ValueError(f"budget {budget} smaller than initial design size {n_initial}")
    lo, span = b[:, 0], b[:, 1] - b[:, 0]
    diag = np.sqrt(dim)
    rng = np.random.default_rng(seed)

    X: list[np.ndarray] = []
    fX: list[float] = []
    trace: list[TraceEntry] = []

    def evaluate(u: np.ndarray, phase: str, radius: float) -> None:
        x = lo + u * span
        val = float(fun(x))
        if log_transform and not val >= 0:
            raise ValueError(f"log_transform needs non-negative values, got {val}")
        X.append(u)
        fX.append(val)
        best = min(fX)
        entry = TraceEntry(len(trace), tuple(x.tolist()), val, best, phase, radius)
        trace.append(entry)
        if callback is not None:
            callback(entry)

    for u in latin_hypercube(n_initial, dim, rng):
        evaluate(u, "design", 0.0)

    def targets() -> np.ndarray:
        fa = np.array(fX)
        return np.log1p(fa) if log_transform else fa

    model = CubicRBF(dim)
    step = 0
    # step size around the incumbent: halved after repeated failures, doubled after successes
    sigma, fails, wins = SIGMA_MAX, 0, 0
    fail_tol = max(dim, 5)
    while len(fX) < budget:
        Xa, fa = np.array(X), targets()
        _fit_with_fallback(model, Xa, fa, rng)
        radius = cycle[step % len(cycle)] * diag
        before = min(fX)
        u = _next_point(model, Xa, radius, Xa[int(np.argmin(fa))], sigma, rng, n_candidates)
        evaluate(u, "global" if radius > 0.05 * diag else "local", radius)
        step += 1
        if fX[-1] < before - 1e-3 * abs(before):
            wins, fails = wins + 1, 0
        else:
            wins, fails = 0, fails + 1
        if fails >= fail_tol:
            sigma, fails = max(sigma / 2, SIGMA_MIN), 0
        elif wins >= 3:
            sigma, wins = min(sigma * 2, SIGMA_MAX), 0

    Xa, fa = np.array(X), np.array(fX)
    if len(fa) >= dim + 1:
        _fit_with_fallback(model, Xa, targets(), rng)
    i = int(np.argmin(fa))
    return CorsResult(lo + Xa[i] * span, float(fa[i]), trace, model if model.npts else None)
