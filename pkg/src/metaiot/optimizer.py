"""Structure optimisation: discernibility objective and RBF surrogate search."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import channel as ch
from . import circuit
from .errors import ArgumentError, ConditioningError, DomainError


@dataclass(frozen=True)
class DesignSpace:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    sampled: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "sampled", tuple(tuple(float(v) for v in ax) for ax in self.sampled))
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ArgumentError("bounds must have equal, nonzero length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ArgumentError("each lower bound must be below its upper bound")
        for ax, lo, hi in zip(self.sampled, self.lower, self.upper):
            if any(v < lo or v > hi for v in ax):
                raise ArgumentError("sampled structures must lie inside the bounds")

    @classmethod
    def uniform(cls, lo: float, hi: float, dim: int, sampled=()) -> "DesignSpace":
        return cls((lo,) * dim, (hi,) * dim, tuple(tuple(sampled) for _ in range(dim)) if sampled else ())

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def width(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.width))

    def contains(self, d) -> bool:
        d = np.asarray(d, dtype=float)
        return bool(np.all(d >= self.lower) and np.all(d <= self.upper))

    def check(self, d) -> None:
        if not self.contains(d):
            raise DomainError(f"structure {tuple(np.asarray(d))} outside design bounds")

    def grid_points(self) -> np.ndarray:
        if not self.sampled:
            return np.empty((0, self.dim))
        return np.array(list(itertools.product(*self.sampled)))


# Gap widths 0.5..2 mm, sampled every 0.5 mm in each dimension.
DEFAULT_SPACE = DesignSpace.uniform(0.5e-3, 2.0e-3, 2, (0.5e-3, 1.0e-3, 1.5e-3, 2.0e-3))

# normal, temperature anomaly, humidity anomaly as (humidity %RH, temperature C)
DEFAULT_CONDITIONS = ((55.0, 20.0), (55.0, 50.0), (75.0, 20.0))


def pair_error_probability(p_l, p_lp, sigma: float) -> float:
    """Maximum-likelihood confusion probability of two Gaussian-blurred feature vectors."""
    if not sigma > 0:
        raise ArgumentError("noise standard deviation must be positive")
    dist = float(np.linalg.norm(np.asarray(p_l, dtype=float) - np.asarray(p_lp, dtype=float)))
    return 0.5 - 0.5 * math.erf(dist / (2 * math.sqrt(2 * sigma ** 2)))


class Discernibility:
    """Mean pairwise feature distance across conditions, arrays, heights and distances.

    The channel part of every feature vector does not depend on the structure,
    so it is computed once; each call only re-evaluates reflection coefficients.
    """

    def __init__(self, conditions, geom: ch.SystemGeometry, grid: ch.FrequencyGrid,
                 params: circuit.SensorCircuitParams | None = None,
                 materials=circuit.DEFAULT_MATERIALS, table: circuit.CorrectionTable | None = None,
                 n_dh: int = 8, patterns=None, space: DesignSpace | None = None):
        self.conditions = [tuple(c) for c in conditions]
        if len(self.conditions) < 2:
            raise ArgumentError("need at least two conditions")
        self.geom, self.grid = geom, grid
        self.params = circuit.default_params() if params is None else params
        self.materials, self.table, self.space = materials, table, space
        f = grid.array
        offsets = ch.height_displacements(geom, n_dh)
        self._factors = np.array([[[ch.channel_factor(i, f, geom.array_center_heights[i] + dh, D,
                                                      geom, patterns)
                                    for D in geom.measuring_distances]
                                   for dh in offsets]
                                  for i in range(geom.n_rx)])

    def features(self, d) -> np.ndarray:
        """dB features shaped ``(n_conditions, n_rx, n_dh, n_distances, n_freq)``."""
        f = self.grid.array
        out = []
        for idx, c in enumerate(self.conditions):
            gamma = circuit.reflection_coefficient(f, d, c, self.params, self.materials,
                                                   self.table, idx)
            out.append(ch.to_db(gamma * self._factors)[0])
        return np.array(out)

    def __call__(self, d) -> float:
        if self.space is not None:
            self.space.check(d)
        p = self.features(d)
        pairs = list(itertools.combinations(range(len(p)), 2))
        dists = [np.linalg.norm(p[a] - p[b], axis=-1).mean() for a, b in pairs]
        return float(np.mean(dists))


def discernibility(d, conditions, geom, grid, **kwargs) -> float:
    return Discernibility(conditions, geom, grid, **kwargs)(d)


class CubicRBF:
    """Cubic radial basis interpolant with a linear polynomial tail."""

    def __init__(self, nodes, values):
        x = np.atleast_2d(np.asarray(nodes, dtype=float))
        y = np.asarray(values, dtype=float).ravel()
        n, dim = x.shape
        if len(y) != n:
            raise ArgumentError("one value per node is required")
        if n < dim + 1:
            raise ArgumentError(f"need at least {dim + 1} nodes for a linear tail in {dim}-D")
        r = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        if np.any(r[np.triu_indices(n, 1)] <= 1e-14 * max(1.0, r.max())):
            raise ConditioningError("duplicate interpolation nodes")
        poly = np.hstack([np.ones((n, 1)), x])
        system = np.zeros((n + dim + 1, n + dim + 1))
        system[:n, :n] = r ** 3
        system[:n, n:] = poly
        system[n:, :n] = poly.T
        rhs = np.concatenate([y, np.zeros(dim + 1)])
        try:
            coef = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("RBF system is singular") from exc
        self.nodes, self.values = x, y
        self.weights, self.tail = coef[:n], coef[n:]

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(p[:, None, :] - self.nodes[None, :, :], axis=-1)
        return r ** 3 @ self.weights + self.tail[0] + p @ self.tail[1:]


def rbf_fit(samples) -> CubicRBF:
    """Fit a surrogate to ``[(d, value), ...]``."""
    nodes, values = zip(*samples)
    return CubicRBF(np.array(nodes, dtype=float), np.array(values, dtype=float))


@dataclass
class SearchResult:
    best: np.ndarray
    best_value: float
    trace: list[tuple[np.ndarray, float]] = field(default_factory=list)
    truncated: bool = False
    stop_reason: str = ""

    def write_trace(self, path) -> None:
        dim = len(self.best)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter"] + [f"d{k + 1}" for k in range(dim)] + ["psi"])
            for it, (x, v) in enumerate(self.trace):
                w.writerow([it] + [repr(float(c)) for c in x] + [repr(v)])


def surrogate_optimize(objective: Callable[[np.ndarray], float], space: DesignSpace,
                       upsilon_min: float | None = None, seed: int = 0, budget: int = 200,
                       n_initial: int | None = None, initial_points: Sequence = (),
                       n_uniform: int = 100, n_local: int = 100, local_sigma: float = 0.05,
                       ) -> SearchResult:
    """Maximise ``objective`` over the box with an RBF surrogate.

    Each round fits the surrogate to all evaluated points, draws ``n_uniform``
    uniform candidates plus ``n_local`` Gaussian perturbations of the
    incumbent, and evaluates the candidate with the best surrogate value among
    those at least ``upsilon_min`` away from every evaluated point.  The
    search stops when no candidate is that far away (crowding) or when the
    budget is spent (``truncated``).
    """
    dim = space.dim
    lo, width = np.asarray(space.lower), space.width
    upsilon = 0.01 * space.diagonal if upsilon_min is None else upsilon_min
    n_initial = 2 * (dim + 1) if n_initial is None else n_initial
    initial = [np.asarray(p, dtype=float) for p in initial_points]
    if budget < len(initial) + n_initial:
        raise ArgumentError("budget smaller than the initial design")
    rng = np.random.default_rng(seed)
    xs: list[np.ndarray] = []
    fs: list[float] = []

    def evaluate(x):
        space.check(x)
        v = float(objective(x))
        if not math.isfinite(v):
            raise ArgumentError(f"objective returned {v} at {x}")
        xs.append(x)
        fs.append(v)

    for x in initial:
        evaluate(x)
    for u in rng.random((n_initial, dim)):
        evaluate(lo + u * width)

    stop, truncated = "", False
    while True:
        if len(xs) >= budget:
            stop, truncated = "budget", True
            break
        unit = (np.array(xs) - lo) / width
        surrogate = CubicRBF(unit, fs)
        best = unit[int(np.argmax(fs))]
        cand = np.vstack([rng.random((n_uniform, dim)),
                          np.clip(best + local_sigma * rng.standard_normal((n_local, dim)), 0, 1)])
        phys = lo + cand * width
        gap = np.min(np.linalg.norm(phys[:, None, :] - np.array(xs)[None, :, :], axis=-1), axis=1)
        open_ = gap >= upsilon
        if not open_.any():
            stop = "crowded"
            break
        scores = np.where(open_, surrogate(cand), -np.inf)
        evaluate(phys[int(np.argmax(scores))])

    k = int(np.argmax(fs))
    return SearchResult(xs[k].copy(), fs[k], list(zip(xs, fs)), truncated, stop)
