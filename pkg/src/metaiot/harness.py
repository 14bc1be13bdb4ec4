"""Scenario synthesis, detection experiments, ROC curves, sweeps and dataset files."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import channel as ch
from . import circuit
from . import sensing
from .errors import ArgumentError, CompatibilityError, ConfigError, DataError

# Condition index and full-severity endpoint for each anomaly type.
ANOMALY_TYPES = {"humidity": (0, 75.0), "temperature": (1, 50.0)}


@dataclass(frozen=True)
class Anomaly:
    t: int
    k: int  # location, 0-based
    i: int  # array, 0-based
    kind: str = "humidity"
    severity: float = 1.0

    def __post_init__(self):
        if self.kind not in ANOMALY_TYPES:
            raise ConfigError(f"unknown anomaly type {self.kind!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise ConfigError("severity must lie in [0, 1]")


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: ch.SystemGeometry = field(default_factory=ch.SystemGeometry)
    grid: ch.FrequencyGrid = field(default_factory=ch.FrequencyGrid.linspace)
    structure: tuple[float, ...] = circuit.OPTIMAL_STRUCTURE
    normal: tuple[float, ...] = circuit.NORMAL_CONDITION
    horizon: int = 100  # T, number of anomaly-free training steps
    seed: int = 0
    snr_db: float | None = 65.0  # None disables noise
    n_dh: int = 8
    schedule: tuple[Anomaly, ...] = ()

    def __post_init__(self):
        g = self.geometry
        if self.horizon < 1:
            raise ConfigError("training horizon must be positive")
        if self.n_dh < 1:
            raise ConfigError("need at least one beam height")
        for a in self.schedule:
            if a.t <= self.horizon:
                raise ConfigError(f"anomaly at t={a.t} falls inside the training horizon")
            if not (0 <= a.k < g.location_count and 0 <= a.i < g.n_rx):
                raise ConfigError(f"anomaly cell (k={a.k}, i={a.i}) out of range")

    @property
    def n_loc(self) -> int:
        return self.geometry.location_count

    @property
    def n_ar(self) -> int:
        return self.geometry.n_rx

    def distance(self, k: int) -> float:
        d = self.geometry.measuring_distances
        return d[k % len(d)]

    def fingerprint(self) -> str:
        return sensing.fingerprint(self.geometry.to_dict(), list(self.grid.points), self.n_dh,
                                   list(self.structure))

    def to_dict(self) -> dict:
        return {"geometry": self.geometry.to_dict(), "grid": {"points": list(self.grid.points)},
                "structure": list(self.structure), "normal": list(self.normal),
                "horizon": self.horizon, "seed": self.seed, "snr_db": self.snr_db, "n_dh": self.n_dh,
                "schedule": [a.__dict__ for a in self.schedule]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            kw = {}
            if "geometry" in d:
                kw["geometry"] = ch.SystemGeometry.from_dict(d["geometry"])
            if "grid" in d:
                gd = d["grid"]
                kw["grid"] = (ch.FrequencyGrid(tuple(gd["points"])) if "points" in gd else
                              ch.FrequencyGrid.linspace(gd.get("f_lb", 3.5e9), gd.get("f_ub", 4e9),
                                                        gd.get("n", 201)))
            for key in ("structure", "normal"):
                if key in d:
                    kw[key] = tuple(float(v) for v in d[key])
            for key in ("horizon", "seed", "n_dh"):
                if key in d:
                    kw[key] = int(d[key])
            if "snr_db" in d:
                kw["snr_db"] = None if d["snr_db"] is None else float(d["snr_db"])
            if "schedule" in d:
                kw["schedule"] = tuple(Anomaly(**a) for a in d["schedule"])
            return cls(**kw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario config: {exc}") from exc


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def anomalous_condition(normal, kind: str, severity: float) -> tuple[float, ...]:
    idx, end = ANOMALY_TYPES[kind]
    c = list(normal)
    c[idx] = normal[idx] + severity * (end - normal[idx])
    return tuple(c)


class Simulator:
    """Noiseless channel factors are cached; each time step only recomputes reflections."""

    def __init__(self, cfg: ScenarioConfig, params: circuit.SensorCircuitParams | None = None,
                 materials=circuit.DEFAULT_MATERIALS, table=None, patterns=None):
        self.cfg = cfg
        self.params = circuit.default_params() if params is None else params
        self.materials, self.table = materials, table
        g, f = cfg.geometry, cfg.grid.array
        dh = ch.height_displacements(g, cfg.n_dh)
        # factors[i, m, k, f]
        self.factors = np.array([[[ch.channel_factor(i, f, g.array_center_heights[i] + dh[m],
                                                     cfg.distance(k), g, patterns)
                                   for k in range(cfg.n_loc)]
                                  for m in range(cfg.n_dh)]
                                 for i in range(cfg.n_ar)])
        self._gamma_cache: dict = {}

    def gamma(self, c) -> np.ndarray:
        key = tuple(float(v) for v in c)
        if key not in self._gamma_cache:
            self._gamma_cache[key] = circuit.reflection_coefficient(
                self.cfg.grid.array, self.cfg.structure, key, self.params, self.materials, self.table)
        return self._gamma_cache[key]

    def conditions(self, t: int) -> dict:
        """Condition per (k, i) at time ``t`` after applying the schedule."""
        out = {(k, i): tuple(self.cfg.normal) for k in range(self.cfg.n_loc) for i in range(self.cfg.n_ar)}
        for a in self.cfg.schedule:
            if a.t == t:
                out[(a.k, a.i)] = anomalous_condition(out[(a.k, a.i)], a.kind, a.severity)
        return out

    def noiseless(self, t: int) -> np.ndarray:
        cond = self.conditions(t)
        y = np.empty_like(self.factors)
        for (k, i), c in cond.items():
            y[i, :, k] = self.gamma(c) * self.factors[i, :, k]
        return y

    def noise(self, y: np.ndarray, t: int) -> np.ndarray:
        """White complex noise per vector at the configured SNR, one RNG substream per cell."""
        if self.cfg.snr_db is None:
            return np.zeros_like(y)
        n = np.empty_like(y)
        scale = 10 ** (-self.cfg.snr_db / 10)
        for i, m, k in np.ndindex(y.shape[:3]):
            rng = np.random.default_rng([self.cfg.seed, t, k, i, m])
            p = np.mean(np.abs(y[i, m, k]) ** 2) * scale
            n[i, m, k] = np.sqrt(p / 2) * (rng.standard_normal(y.shape[3]) +
                                           1j * rng.standard_normal(y.shape[3]))
        return n

    def measurement(self, t: int) -> sensing.MeasurementSet:
        y = self.noiseless(t)
        p, _ = ch.to_db(y + self.noise(y, t))
        return sensing.MeasurementSet(t, p)


def generate_series(cfg: ScenarioConfig, times=None, simulator: Simulator | None = None):
    """Measurement sets for ``times`` (default ``1..T``)."""
    sim = Simulator(cfg) if simulator is None else simulator
    times = range(1, cfg.horizon + 1) if times is None else times
    return [sim.measurement(t) for t in times]


def default_schedule(cfg: ScenarioConfig, n_trials: int = 50, severity: float = 1.0,
                     cells=None) -> tuple[Anomaly, ...]:
    """Alternate normal and anomalous trials after ``T``, cycling through every cell.

    The upper array (i = 0) receives humidity anomalies and the lower array
    temperature anomalies.
    """
    cells = [(k, i) for k in range(cfg.n_loc) for i in range(cfg.n_ar)] if cells is None else cells
    out = []
    for n in range(n_trials):
        if n % 2 == 1:
            k, i = cells[(n // 2) % len(cells)]
            out.append(Anomaly(cfg.horizon + 1 + n, k, i, "humidity" if i == 0 else "temperature",
                               severity))
    return tuple(out)


@dataclass
class ExperimentSummary:
    false_alarm: float | None
    miss: float | None
    localization: float | None
    n_normal: int
    n_anomalous: int
    mean_injected_score: float | None = None


def run_detection_experiment(cfg: ScenarioConfig, pipeline: sensing.TrainedPipeline,
                             n_trials: int = 50, gamma_threshold: float | None = None,
                             simulator: Simulator | None = None):
    """Run trials at ``T+1..T+n_trials`` and compare reports with the schedule."""
    if pipeline.fingerprint and pipeline.fingerprint != cfg.fingerprint():
        raise CompatibilityError("pipeline was trained for a different geometry or grid")
    sim = Simulator(cfg) if simulator is None else simulator
    truth = {a.t: a for a in cfg.schedule}
    reports, fa, miss, loc, injected = [], 0, 0, 0, []
    n_norm = n_anom = 0
    for t in range(cfg.horizon + 1, cfg.horizon + 1 + n_trials):
        rep = pipeline.infer(sim.measurement(t), gamma_threshold)
        reports.append(rep)
        a = truth.get(t)
        if a is None:
            n_norm += 1
            fa += rep.i_ano
        else:
            n_anom += 1
            miss += 1 - rep.i_ano
            injected.append(rep.tau[a.k, a.i])
            if sensing.locate(rep.tau) == (a.i, a.k):
                loc += 1
    summary = ExperimentSummary(fa / n_norm if n_norm else None, miss / n_anom if n_anom else None,
                                loc / n_anom if n_anom else None, n_norm, n_anom,
                                float(np.mean(injected)) if injected else None)
    return reports, summary


@dataclass
class RocCurve:
    points: list  # (threshold, false_alarm, miss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "false_alarm", "miss"])
            w.writerows(self.points)


def roc(normal_scores, anomalous_scores, thresholds=None) -> RocCurve:
    """False alarm and miss ratios of ``score > threshold`` for ascending thresholds."""
    a = np.asarray(normal_scores, dtype=float)
    b = np.asarray(anomalous_scores, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DataError("ROC needs at least one normal and one anomalous trial")
    if thresholds is None:
        allv = np.unique(np.concatenate([a, b]))
        thresholds = np.concatenate([[allv[0] - 1.0], allv])
    th = np.sort(np.asarray(thresholds, dtype=float))
    return RocCurve([(float(x), float(np.mean(a > x)), float(np.mean(b <= x))) for x in th])


def train_for(cfg: ScenarioConfig, pcfg: sensing.PipelineConfig = sensing.PipelineConfig(),
              simulator: Simulator | None = None) -> sensing.TrainedPipeline:
    series = generate_series(cfg, simulator=simulator)
    return sensing.train_pipeline(series, pcfg, cfg.seed, cfg.fingerprint())


SWEEP_AXES = ("distance", "severity", "snr", "depth")


def sweep(cfg: ScenarioConfig, axis: str, values, pcfg: sensing.PipelineConfig = sensing.PipelineConfig(),
          n_trials: int = 20, path=None) -> list[dict]:
    """One experiment per value; returns rows and optionally writes them as CSV.

    Severity reuses one trained pipeline; the other axes retrain because they
    change the training data or the network.
    """
    if axis not in SWEEP_AXES:
        raise ArgumentError(f"axis must be one of {SWEEP_AXES}")
    rows = []
    shared = None
    base_time = None
    for v in values:
        c, p = cfg, pcfg
        if axis == "distance":
            c = replace(cfg, geometry=replace(cfg.geometry, measuring_distances=(float(v),)))
        elif axis == "snr":
            c = replace(cfg, snr_db=None if v is None else float(v))
        elif axis == "depth":
            p = replace(pcfg, depth=int(v))
        sev = float(v) if axis == "severity" else 1.0
        c = replace(c, schedule=default_schedule(c, n_trials, sev))
        sim = Simulator(c)
        t0 = time.perf_counter()
        if axis == "severity" and shared is not None:
            pipe = shared
        else:
            pipe = train_for(replace(c, schedule=()), p, sim)
            shared = pipe
        train_time = time.perf_counter() - t0
        base_time = train_time if base_time is None else base_time
        reports, s = run_detection_experiment(c, pipe, n_trials, simulator=sim)
        normal = [r.gamma for r in reports if r.t not in {a.t for a in c.schedule}]
        anom = [r.gamma for r in reports if r.t in {a.t for a in c.schedule}]
        rows.append({"axis": axis, "value": v, "false_alarm": s.false_alarm, "miss": s.miss,
                     "error_sum": (s.false_alarm or 0.0) + (s.miss or 0.0),
                     "localization": s.localization, "mean_injected_score": s.mean_injected_score,
                     "score_difference": float(np.mean(anom) - np.mean(normal)) if anom and normal else None,
                     "train_time": train_time, "normalized_train_time": train_time / base_time})
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows


def write_dataset(directory, cfg: ScenarioConfig, series) -> None:
    """``manifest.json`` plus one ``t_<idx>.csv`` per step with 1-based ``i,m,k,f_index``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    series = list(series)
    manifest = {"config": cfg.to_dict(), "times": [ms.t for ms in series],
                "fingerprint": cfg.fingerprint()}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for ms in series:
        with open(d / f"t_{ms.t}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "m", "k", "f_index", "p_db"])
            for (i, m, k, f), v in np.ndenumerate(ms.values):
                w.writerow([i + 1, m + 1, k + 1, f + 1, repr(float(v))])


def read_dataset(directory):
    """Returns ``(ScenarioConfig, [MeasurementSet])``; incomplete files raise DataError."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset manifest in {d}: {exc}") from exc
    cfg = ScenarioConfig.from_dict(manifest["config"])
    shape = (cfg.n_ar, cfg.n_dh, cfg.n_loc, len(cfg.grid))
    series = []
    for t in manifest["times"]:
        vals = np.full(shape, np.nan)
        try:
            with open(d / f"t_{t}.csv", newline="") as fh:
                for row in csv.DictReader(fh):
                    idx = (int(row["i"]) - 1, int(row["m"]) - 1, int(row["k"]) - 1,
                           int(row["f_index"]) - 1)
                    if any(not 0 <= x < n for x, n in zip(idx, shape)):
                        raise DataError(f"index {idx} out of range in t_{t}.csv")
                    vals[idx] = float(row["p_db"])
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read t_{t}.csv: {exc}") from exc
        series.append(sensing.MeasurementSet(int(t), vals))
    return cfg, series
