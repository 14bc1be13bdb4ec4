"""Anomaly detection around the encoder-decoder: features, baselines, scores, localisation.

Indices are 0-based inside the library.  Channel ``g = k * n_ar + i`` holds
array ``i`` at location ``k``; reports are written with 1-based indices.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .errors import ArgumentError, BaselineError, DataError, ShapeError

DEGENERATE_RTOL = 1e-10


@dataclass
class MeasurementSet:
    """dB feature vectors of one time step, indexed ``values[i, m, k, f]``."""

    t: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 4:
            raise DataError("measurement values must be indexed [array, height, location, freq]")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"non-finite or missing feature entries at t={self.t}")

    @property
    def n_ar(self) -> int:
        return self.values.shape[0]

    @property
    def n_dh(self) -> int:
        return self.values.shape[1]

    @property
    def n_loc(self) -> int:
        return self.values.shape[2]

    @property
    def n_f(self) -> int:
        return self.values.shape[3]


def truncated_spectrum(p, l_cut: int) -> np.ndarray:
    """FFT magnitudes of bins ``1..l_cut`` along the last axis (the DC bin is dropped)."""
    p = np.asarray(p, dtype=float)
    if l_cut < 1 or p.shape[-1] < l_cut + 1:
        raise ArgumentError(f"L_cut={l_cut} needs at least {l_cut + 1} frequency points")
    return np.abs(np.fft.fft(p, axis=-1)[..., 1:l_cut + 1])


@dataclass
class NormStats:
    """Per-cell, per-bin min and max of truncated spectra over the training window."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        seen = np.isfinite(self.lo) & np.isfinite(self.hi)
        if self.lo.shape != self.hi.shape or np.any((self.lo > self.hi) & seen):
            raise ArgumentError("NormStats requires lo <= hi with matching shapes")

    @classmethod
    def fit(cls, spectra) -> "NormStats":
        """Statistics over axis 0 (time) of stacked spectra."""
        s = np.asarray(spectra, dtype=float)
        return cls(s.min(axis=0), s.max(axis=0))

    @classmethod
    def empty(cls, shape) -> "NormStats":
        """Statistics with no observations yet; populate with :meth:`update`."""
        return cls(np.full(shape, np.inf), np.full(shape, -np.inf))

    def update(self, spectrum) -> None:
        self.lo = np.minimum(self.lo, spectrum)
        self.hi = np.maximum(self.hi, spectrum)

    @property
    def populated(self) -> bool:
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def apply(self, spectrum) -> np.ndarray:
        """Min-max scale; bins whose training range is degenerate map to zero. No clamping.

        A range is degenerate when it is at rounding level relative to the
        largest magnitude seen in that cell, so FFT leakage of order 1e-13
        does not get stretched to the full unit interval.
        """
        span = self.hi - self.lo
        scale = np.max(np.abs(np.where(np.isfinite(self.hi), self.hi, 0.0)), axis=-1, keepdims=True)
        flat = span <= DEGENERATE_RTOL * scale
        inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, span))
        lo = np.where(flat, 0.0, self.lo)
        return (np.asarray(spectrum, dtype=float) - lo) * inv


def spectrum_transform(p, l_cut: int, stats: NormStats, mode: str = "infer") -> np.ndarray:
    """Truncated, min-max normalised spectrum of one feature vector.

    In ``train`` mode ``stats`` is widened with this vector before scaling.
    """
    if mode not in ("train", "infer"):
        raise ArgumentError("mode must be 'train' or 'infer'")
    mag = truncated_spectrum(p, l_cut)
    if mode == "train":
        stats.update(mag)
    elif not stats.populated:
        raise ArgumentError("inference needs populated normalisation statistics")
    return stats.apply(mag)


def channel_index(k: int, i: int, n_ar: int) -> int:
    return k * n_ar + i


def assemble_tensor(ms: MeasurementSet, stats: NormStats, l_cut: int) -> np.ndarray:
    """Feature tensor shaped ``(n_loc * n_ar, l_cut, n_dh)``.

    ``stats`` must be indexed like the spectra, ``[i, m, k, bin]``.
    """
    mag = truncated_spectrum(ms.values, l_cut)  # (i, m, k, L)
    if mag.shape != stats.lo.shape:
        raise ShapeError(f"statistics shape {stats.lo.shape} does not match data {mag.shape}")
    norm = stats.apply(mag)
    t = norm.transpose(2, 0, 3, 1)  # (k, i, L, m)
    return t.reshape(ms.n_loc * ms.n_ar, l_cut, ms.n_dh)


def channel_losses(M, M_hat, n_ar: int):
    """Per-channel squared error as an ``(n_loc, n_ar)`` matrix, and the mean loss."""
    M, M_hat = np.asarray(M, dtype=float), np.asarray(M_hat, dtype=float)
    if M.shape != M_hat.shape:
        raise ShapeError(f"shape mismatch {M.shape} vs {M_hat.shape}")
    if M.shape[-3] % n_ar:
        raise ShapeError("channel count is not a multiple of the array count")
    per = np.sum((M - M_hat) ** 2, axis=(-2, -1))
    L = per.reshape(*per.shape[:-1], -1, n_ar)
    return L, float(np.mean((M - M_hat) ** 2))


@dataclass
class Baselines:
    loss_mean: np.ndarray  # (n_loc, n_ar)
    gamma_threshold: float
    gamma_mean: float
    gamma_std: float

    def __post_init__(self):
        self.loss_mean = np.asarray(self.loss_mean, dtype=float)


def score(M, M_hat, base: Baselines, n_ar: int) -> np.ndarray:
    """Anomaly scores ``tau = L / L_bar`` per (location, array)."""
    if np.any(base.loss_mean <= 0):
        raise BaselineError("baseline losses must be positive")
    L, _ = channel_losses(M, M_hat, n_ar)
    return L / base.loss_mean


def detect(tau, gamma_threshold: float) -> tuple[int, float]:
    gamma = float(np.mean(tau))
    return int(gamma > gamma_threshold), gamma


def locate(tau) -> tuple[int, int]:
    """``(array, location)`` of the anomaly; ``argmax`` keeps the lowest index on ties."""
    tau = np.asarray(tau, dtype=float)
    i_ver = int(np.argmax(tau.sum(axis=0)))
    i_hor = int(np.argmax(tau[:, i_ver]))
    return i_ver, i_hor


@dataclass
class AnomalyReport:
    t: int
    gamma: float
    i_ano: int
    i_ver: int | None
    i_hor: int | None
    tau: np.ndarray

    def to_dict(self) -> dict:
        return {"t": self.t, "gamma": self.gamma, "i_ano": self.i_ano,
                "i_ver": None if self.i_ver is None else self.i_ver + 1,
                "i_hor": None if self.i_hor is None else self.i_hor + 1,
                "tau": np.asarray(self.tau).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyReport":
        iv, ih = d.get("i_ver"), d.get("i_hor")
        return cls(int(d["t"]), float(d["gamma"]), int(d["i_ano"]),
                   None if iv is None else iv - 1, None if ih is None else ih - 1,
                   np.array(d["tau"], dtype=float))


@dataclass(frozen=True)
class PipelineConfig:
    l_cut: int = 32
    depth: int = 4
    base_channels: int = 8
    epochs: int = 200
    batch_size: int | None = None
    lr: float = 1e-3
    kappa: float = 3.0
    holdout: float = 0.2
    stats_scope: str = "train"  # "train" split only, or "all" pre-T steps

    def __post_init__(self):
        if self.stats_scope not in ("train", "all"):
            raise ArgumentError("stats_scope must be 'train' or 'all'")
        if not 0 < self.holdout < 1:
            raise ArgumentError("hold-out fraction must lie in (0, 1)")
        if self.epochs < 1:
            raise ArgumentError("epochs must be positive")


@dataclass
class TrainedPipeline:
    config: PipelineConfig
    net: nn.NetworkSpec
    weights: list
    stats: NormStats
    baselines: Baselines
    n_ar: int
    n_loc: int
    seed: int = 0
    history: list = field(default_factory=list)
    fingerprint: str = ""

    def tensor(self, ms: MeasurementSet) -> np.ndarray:
        if (ms.n_ar, ms.n_loc) != (self.n_ar, self.n_loc):
            raise ShapeError("measurement layout differs from the trained pipeline")
        return assemble_tensor(ms, self.stats, self.config.l_cut)

    def scores(self, ms: MeasurementSet) -> np.ndarray:
        M = self.tensor(ms)[None]
        return score(M, nn.network_forward(M, self.net, self.weights), self.baselines, self.n_ar)[0]

    def infer(self, ms: MeasurementSet, gamma_threshold: float | None = None) -> AnomalyReport:
        th = self.baselines.gamma_threshold if gamma_threshold is None else gamma_threshold
        tau = self.scores(ms)
        i_ano, gamma = detect(tau, th)
        i_ver, i_hor = locate(tau) if i_ano else (None, None)
        return AnomalyReport(ms.t, gamma, i_ano, i_ver, i_hor, tau)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        nn.Checkpoint(self.net, self.weights, self.seed, self.config.epochs, self.history).save(d / "network")
        b = self.baselines
        meta = {"config": self.config.__dict__, "n_ar": self.n_ar, "n_loc": self.n_loc,
                "seed": self.seed, "fingerprint": self.fingerprint,
                "stats": {"shape": list(self.stats.lo.shape), "lo": self.stats.lo.ravel().tolist(),
                          "hi": self.stats.hi.ravel().tolist()},
                "baselines": {"loss_mean": b.loss_mean.tolist(), "gamma_threshold": b.gamma_threshold,
                              "gamma_mean": b.gamma_mean, "gamma_std": b.gamma_std}}
        (d / "pipeline.json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, directory) -> "TrainedPipeline":
        d = Path(directory)
        try:
            meta = json.loads((d / "pipeline.json").read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read pipeline in {d}: {exc}") from exc
        ck = nn.Checkpoint.load(d / "network")
        shape = tuple(meta["stats"]["shape"])
        stats = NormStats(np.reshape(meta["stats"]["lo"], shape), np.reshape(meta["stats"]["hi"], shape))
        return cls(PipelineConfig(**meta["config"]), ck.spec, ck.weights, stats,
                   Baselines(**meta["baselines"]), meta["n_ar"], meta["n_loc"], meta["seed"],
                   ck.loss_history, meta.get("fingerprint", ""))


def fingerprint(*parts) -> str:
    """Stable hash of JSON-serialisable configuration parts."""
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def train_pipeline(series, config: PipelineConfig = PipelineConfig(), seed: int = 0,
                   fingerprint_: str = "") -> TrainedPipeline:
    """Train on a random 80 % split; baselines and the threshold come from the rest.

    With ``stats_scope="train"`` the min-max statistics see only the training
    split, so hold-out features can leave [0, 1] exactly as post-T data do and
    the threshold reflects that spread.  ``"all"`` fits them on every step.
    """
    series = list(series)
    if len(series) < 10:
        raise DataError("at least 10 time steps are needed for training")
    first = series[0]
    if any(ms.values.shape != first.values.shape for ms in series):
        raise DataError("all time steps must share one layout")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(series))
    n_hold = max(1, int(round(config.holdout * len(series))))
    hold, train_idx = np.sort(order[:n_hold]), np.sort(order[n_hold:])
    spectra = np.array([truncated_spectrum(ms.values, config.l_cut) for ms in series])
    stats = NormStats.fit(spectra if config.stats_scope == "all" else spectra[train_idx])
    tensors = np.array([assemble_tensor(ms, stats, config.l_cut) for ms in series])
    net = nn.NetworkSpec(tensors.shape[1], config.depth, config.base_channels)
    weights, history = nn.train(tensors[train_idx], net, epochs=config.epochs,
                                batch_size=config.batch_size, seed=seed, lr=config.lr)
    Mh = tensors[hold]
    L, _ = channel_losses(Mh, nn.network_forward(Mh, net, weights), first.n_ar)
    loss_mean = L.mean(axis=0)
    if np.any(loss_mean <= 0):
        raise BaselineError("a channel has zero hold-out reconstruction loss")
    gammas = (L / loss_mean).mean(axis=(1, 2))
    g_mean, g_std = float(gammas.mean()), float(gammas.std(ddof=1))
    base = Baselines(loss_mean, g_mean + config.kappa * g_std, g_mean, g_std)
    return TrainedPipeline(config, net, weights, stats, base, first.n_ar, first.n_loc, seed,
                           history, fingerprint_)
