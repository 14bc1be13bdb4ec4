"""Received-signal models for wall-embedded sensor arrays.

Coordinates: the sensor surface is the plane ``x = 0``, the transceiver
stands at ``x = D`` (the measuring distance), ``y`` runs horizontally along
the wall and ``z`` is height.  Antenna and array indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
import numpy as np

from .errors import ArgumentError, DomainError, SingularityError
from .expint import exponential_integral

SPEED_OF_LIGHT = 299_792_458.0
DB_FLOOR = -300.0


@dataclass(frozen=True)
class WallModel:
    attenuation: float = 8.0  # Np/m
    refraction_index: float = 4.2
    thickness: float = 0.03

    def __post_init__(self):
        if self.attenuation < 0 or self.refraction_index < 1 or self.thickness < 0:
            raise ArgumentError("invalid wall parameters")


FREE_SPACE = WallModel(0.0, 1.0, 0.0)


@dataclass(frozen=True)
class AntennaPattern:
    """Real directional gain ``boresight_gain * cos(theta)**exponent``."""

    boresight_gain: float = 1.0
    exponent: float = 2.0

    def __call__(self, f, theta):
        theta = np.asarray(theta, dtype=float)
        return self.boresight_gain * np.cos(theta) ** self.exponent * np.ones_like(f, dtype=float)


@dataclass(frozen=True)
class SystemGeometry:
    tx_count: int = 8
    tx_spacing: float = 0.0367
    tx_center_height: float = 0.836
    rx_heights: tuple[float, ...] = (1.363, 0.32)
    array_center_heights: tuple[float, ...] = (1.10, 0.58)
    array_width: float = 0.174
    sensors_per_column: int = 12
    measuring_distances: tuple[float, ...] = (1.0,)
    location_count: int = 3
    wall: WallModel = field(default_factory=WallModel)
    unit_side: float = 14.54e-3
    tx_power: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rx_heights", tuple(self.rx_heights))
        object.__setattr__(self, "array_center_heights", tuple(self.array_center_heights))
        object.__setattr__(self, "measuring_distances", tuple(self.measuring_distances))
        if isinstance(self.wall, dict):
            object.__setattr__(self, "wall", WallModel(**self.wall))
        if self.tx_count < 1 or len(self.rx_heights) < 1:
            raise ArgumentError("need at least one Tx and one Rx antenna")
        if len(self.rx_heights) != len(self.array_center_heights):
            raise ArgumentError("one Rx antenna per sensor array is required")
        if self.tx_spacing <= 0 or self.array_width <= 0 or self.unit_side <= 0:
            raise ArgumentError("spacings and widths must be positive")
        if any(h <= 0 for h in self.rx_heights + self.array_center_heights):
            raise ArgumentError("heights must be positive")
        if any(d <= 0 for d in self.measuring_distances) or self.location_count < 1:
            raise ArgumentError("invalid distances or location count")

    @property
    def n_rx(self) -> int:
        return len(self.rx_heights)

    @property
    def tx_heights(self) -> np.ndarray:
        j = np.arange(self.tx_count)
        return self.tx_center_height + (j - (self.tx_count - 1) / 2) * self.tx_spacing

    def tx_position(self, j: int, D: float) -> np.ndarray:
        return np.array([D, 0.0, self.tx_heights[j]])

    def rx_position(self, i: int, D: float) -> np.ndarray:
        return np.array([D, 0.0, self.rx_heights[i]])

    def array_span(self, i: int) -> tuple[float, float]:
        h = self.array_center_heights[i]
        return h - self.array_width / 2, h + self.array_width / 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemGeometry":
        data = dict(data)
        if "wall" in data and isinstance(data["wall"], dict):
            data["wall"] = WallModel(**data["wall"])
        return cls(**data)


@dataclass(frozen=True)
class FrequencyGrid:
    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(f) for f in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2 or any(b <= a for a, b in zip(pts, pts[1:])) or pts[0] <= 0:
            raise ArgumentError("frequency grid must have >= 2 strictly increasing positive points")

    @classmethod
    def linspace(cls, f_lb=3.5e9, f_ub=4.0e9, n=201) -> "FrequencyGrid":
        return cls(tuple(np.linspace(f_lb, f_ub, n)))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points)

    def __len__(self):
        return len(self.points)


@dataclass
class ReceivedVector:
    values: np.ndarray
    array_index: int
    height: float
    distance: float


@dataclass
class FeatureVector:
    values: np.ndarray
    array_index: int
    height_index: int
    location_index: int = 0
    time_index: int = 0
    floored: bool = False


def _propagation_constant(f, D, wall: WallModel, v=SPEED_OF_LIGHT):
    """``alpha`` such that the one-way gain is ``v e^{-alpha r} / (4 pi f r)``."""
    f = np.asarray(f, dtype=float)
    ratio = wall.thickness / D
    k = 2 * np.pi * f / v
    return wall.attenuation * ratio + 1j * k * (1 + ratio * (wall.refraction_index - 1))


def effective_wavenumber(f, D, wall: WallModel, v=SPEED_OF_LIGHT):
    return np.imag(_propagation_constant(f, D, wall, v))


def propagation_gain(x, x_m, f, D: float, wall: WallModel = WallModel(), v=SPEED_OF_LIGHT):
    """Free-space gain between two points times the in-wall propagation factor.

    ``x`` and ``x_m`` broadcast over leading axes (last axis of length 3);
    ``f`` broadcasts against the resulting distance array.
    """
    if D <= 0:
        raise ArgumentError("measuring distance must be positive")
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ArgumentError("frequency must be positive")
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(x_m, dtype=float), axis=-1)
    if np.any(r == 0):
        raise SingularityError("propagation gain is singular at zero distance")
    alpha = _propagation_constant(f, D, wall, v)
    g = v * np.exp(-alpha * r) / (4 * np.pi * f * r)
    return complex(g) if np.ndim(g) == 0 else g


def mirror(x) -> np.ndarray:
    """Reflection of a point across the sensor plane ``x = 0``."""
    x = np.array(x, dtype=float)
    x[..., 0] = -x[..., 0]
    return x


def specular_gain(x_rx, x_tx, f, D: float, wall: WallModel = WallModel(), v=SPEED_OF_LIGHT):
    """Gain of the mirror path from ``x_tx`` to ``x_rx`` via the sensor plane."""
    if np.asarray(x_rx)[..., 0].min() <= 0 or np.asarray(x_tx)[..., 0].min() <= 0:
        raise ArgumentError("both antennas must be in front of the sensor plane")
    return propagation_gain(x_tx, mirror(x_rx), f, D, wall, v)


def steering_angles(geom: SystemGeometry, j: int, i: int, D: float) -> tuple[float, float]:
    """Emission angle from Tx ``j`` to array ``i`` and incidence angle at Rx ``i``."""
    h_ms = geom.array_center_heights[i]
    theta_tx = math.atan((geom.tx_heights[j] - h_ms) / D)
    theta_rx = math.atan((h_ms - geom.rx_heights[i]) / D)
    return theta_tx, theta_rx


def beamform_phase(j: int, i: int, f, h: float, D: float, geom: SystemGeometry,
                   v=SPEED_OF_LIGHT, strict: bool = True):
    """Far-field Tx phase that steers the beam towards height ``h`` on array ``i``.

    The approximation holds for ``h`` on the array; ``strict=False`` lifts the
    span check (used when scanning past the array edges).
    """
    lo, hi = geom.array_span(i)
    if strict and not lo - 1e-12 <= h <= hi + 1e-12:
        raise DomainError(f"target height {h} outside array {i} span [{lo}, {hi}]")
    dh = h - geom.tx_center_height
    f = np.asarray(f, dtype=float)
    return -j * 2 * np.pi * f * geom.tx_spacing / v * dh / math.hypot(D, dh)


def beamform_phase_exact(j: int, i: int, f, D: float, geom: SystemGeometry,
                         wall: WallModel | None = None, v=SPEED_OF_LIGHT):
    """Phase built from the exact mirror-path length differences (reference for alignment)."""
    wall = geom.wall if wall is None else wall
    rx_img = mirror(geom.rx_position(i, D))
    l_j = np.linalg.norm(geom.tx_position(j, D) - rx_img)
    l_0 = np.linalg.norm(geom.tx_position(0, D) - rx_img)
    return effective_wavenumber(f, D, wall, v) * (l_j - l_0)


def chi_from_gamma(f, gamma, D: float, wall: WallModel, v=SPEED_OF_LIGHT):
    """Equivalent mirror coefficient of an electrically large array."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ArgumentError("frequency must be positive")
    denom = (2 * wall.attenuation * wall.thickness * v * f
             + 4j * np.pi * f ** 2 * (D + wall.thickness * (wall.refraction_index - 1)))
    out = D * v ** 2 * np.asarray(gamma) / denom
    return complex(out) if np.ndim(out) == 0 else out


def chi(f, d, c, D: float, wall: WallModel, params, materials=None, table=None,
        cond_index: int = 0, v=SPEED_OF_LIGHT):
    from . import circuit

    materials = circuit.DEFAULT_MATERIALS if materials is None else materials
    f_arr = np.atleast_1d(np.asarray(f, dtype=float))
    gamma = circuit.reflection_coefficient(f_arr, d, c, params, materials, table, cond_index)
    out = chi_from_gamma(f_arr, gamma, D, wall, v)
    return out if np.ndim(f) else complex(out[0])


def _patterns(patterns):
    if patterns is None:
        return AntennaPattern(), AntennaPattern()
    return patterns


def received_signal_large(j: int, i: int, f, gamma, h: float, D: float, geom: SystemGeometry,
                          patterns=None, phase=None, v=SPEED_OF_LIGHT, strict: bool = True):
    """Per-antenna received signal treating array ``i`` as a uniform mirror.

    ``gamma`` is the array's reflection coefficient at ``f`` (same shape).
    ``phase`` overrides the beamforming phase (defaults to the far-field
    steering phase towards ``h``).
    """
    tx_pat, rx_pat = _patterns(patterns)
    f = np.asarray(f, dtype=float)
    wall = geom.wall
    th_tx, th_rx = steering_angles(geom, j, i, D)
    phi = beamform_phase(j, i, f, h, D, geom, v, strict) if phase is None else phase
    g_sr = specular_gain(geom.rx_position(i, D), geom.tx_position(j, D), f, D, wall, v)
    return (math.sqrt(geom.tx_power) * tx_pat(f, th_tx) * np.exp(1j * phi)
            * rx_pat(f, th_rx) * chi_from_gamma(f, gamma, D, wall, v) * g_sr)


def sensor_area(geom: SystemGeometry, n_units: int = 2) -> float:
    return n_units * geom.unit_side ** 2


def sensor_grid(geom: SystemGeometry, i: int, n_cols: int, n_rows: int,
                pitch_y: float | None = None, pitch_z: float | None = None,
                center_height: float | None = None, n_units: int = 2) -> np.ndarray:
    """Sensor centres of a rectangular ``n_rows x n_cols`` patch on the wall plane."""
    py = n_units * geom.unit_side if pitch_y is None else pitch_y
    pz = geom.unit_side if pitch_z is None else pitch_z
    zc = geom.array_center_heights[i] if center_height is None else center_height
    ys = (np.arange(n_cols) - (n_cols - 1) / 2) * py
    zs = zc + (np.arange(n_rows) - (n_rows - 1) / 2) * pz
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    return np.stack([np.zeros(yy.size), yy.ravel(), zz.ravel()], axis=-1)


def received_signal_small(j: int, i: int, f, gamma, sensor_centers, h: float, D: float,
                          geom: SystemGeometry, patterns=None, area: float | None = None,
                          weights=None, phase=None, v=SPEED_OF_LIGHT):
    """Discrete sum over individual sensors of array ``i``.

    Each sensor contributes ``g(tx, x_m) * gamma * g(rx, x_m) * area``.  The
    per-array antenna gains and steering phase multiply the whole sum.
    Optional ``weights`` scale individual sensors (quadrature weights or
    tapers); they default to one.
    """
    centers = np.asarray(sensor_centers, dtype=float).reshape(-1, 3)
    if centers.shape[0] == 0:
        raise ArgumentError("empty sensor set")
    tx_pat, rx_pat = _patterns(patterns)
    f = np.asarray(f, dtype=float)
    area = sensor_area(geom) if area is None else area
    w = np.ones(len(centers)) if weights is None else np.asarray(weights, dtype=float)
    wall = geom.wall
    fcol = f.reshape(-1, 1) if f.ndim else f
    g_t = propagation_gain(geom.tx_position(j, D), centers, fcol, D, wall, v)
    g_r = propagation_gain(geom.rx_position(i, D), centers, fcol, D, wall, v)
    total = (g_t * g_r) @ w if f.ndim else np.dot(g_t * g_r, w)
    th_tx, th_rx = steering_angles(geom, j, i, D)
    phi = beamform_phase(j, i, f, h, D, geom, v) if phase is None else phase
    return (math.sqrt(geom.tx_power) * tx_pat(f, th_tx) * rx_pat(f, th_rx)
            * np.exp(1j * phi) * np.asarray(gamma) * area * total)


def specular_point(geom: SystemGeometry, j: int, i: int, D: float) -> np.ndarray:
    """Point on the sensor plane where the Tx ``j`` -> Rx ``i`` mirror path crosses it."""
    zt, zr = geom.tx_heights[j], geom.rx_heights[i]
    return np.array([0.0, 0.0, (zt + zr) / 2])


def tapered_surface_sum(j: int, i: int, f, gamma, h: float, D: float, geom: SystemGeometry,
                        n: int = 40, half_extent: float | None = None, flat: float = 0.3,
                        patterns=None, v=SPEED_OF_LIGHT):
    """Surface integral over an unbounded uniform array, as a tapered ``n x n`` sum.

    The grid is centred on the specular point.  A smooth taper (flat over the
    inner ``flat`` fraction, ``C^inf`` roll-off to zero at ``half_extent``)
    suppresses the edge diffraction a hard truncation would add, so the sum
    converges to the infinite-surface value.  Weights are cell area times
    taper, i.e. a Riemann sum of the integral.
    """
    if half_extent is None:
        half_extent = 0.8 if D < 1.5 else 1.0
    pitch = 2 * half_extent / n
    c = specular_point(geom, j, i, D)
    ax = (np.arange(n) - (n - 1) / 2) * pitch
    yy, zz = np.meshgrid(ax, ax, indexing="ij")
    centers = np.stack([np.zeros(yy.size), yy.ravel(), c[2] + zz.ravel()], axis=-1)
    weights = (_taper(np.abs(yy.ravel()) / half_extent, flat)
               * _taper(np.abs(zz.ravel()) / half_extent, flat))
    return received_signal_small(j, i, f, gamma, centers, h, D, geom, patterns,
                                 area=pitch * pitch, weights=weights, v=v)


def _taper(u, flat):
    """1 for ``u <= flat``, 0 for ``u >= 1``, smooth bump transition in between."""
    u = np.asarray(u, dtype=float)
    s = np.clip((u - flat) / (1 - flat), 0.0, 1.0)
    out = np.zeros_like(s)
    inner = s <= 0
    outer = s >= 1
    mid = ~(inner | outer)
    a = np.exp(-1 / s[mid])
    b = np.exp(-1 / (1 - s[mid]))
    out[inner] = 1.0
    out[mid] = b / (a + b)
    return out


def channel_factor(i: int, f, h: float, D: float, geom: SystemGeometry, patterns=None,
                   v=SPEED_OF_LIGHT, strict: bool = True):
    """Sum over Tx antennas of the large-array signal per unit reflection coefficient."""
    f = np.asarray(f, dtype=float)
    ones = np.ones_like(f, dtype=complex)
    return sum(received_signal_large(j, i, f, ones, h, D, geom, patterns, v=v, strict=strict)
               for j in range(geom.tx_count))


def beam_scan(i: int, grid: FrequencyGrid, D: float, geom: SystemGeometry, n_points: int = 41,
              patterns=None) -> tuple[np.ndarray, np.ndarray]:
    """Total received power over target heights ``h_i +- L_MS``.

    Returns ``(heights, power)``; the reflection coefficient is taken as one
    since it scales every height equally.
    """
    hc, width = geom.array_center_heights[i], geom.array_width
    heights = np.linspace(hc - width, hc + width, n_points)
    f = grid.array
    power = np.array([np.sum(np.abs(channel_factor(i, f, h, D, geom, patterns, strict=False)) ** 2)
                      for h in heights])
    return heights, power


def received_vector(i: int, gamma, h: float, D: float, grid: FrequencyGrid,
                    geom: SystemGeometry, patterns=None) -> ReceivedVector:
    """Beamformed received vector of Rx ``i`` over the frequency grid."""
    f = grid.array
    gamma = np.broadcast_to(np.asarray(gamma, dtype=complex), f.shape)
    y = gamma * channel_factor(i, f, h, D, geom, patterns)
    return ReceivedVector(y, i, h, D)


def height_displacements(geom: SystemGeometry, n_dh: int) -> np.ndarray:
    """Beam target offsets ``-L/2 + m L / N_dH`` for ``m = 0..N_dH-1``."""
    m = np.arange(n_dh)
    return -geom.array_width / 2 + m * geom.array_width / n_dh


def to_db(y, floor: float = DB_FLOOR):
    """``10 log10 |y|`` with zero magnitudes clamped to ``floor``; returns (p, floored)."""
    mag = np.abs(np.asarray(y))
    zero = mag == 0
    with np.errstate(divide="ignore"):
        p = 10 * np.log10(mag)
    p = np.where(zero, floor, np.maximum(p, floor))
    return p, bool(zero.any())


def feature_vector(i: int, m: int, gamma, D: float, grid: FrequencyGrid, geom: SystemGeometry,
                   n_dh: int = 8, patterns=None, location_index: int = 0,
                   time_index: int = 0) -> FeatureVector:
    h = geom.array_center_heights[i] + height_displacements(geom, n_dh)[m]
    y = received_vector(i, gamma, h, D, grid, geom, patterns).values
    p, floored = to_db(y)
    return FeatureVector(p, i, m, location_index, time_index, floored)


def received_signal_colocated_exact(f, gamma, D: float, wall: WallModel, power: float = 1.0,
                                    gain_product: complex = 1.0, v=SPEED_OF_LIGHT):
    """Co-located Tx/Rx facing an unbounded uniform array, in closed form via E1."""
    alpha = complex(_propagation_constant(f, D, wall, v))
    return (math.sqrt(power) * gain_product * gamma * v ** 2 / (16 * math.pi ** 2 * f ** 2)
            * 2 * math.pi * exponential_integral(2 * D * alpha))


def received_signal_colocated_approx(f, gamma, D: float, wall: WallModel, power: float = 1.0,
                                     gain_product: complex = 1.0, v=SPEED_OF_LIGHT):
    """Mirror-model counterpart of :func:`received_signal_colocated_exact`."""
    x = np.array([D, 0.0, 1.0])
    g_sr = specular_gain(x, x, f, D, wall, v)
    return math.sqrt(power) * gain_product * chi_from_gamma(f, gamma, D, wall, v) * g_sr

