"""Equivalent-circuit reflection model of a meta-material sensor.

Each sensing unit is a split-ring resonator whose gap is filled with a
condition-sensitive material.  A unit is modelled as a parallel RLC tank;
the units sit in series with ``N_T - 1`` coupling capacitors, and the
resulting load is matched against the free-space line impedance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ArgumentError, CalibrationError, DataError, DomainError

FREE_SPACE_IMPEDANCE = 377.0

# SRR copper trace geometry of the fabricated units.
SRR_WIDTH = 1.2e-3
SRR_THICKNESS = 0.035e-3
SRR_SIDE = 7.5e-3

DEFAULT_INDUCTANCE = 5e-9
DEFAULT_COUPLING = 5e-15


@dataclass(frozen=True)
class UnitCircuitParams:
    parasitic_inductance: float
    parasitic_capacitance: float
    unit_gap_capacitance: float
    srr_width: float = SRR_WIDTH
    srr_thickness: float = SRR_THICKNESS
    srr_side: float = SRR_SIDE

    def __post_init__(self):
        for name in ("parasitic_inductance", "parasitic_capacitance", "unit_gap_capacitance",
                     "srr_width", "srr_thickness", "srr_side"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be strictly positive")

    def gap_capacitance(self, d):
        return self.unit_gap_capacitance / d

    def resonance(self, d: float) -> float:
        """Parallel resonance frequency (Hz) of the lossless tank at gap width ``d``."""
        c_total = self.parasitic_capacitance + self.gap_capacitance(d)
        return 1.0 / (2 * math.pi * math.sqrt(self.parasitic_inductance * c_total))


@dataclass(frozen=True)
class SensorCircuitParams:
    units: tuple[UnitCircuitParams, ...]
    coupling_capacitance: float = DEFAULT_COUPLING
    characteristic_impedance: float = FREE_SPACE_IMPEDANCE

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if len(self.units) < 1:
            raise ArgumentError("a sensor needs at least one unit")
        if not self.coupling_capacitance > 0:
            raise ArgumentError("coupling capacitance must be positive")
        if not self.characteristic_impedance > 0:
            raise ArgumentError("characteristic impedance must be positive")

    @property
    def n_units(self) -> int:
        return len(self.units)


@dataclass(frozen=True)
class MaterialSensitivity:
    """Piecewise-linear map from a condition value to material conductivity (S/m)."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(c), float(r)) for c, r in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise ArgumentError("need at least two (condition, conductivity) points")
        cs = [c for c, _ in pts]
        if any(b <= a for a, b in zip(cs, cs[1:])):
            raise ArgumentError("condition values must be strictly increasing")
        if any(r <= 0 for _, r in pts):
            raise ArgumentError("conductivities must be positive")

    @property
    def domain(self) -> tuple[float, float]:
        return self.points[0][0], self.points[-1][0]

    def conductivity(self, c):
        lo, hi = self.domain
        c_arr = np.asarray(c, dtype=float)
        if np.any(c_arr < lo) or np.any(c_arr > hi):
            raise DomainError(f"condition {c} outside material domain [{lo}, {hi}]")
        xs, ys = zip(*self.points)
        out = np.interp(c_arr, xs, ys)
        return float(out) if out.ndim == 0 else out

    @classmethod
    def from_json(cls, path_or_text) -> "MaterialSensitivity":
        text = Path(path_or_text).read_text() if _is_path(path_or_text) else str(path_or_text)
        return cls(tuple(tuple(p) for p in json.loads(text)["points"]))

    def to_json(self) -> str:
        return json.dumps({"points": [list(p) for p in self.points]})


def _is_path(obj) -> bool:
    if isinstance(obj, Path):
        return True
    return isinstance(obj, str) and not obj.lstrip().startswith("{")


# Published end-point conductivities: normal / anomalous.
HUMIDITY_MATERIAL = MaterialSensitivity(((55.0, 0.11), (75.0, 0.67)))
TEMPERATURE_MATERIAL = MaterialSensitivity(((20.0, 0.32), (50.0, 0.97)))
DEFAULT_MATERIALS = (HUMIDITY_MATERIAL, TEMPERATURE_MATERIAL)
NORMAL_CONDITION = (55.0, 20.0)

OPTIMAL_STRUCTURE = (1.126e-3, 1.761e-3)


def _check_frequency(f):
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ArgumentError("frequency must be positive")
    return f


def gap_resistance(c_n, d_n, material: MaterialSensitivity, unit: UnitCircuitParams):
    """Gap resistance ``d / (rho(c) * W * H)`` in ohms."""
    if not d_n > 0:
        raise DomainError("gap width must be positive")
    rho = material.conductivity(c_n)
    return d_n / (rho * unit.srr_width * unit.srr_thickness)


def unit_admittance(f, c_n, d_n, unit: UnitCircuitParams, material: MaterialSensitivity):
    f = _check_frequency(f)
    w = 2 * math.pi * f
    return (1.0 / (1j * w * unit.parasitic_inductance)
            + 1j * w * unit.parasitic_capacitance
            + 1j * w * unit.gap_capacitance(d_n)
            + 1.0 / gap_resistance(c_n, d_n, material, unit))


def unit_impedance(f, c_n, d_n, unit: UnitCircuitParams, material: MaterialSensitivity):
    return 1.0 / unit_admittance(f, c_n, d_n, unit, material)


def _check_lengths(d, c, params, materials):
    n = params.n_units
    if not (len(d) == len(c) == len(materials) == n):
        raise ArgumentError(
            f"length mismatch: d={len(d)}, c={len(c)}, materials={len(materials)}, units={n}")


def total_impedance(f, d: Sequence[float], c: Sequence[float], params: SensorCircuitParams,
                    materials: Sequence[MaterialSensitivity] = DEFAULT_MATERIALS):
    """Series sum of the unit tanks plus the inter-unit coupling capacitors."""
    _check_lengths(d, c, params, materials)
    f = _check_frequency(f)
    n = params.n_units
    z = sum(unit_impedance(f, c_n, d_n, u, m)
            for u, c_n, d_n, m in zip(params.units, c, d, materials))
    if n > 1:
        z = z + (n - 1) / (2j * math.pi * f * params.coupling_capacitance)
    return z


def reflection_from_impedance(z, z0=FREE_SPACE_IMPEDANCE):
    z = np.asarray(z, dtype=complex)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(z), 1.0 + 0j, (z - z0) / (z + z0))
    return complex(out) if out.ndim == 0 else out


def reflection_coefficient_analytic(f, d, c, params: SensorCircuitParams,
                                    materials=DEFAULT_MATERIALS):
    z = total_impedance(f, d, c, params, materials)
    return reflection_from_impedance(z, params.characteristic_impedance)


def calibrate_parasitics(band=(3.5e9, 4.0e9), nominal_d=OPTIMAL_STRUCTURE, split=300e6,
                         inductance=DEFAULT_INDUCTANCE, coupling=DEFAULT_COUPLING,
                         srr_width=SRR_WIDTH, srr_thickness=SRR_THICKNESS,
                         srr_side=SRR_SIDE) -> SensorCircuitParams:
    """Closed-form choice of parasitics that puts the unit resonances inside ``band``.

    Resonances are spaced by ``split`` and centred in the band.  With the
    inductance fixed, each unit's parasitic capacitance is solved such that
    ``C_para + C_hat/d_nom`` resonates at its target while the gap term at the
    nominal width equals ``C_para`` (so ``C_hat = C_para * d_nom``).
    """
    f_lb, f_ub = band
    n = len(nominal_d)
    if not f_ub > f_lb:
        raise CalibrationError("empty band")
    if n < 1:
        raise CalibrationError("need at least one unit")
    width = f_ub - f_lb
    if (n - 1) * split > width:
        raise CalibrationError(f"split {split} Hz too wide for {n} units in {width} Hz band")
    inset = (width - (n - 1) * split) / 2
    units = []
    for k, d_nom in enumerate(nominal_d):
        target = f_lb + inset + k * split
        c_total = 1.0 / ((2 * math.pi * target) ** 2 * inductance)
        c_para = c_total / 2
        units.append(UnitCircuitParams(inductance, c_para, c_para * d_nom,
                                       srr_width, srr_thickness, srr_side))
    return SensorCircuitParams(tuple(units), coupling)


def default_params() -> SensorCircuitParams:
    return calibrate_parasitics()


@dataclass(frozen=True)
class CorrectionTable:
    """Residuals between the analytic model and precise (e.g. full-wave) data.

    ``residuals`` has shape ``(*grid_shape, n_conditions, n_frequencies)`` and
    is defined on the tensor grid spanned by ``axes`` (one axis per gap width).
    An empty table means a zero correction.
    """

    axes: tuple[tuple[float, ...], ...] = ()
    residuals: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        axes = tuple(tuple(float(v) for v in ax) for ax in self.axes)
        object.__setattr__(self, "axes", axes)
        if self.residuals is None:
            if axes:
                raise DataError("axes given without residuals")
            return
        res = np.array(self.residuals, dtype=complex)
        res.setflags(write=False)
        object.__setattr__(self, "residuals", res)
        if res.ndim != len(axes) + 2 or res.shape[:len(axes)] != tuple(len(a) for a in axes):
            raise DataError("residual array does not match the structure grid")
        for ax in axes:
            if len(ax) < 2 or any(b <= a for a, b in zip(ax, ax[1:])):
                raise DataError("each grid axis needs >= 2 strictly increasing values")
        object.__setattr__(self, "_interp", RegularGridInterpolator(axes, res))

    @property
    def empty(self) -> bool:
        return self.residuals is None

    @property
    def structures(self) -> list[tuple[float, ...]]:
        return [tuple(p) for p in np.stack(np.meshgrid(*self.axes, indexing="ij"), -1)
                .reshape(-1, len(self.axes))]

    def xi(self, d, cond_index: int, freq_index=None):
        """Interpolated residual; multilinear in ``d`` and exact at grid nodes."""
        if self.empty:
            return 0.0
        d = np.asarray(d, dtype=float)
        if d.shape != (len(self.axes),):
            raise ArgumentError("structure dimension does not match the table")
        for v, ax in zip(d, self.axes):
            if v < ax[0] or v > ax[-1]:
                raise DomainError(f"structure {tuple(d)} outside the sampled design space")
        vals = self._interp(d[None, :])[0, cond_index]
        return vals if freq_index is None else vals[freq_index]

    @classmethod
    def from_csv(cls, path) -> "CorrectionTable":
        """Load rows ``d1_mm,...,dN_mm,cond_index,freq_index,xi_re,xi_im``."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [r for r in reader if r]
        if header is None or not rows:
            return cls()
        n_d = sum(1 for h in header if h.startswith("d") and h.endswith("_mm"))
        if header[n_d:] != ["cond_index", "freq_index", "xi_re", "xi_im"]:
            raise DataError(f"unexpected correction table header {header}")
        data = np.array(rows, dtype=float)
        keys = np.round(data[:, :n_d] * 1e-3, 12)
        axes = tuple(tuple(np.unique(keys[:, k])) for k in range(n_d))
        n_c = int(data[:, n_d].max()) + 1
        n_f = int(data[:, n_d + 1].max()) + 1
        res = np.full(tuple(len(a) for a in axes) + (n_c, n_f), np.nan, dtype=complex)
        for row, key in zip(data, keys):
            idx = tuple(axes[k].index(key[k]) for k in range(n_d))
            res[idx + (int(row[n_d]), int(row[n_d + 1]))] = row[n_d + 2] + 1j * row[n_d + 3]
        if np.isnan(res.real).any():
            raise DataError("correction table does not cover the full structure grid")
        return cls(axes, res)

    def to_csv(self, path) -> None:
        n_d = len(self.axes)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"d{k + 1}_mm" for k in range(n_d)]
                       + ["cond_index", "freq_index", "xi_re", "xi_im"])
            if self.empty:
                return
            for idx in np.ndindex(self.residuals.shape):
                v = self.residuals[idx]
                d_mm = [round(float(self.axes[k][idx[k]]) * 1e3, 9) for k in range(n_d)]
                w.writerow(d_mm + [idx[n_d], idx[n_d + 1], repr(float(v.real)), repr(float(v.imag))])


def reflection_coefficient(freqs, d, c, params: SensorCircuitParams,
                           materials=DEFAULT_MATERIALS, table: CorrectionTable | None = None,
                           cond_index: int = 0, freq_index=None):
    """Correction-fitted reflection coefficient on a frequency grid.

    ``freqs`` is the full grid the table was built on; ``freq_index`` selects
    entries of it (``None`` for all).  The analytic coefficient is returned
    unchanged when the table is empty.
    """
    freqs = np.asarray(freqs, dtype=float)
    sel = freqs if freq_index is None else freqs[freq_index]
    gamma = reflection_coefficient_analytic(sel, d, c, params, materials)
    if table is None or table.empty:
        return gamma
    return gamma + table.xi(d, cond_index, freq_index)
