"""Per-cycle MCU energy, the capacitor store, regulator efficiency and discharge integration."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .windows import WindowTable

__all__ = [
    "Capacitor",
    "DrainResult",
    "EfficiencyCurve",
    "EnergyModelError",
    "EnergyModelTable",
    "Regulator",
    "bundled_energy_table",
    "cap_energy",
    "cap_voltage_for_energy",
    "cycles_in_discharge",
    "drain",
    "energy_per_cycle",
    "load_energy_table",
]

NJ = 1e-9
BUNDLED_ENERGY_CSV = "msp430g2553_energy.csv"


class EnergyModelError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyModelTable:
    """Energy per clock cycle (J) sampled over supply voltage, one series per frequency."""

    series: dict[float, tuple[np.ndarray, np.ndarray]]

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, float, float]]) -> "EnergyModelTable":
        """Build from ``(freq_hz, v_supply, e_cc_joules)`` triples."""
        grouped: dict[float, list[tuple[float, float]]] = {}
        for f, v, e in samples:
            grouped.setdefault(float(f), []).append((float(v), float(e)))
        series = {}
        for f, pts in grouped.items():
            pts.sort()
            v = np.array([p[0] for p in pts])
            e = np.array([p[1] for p in pts])
            if len(v) < 2:
                raise EnergyModelError(f"{f:g} Hz: at least two samples are required")
            if np.any(np.diff(v) <= 0):
                raise EnergyModelError(f"{f:g} Hz: duplicate voltage samples")
            if np.any(e <= 0):
                raise EnergyModelError(f"{f:g} Hz: energy per cycle must be positive")
            if np.any(np.diff(e) < 0):
                raise EnergyModelError(f"{f:g} Hz: energy per cycle must not decrease with voltage")
            v.setflags(write=False)
            e.setflags(write=False)
            series[f] = (v, e)
        return cls(series)

    def frequencies(self) -> list[float]:
        return sorted(self.series)

    def lookup(self, freq_hz: float) -> tuple[np.ndarray, np.ndarray]:
        for f, s in self.series.items():
            if abs(f - freq_hz) <= 1e-6 * max(1.0, freq_hz):
                return s
        raise EnergyModelError(f"no energy series for {freq_hz:g} Hz")

    def span(self, freq_hz: float) -> tuple[float, float]:
        v, _ = self.lookup(freq_hz)
        return float(v[0]), float(v[-1])

    def check_covers(self, table: WindowTable, v_top: float | None = None) -> None:
        """Each window's series must span from its v_reg up to the global ceiling."""
        top = table.v_max if v_top is None else v_top
        for i, w in enumerate(table):
            lo, hi = self.span(w.freq_hz)
            if lo > w.v_reg + 1e-9 or hi < top - 1e-9:
                raise EnergyModelError(
                    f"window {i} ({w.freq_hz:g} Hz): samples span [{lo}, {hi}] V, need [{w.v_reg}, {top}] V"
                )

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("freq_hz,v_supply,nj_per_cycle\n")
        for f in self.frequencies():
            v, e = self.series[f]
            for vi, ei in zip(v, e):
                out.write(f"{f:.0f},{vi:.2f},{ei / NJ:.3f}\n")
        return out.getvalue()


def _parse_energy_csv(text: str, source: str) -> EnergyModelTable:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    expected = ["freq_hz", "v_supply", "nj_per_cycle"]
    if reader.fieldnames != expected:
        raise EnergyModelError(f"{source}: header must be {','.join(expected)}")
    samples = []
    for lineno, row in enumerate(reader, start=2):
        try:
            samples.append((float(row["freq_hz"]), float(row["v_supply"]), float(row["nj_per_cycle"]) * NJ))
        except (TypeError, ValueError) as exc:
            raise EnergyModelError(f"{source}: bad row {lineno}: {exc}") from None
    return EnergyModelTable.from_samples(samples)


def load_energy_table(path: str | Path) -> EnergyModelTable:
    """Read an energy-model CSV (``freq_hz,v_supply,nj_per_cycle``); ``#`` lines are comments."""
    p = Path(path)
    return _parse_energy_csv(p.read_text(), str(p))


def bundled_energy_table() -> EnergyModelTable:
    text = resources.files("idvfs.data").joinpath(BUNDLED_ENERGY_CSV).read_text()
    return _parse_energy_csv(text, BUNDLED_ENERGY_CSV)


def energy_per_cycle(model: EnergyModelTable, freq_hz: float, v_supply: float) -> float:
    """Piecewise-linear energy per cycle; out-of-span queries raise."""
    v, e = model.lookup(freq_hz)
    if v_supply < v[0] - 1e-12 or v_supply > v[-1] + 1e-12:
        raise EnergyModelError(f"{v_supply} V outside sampled span [{v[0]}, {v[-1]}] V for {freq_hz:g} Hz")
    return float(np.interp(v_supply, v, e))


@dataclass
class Capacitor:
    capacitance: float
    v: float
    rating: float = 3.6

    def __post_init__(self):
        if self.capacitance <= 0:
            raise ValueError("capacitance must be positive")
        if self.v < 0 or self.v > self.rating + 1e-12:
            raise ValueError(f"voltage {self.v} outside [0, {self.rating}]")

    @property
    def energy(self) -> float:
        return cap_energy(self)


def cap_energy(cap: Capacitor) -> float:
    return 0.5 * cap.capacitance * cap.v * cap.v


def cap_voltage_for_energy(capacitance: float, energy: float) -> float:
    if energy < 0:
        raise ValueError("energy must be non-negative")
    return math.sqrt(2.0 * energy / capacitance)


@dataclass(frozen=True)
class EfficiencyCurve:
    """Regulator efficiency sampled on a (v_in, v_out) grid, bilinear in between."""

    v_in: tuple[float, ...]
    v_out: tuple[float, ...]
    eta: tuple[tuple[float, ...], ...]
    _interp: RegularGridInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.eta, dtype=float)
        if grid.shape != (len(self.v_in), len(self.v_out)):
            raise ValueError("efficiency grid shape must be len(v_in) x len(v_out)")
        if np.any(grid <= 0) or np.any(grid > 1):
            raise ValueError("efficiency must lie in (0, 1]")
        interp = RegularGridInterpolator((self.v_in, self.v_out), grid, bounds_error=False, fill_value=None)
        object.__setattr__(self, "_interp", interp)

    def __call__(self, v_in: float, v_out: float) -> float:
        return float(np.clip(self._interp([[v_in, v_out]])[0], 1e-6, 1.0))


@dataclass(frozen=True)
class Regulator:
    efficiency: float | EfficiencyCurve = 0.9

    def __post_init__(self):
        if isinstance(self.efficiency, (int, float)) and not 0 < self.efficiency <= 1:
            raise ValueError("regulator efficiency must lie in (0, 1]")

    def eta(self, v_in: float, v_out: float) -> float:
        if isinstance(self.efficiency, EfficiencyCurve):
            return self.efficiency(v_in, v_out)
        return float(self.efficiency)


@dataclass(frozen=True)
class DrainResult:
    v: float
    withdrawn: float
    underflow: bool


def drain(cap: Capacitor, load_energy: float, regulator: Regulator | None = None, v_out: float | None = None) -> DrainResult:
    """Remove ``load_energy`` (as seen by the load) from the capacitor.

    With a regulator the capacitor gives up ``load_energy / eta``.  The
    capacitor is updated in place; on underflow it is emptied and the result
    flags the energy failure.
    """
    if load_energy < 0:
        raise ValueError("load energy must be non-negative")
    if regulator is not None:
        eta = regulator.eta(cap.v, cap.v if v_out is None else v_out)
        cost = load_energy / eta
    else:
        cost = load_energy
    stored = cap_energy(cap)
    if cost > stored:
        cap.v = 0.0
        return DrainResult(0.0, stored, True)
    cap.v = cap_voltage_for_energy(cap.capacitance, stored - cost)
    return DrainResult(cap.v, cost, False)


def cycles_in_discharge(
    model: EnergyModelTable,
    cap: Capacitor,
    freq_hz: float,
    v_stop: float,
    regulated: bool = False,
    eta: float = 1.0,
    v_reg: float | None = None,
    slab_v: float = 1e-3,
) -> int:
    """Whole cycles executable while the capacitor falls from ``cap.v`` to ``v_stop``.

    Regulated runs see a fixed supply (``v_reg``, default ``v_stop``) so the
    count is closed form.  Unregulated runs integrate ``C V dV / e_cc(V)`` in
    slabs of ``slab_v`` using each slab's midpoint energy.
    """
    C = cap.capacitance
    v_start = cap.v
    if v_stop < 0 or v_start < v_stop - 1e-12:
        raise ValueError("need cap.v >= v_stop >= 0")
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if v_start <= v_stop:
        return 0
    if regulated:
        e = energy_per_cycle(model, freq_hz, v_stop if v_reg is None else v_reg)
        usable = 0.5 * C * (v_start * v_start - v_stop * v_stop) * eta
        return int(math.floor(usable / e * (1 + 1e-12)))
    lo, hi = model.span(freq_hz)
    if v_stop < lo - 1e-12 or v_start > hi + 1e-12:
        raise ValueError(f"discharge path [{v_stop}, {v_start}] V leaves the sampled span of {freq_hz:g} Hz")
    n_slabs = max(1, int(math.ceil((v_start - v_stop) / slab_v - 1e-9)))
    edges = np.linspace(v_stop, v_start, n_slabs + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    v_s, e_s = model.lookup(freq_hz)
    e_mid = np.interp(mids, v_s, e_s)
    d_energy = 0.5 * C * (edges[1:] ** 2 - edges[:-1] ** 2)
    total = math.fsum((d_energy / (e_mid / eta)).tolist())
    return int(math.floor(total))


def energy_table_from_rows(rows: Sequence[tuple[float, float, float]]) -> EnergyModelTable:
    """Convenience for tests: rows in (Hz, V, nJ)."""
    return EnergyModelTable.from_samples((f, v, e * NJ) for f, v, e in rows)
