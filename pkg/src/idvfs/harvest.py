"""Energy sources and the charging network between source and capacitor."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "ChargeResult",
    "ChargingNetwork",
    "SourceTrace",
    "bundled_trace",
    "charge_step",
    "constant_trace",
    "load_trace_csv",
    "source_voltage",
    "synthetic_poor_source",
]

POOR_SOURCE_VOLTS = 5.0


@dataclass(frozen=True)
class SourceTrace:
    t: np.ndarray
    v: np.ndarray
    looped: bool = False

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("trace times and voltages must be equal-length vectors")
        if len(t) == 0:
            raise ValueError("empty trace")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("trace voltages must be non-negative")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


def source_voltage(trace: SourceTrace, t: float) -> float:
    """Linear interpolation; looped traces wrap, finished ones read 0 V."""
    if t < 0:
        raise ValueError("time must be non-negative")
    t0 = trace.t[0]
    if trace.looped and trace.duration > 0 and t > trace.t[-1]:
        t = t0 + math.fmod(t - t0, trace.duration)
    elif t > trace.t[-1]:
        return 0.0
    return float(np.interp(t, trace.t, trace.v))


def constant_trace(volts: float) -> SourceTrace:
    return SourceTrace(np.array([0.0, 1.0]), np.array([volts, volts]), looped=True)


def load_trace_csv(path: str | Path, looped: bool = False) -> SourceTrace:
    """Read a ``t_s,v_src`` CSV."""
    with open(path, newline="") as fh:
        return _parse_trace(fh.read(), str(path), looped)


def bundled_trace(name: str, looped: bool = True) -> SourceTrace:
    text = resources.files("idvfs.data").joinpath(name).read_text()
    return _parse_trace(text, name, looped)


def _parse_trace(text: str, source: str, looped: bool) -> SourceTrace:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != ["t_s", "v_src"]:
        raise ValueError(f"{source}: header must be t_s,v_src")
    ts, vs = [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            ts.append(float(row[0]))
            vs.append(float(row[1]))
        except (IndexError, ValueError):
            raise ValueError(f"{source}: bad row {lineno}: {row}") from None
    return SourceTrace(np.array(ts), np.array(vs), looped)


def synthetic_poor_source(device_powered: bool) -> float:
    """5 V only while the device is off."""
    return 0.0 if device_powered else POOR_SOURCE_VOLTS


@dataclass(frozen=True)
class ChargingNetwork:
    r_series: float = 1e3
    doubler: bool = False
    doubler_gain: float = 2.0
    doubler_efficiency: float = 0.7

    def __post_init__(self):
        if self.r_series <= 0:
            raise ValueError("r_series must be positive")
        if not 0 < self.doubler_efficiency <= 1:
            raise ValueError("doubler efficiency must lie in (0, 1]")

    @property
    def gain(self) -> float:
        return self.doubler_gain if self.doubler else 1.0

    @property
    def efficiency(self) -> float:
        return self.doubler_efficiency if self.doubler else 1.0


@dataclass(frozen=True)
class ChargeResult:
    v_cap: float
    delivered_j: float
    source_j: float


def charge_step(net: ChargingNetwork, v_src: float, v_cap: float, capacitance: float, dt: float, rating: float = 3.6) -> ChargeResult:
    """One RC step through an ideal diode.

    The undamped RC target is ``v_eff + (v_cap - v_eff) exp(-dt / RC)``, clipped
    at the capacitor rating.  With the doubler only ``eta_d`` of that energy
    reaches the capacitor.  ``source_j`` is the charge moved times ``v_eff``.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    v_eff = net.gain * v_src
    if v_eff <= v_cap or dt == 0 or v_cap >= rating:
        return ChargeResult(v_cap, 0.0, 0.0)
    v_rc = v_eff + (v_cap - v_eff) * math.exp(-dt / (net.r_series * capacitance))
    v_rc = min(v_rc, rating)
    raw = 0.5 * capacitance * (v_rc * v_rc - v_cap * v_cap)
    delivered = raw * net.efficiency
    source = capacitance * v_eff * (v_rc - v_cap)
    v_new = math.sqrt(v_cap * v_cap + 2.0 * delivered / capacitance)
    return ChargeResult(v_new, delivered, source)
