"""Sizing of the comparator dividers that drive the feedback threshold controller.

The controller compares ``delta_d * V_cap`` and ``delta_c * V_cap`` against the
regulated voltage of the current window.  A downscale fires when
``v_reg > delta_d * V_cap``; an upscale fires when ``delta_c * V_cap > v_reg``.
The functions here derive feasible ratios for a window table, pick standard
resistor values, and check that an upscale can never land the capacitor inside
the discharge condition of the new window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .windows import WindowTable

__all__ = [
    "AntiBounceReport",
    "DesignError",
    "DividerDesign",
    "SwitchCostParams",
    "check_anti_bounce",
    "delta_c_upper_bound",
    "delta_d_lower_bound",
    "design_dividers",
    "divider_ratio",
    "e24_series",
    "epsilon_c_min",
    "min_cycles_for_switch",
    "pair_is_feasible",
    "pick_resistors",
]

E24_MANTISSAS = (
    1.0, 1.1, 1.2, 1.3, 1.5, 1.6, 1.8, 2.0, 2.2, 2.4, 2.7, 3.0,
    3.3, 3.6, 3.9, 4.3, 4.7, 5.1, 5.6, 6.2, 6.8, 7.5, 8.2, 9.1,
)  # fmt: skip

Side = Literal["charge", "discharge"]

# Ratios are compared with this slack so that exact designs such as 8/(2+8) = 0.8
# are not rejected over the last bit of a float division.
_RATIO_TOL = 1e-12


class DesignError(ValueError):
    pass


def e24_series(lo: float = 1e3, hi: float = 10e6) -> tuple[float, ...]:
    """E24 preferred values between ``lo`` and ``hi`` ohms inclusive."""
    values = set()
    for decade in range(0, 9):
        for m in E24_MANTISSAS:
            r = round(m * 10**decade, 6)
            if lo - 1e-9 <= r <= hi + 1e-9:
                values.add(r)
    return tuple(sorted(values))


@dataclass(frozen=True)
class SwitchCostParams:
    switch_cycles: int = 18
    p_lower: float = 1.17
    e_cc_max: float = 0.85e-9

    def __post_init__(self):
        if self.switch_cycles < 0 or self.p_lower <= 0 or self.e_cc_max <= 0:
            raise ValueError("switch cost parameters must be non-negative / positive")


def divider_ratio(ra: float, rb: float) -> float:
    """Fraction of the input seen across ``rb`` in an ``ra``-over-``rb`` divider."""
    return rb / (ra + rb)


@dataclass(frozen=True)
class DividerDesign:
    r1: float
    r2: float
    r3: float
    r4: float
    eps_c: float = 0.05
    eps_d: float = 0.0

    def __post_init__(self):
        if min(self.r1, self.r2, self.r3, self.r4) <= 0:
            raise DesignError("resistances must be positive")
        if not 0 < self.delta_c < self.delta_d < 1:
            raise DesignError(f"need 0 < delta_c ({self.delta_c:.6f}) < delta_d ({self.delta_d:.6f}) < 1")

    @property
    def delta_d(self) -> float:
        return divider_ratio(self.r1, self.r2)

    @property
    def delta_c(self) -> float:
        return divider_ratio(self.r3, self.r4)

    def downscale_voltage(self, v_reg: float) -> float:
        """Capacitor voltage below which the discharge comparator trips."""
        return v_reg / self.delta_d

    def upscale_voltage(self, v_reg: float) -> float:
        """Capacitor voltage above which the charge comparator trips."""
        return v_reg / self.delta_c


def paper_design() -> DividerDesign:
    """The MSP430G2553 divider set: 150 k / 10 M discharge, 2 M / 8 M charge."""
    return DividerDesign(150e3, 10e6, 2e6, 8e6, eps_c=0.05)


def _need_two(table: WindowTable) -> None:
    if len(table) < 2:
        raise DesignError("a single-window table has no transition to constrain")


def delta_d_lower_bound(table: WindowTable, eps_c: float) -> float:
    """Smallest discharge ratio keeping every upper window ``eps_c`` clear of its floor.

    ``max_i V_reg[i+1] / (V_min[i+1] + eps_c)`` over all adjacent pairs.
    """
    _need_two(table)
    if eps_c <= 0:
        raise DesignError("eps_c must be positive")
    return max(table[i + 1].v_reg / (table[i + 1].v_floor + eps_c) for i in range(len(table) - 1))


def delta_c_upper_bound(table: WindowTable, eps_c: float) -> float:
    """Largest charge ratio, set by the lowest transition only.

    ``V_reg[0] / (V_min[1] + eps_c)``: the lowest window's regulated voltage
    must not be exceeded before the capacitor is ``eps_c`` above the next
    floor.  Higher transitions are deliberately not included; see
    ``check_anti_bounce`` for how they are covered.
    """
    _need_two(table)
    if eps_c <= 0:
        raise DesignError("eps_c must be positive")
    return table[0].v_reg / (table[1].v_floor + eps_c)


def min_cycles_for_switch(params: SwitchCostParams) -> int:
    """Cycles an upscale must last for the faster window to repay the switch.

    From ``n * p_lower >= switch_cycles + n``.
    """
    if params.p_lower <= 1:
        raise DesignError("p_lower <= 1: an upscale never repays its switch cost")
    return int(math.ceil(params.switch_cycles / (params.p_lower - 1) - 1e-12))


def epsilon_c_min(capacitance: float, params: SwitchCostParams = SwitchCostParams()) -> float:
    """Voltage margin whose stored energy ``C eps^2 / 2`` covers the minimum run length."""
    if capacitance <= 0:
        raise DesignError("capacitance must be positive")
    n = min_cycles_for_switch(params)
    return math.sqrt(2.0 * n * params.e_cc_max / capacitance)


def pair_is_feasible(ra: float, rb: float, bound: float, side: Side) -> bool:
    ratio = divider_ratio(ra, rb)
    if side == "discharge":
        return ratio >= bound - _RATIO_TOL
    if side == "charge":
        return ratio <= bound + _RATIO_TOL
    raise ValueError(f"unknown side {side!r}")


def pick_resistors(delta_target: float, side: Side, series: Sequence[float] | None = None) -> tuple[float, float]:
    """Choose ``(Ra, Rb)`` from ``series`` whose ratio meets the bound most tightly.

    Discharge dividers need ``Rb/(Ra+Rb) >= delta_target``, charge dividers
    ``<=``.  Among equally tight pairs the largest total resistance wins, which
    minimises the divider's standing current.
    """
    if not 0 < delta_target < 1:
        raise DesignError("target ratio must lie in (0, 1)")
    values = np.asarray(series if series is not None else e24_series(), dtype=float)
    if side not in ("charge", "discharge"):
        raise ValueError(f"unknown side {side!r}")
    # Every ordered (Ra, Rb) pair, Ra-major like itertools.product.
    ra = np.repeat(values, len(values))
    rb = np.tile(values, len(values))
    ratio = rb / (ra + rb)
    ok = ratio >= delta_target - _RATIO_TOL if side == "discharge" else ratio <= delta_target + _RATIO_TOL
    if not ok.any():
        raise DesignError(f"no {side} pair in the series meets ratio {delta_target}")
    idx = np.flatnonzero(ok)
    # Round the margin so mathematically equal ratios tie regardless of float noise.
    margin = np.round(np.abs(ratio[idx] - delta_target), 12)
    # lexsort is stable: ties on margin and total keep series order.
    best = idx[np.lexsort((-(ra[idx] + rb[idx]), margin))[0]]
    return float(ra[best]), float(rb[best])


@dataclass(frozen=True)
class AntiBounceReport:
    ok: bool
    violations: list[tuple[int, float]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def check_anti_bounce(
    table: WindowTable,
    design: DividerDesign,
    *,
    step_v: float = 1e-3,
    strict: bool = False,
) -> AntiBounceReport:
    """Check that an upscale out of window ``i`` never lands inside window ``i+1``'s discharge condition.

    For each transition the capacitor voltage is swept in ``step_v`` steps and
    every point where the charge condition ``delta_c V > V_reg[i]`` holds must
    also satisfy ``delta_d V >= V_reg[i+1]``.

    By default the sweep starts at ``V_min[i+1] + eps_c``, the region the
    divider bounds are derived for.  ``strict=True`` sweeps the whole table
    span, which also exposes charge thresholds sitting below the next window's
    discharge threshold (the MSP430 reference design has one at 8 -> 12 MHz;
    the emulator gates such upscales, see ``policies.fbtc_upscale_voltage``).

    Returns
    -------
    AntiBounceReport
        ``violations`` lists ``(i, V_witness)`` with the lowest witness per window.
    """
    violations: list[tuple[int, float]] = []
    top = table.v_max
    for i in range(len(table) - 1):
        start = table.v_min if strict else table[i + 1].v_floor + design.eps_c
        n = int(math.floor((top - start) / step_v + 1e-9))
        v = start + step_v * np.arange(n + 1)
        # A ratio picked exactly on its bound sits on the boundary; allow rounding there.
        bad = (design.delta_c * v > table[i].v_reg) & (design.delta_d * v < table[i + 1].v_reg - 1e-12)
        if bad.any():
            violations.append((i, float(v[np.argmax(bad)])))
    return AntiBounceReport(not violations, violations)


def design_dividers(
    table: WindowTable,
    eps_c: float,
    series: Sequence[float] | None = None,
) -> DividerDesign:
    """Bounds, then resistor picks, for a whole table."""
    d_lo = delta_d_lower_bound(table, eps_c)
    c_hi = delta_c_upper_bound(table, eps_c)
    r1, r2 = pick_resistors(d_lo, "discharge", series)
    r3, r4 = pick_resistors(c_hi, "charge", series)
    return DividerDesign(r1, r2, r3, r4, eps_c=eps_c)
