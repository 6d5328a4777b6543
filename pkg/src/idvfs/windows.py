"""Performance windows: frequency/voltage operating points keyed on capacitor voltage.

A window is a half-open voltage span ``[v_floor, v_ceiling)`` in which the MCU
can run at ``freq_hz`` when supplied with ``v_reg``.  The topmost window also
includes its ceiling so that a fully charged capacitor maps to it.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "PerformanceWindow",
    "WindowTable",
    "WindowTableError",
    "msp430g2553_windows",
    "validate_table",
    "window_for_voltage",
]

# Tolerance used when comparing neighbouring window edges.
_EDGE_TOL = 1e-9


class WindowTableError(ValueError):
    """Raised when a window table violates an ordering or contiguity rule."""


@dataclass(frozen=True)
class PerformanceWindow:
    freq_hz: float
    v_reg: float
    v_floor: float
    v_ceiling: float

    def contains(self, v: float, *, top: bool = False) -> bool:
        if top:
            return self.v_floor <= v <= self.v_ceiling
        return self.v_floor <= v < self.v_ceiling


@dataclass(frozen=True)
class WindowTable:
    """Ordered, validated sequence of windows (lowest voltage first)."""

    windows: tuple[PerformanceWindow, ...]

    def __post_init__(self):
        validate_table(self.windows)

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]]) -> "WindowTable":
        """Build from ``(freq_hz, v_reg, v_floor, v_ceiling)`` tuples."""
        return cls(tuple(PerformanceWindow(*map(float, r)) for r in rows))

    def __len__(self) -> int:
        return len(self.windows)

    def __getitem__(self, i: int) -> PerformanceWindow:
        return self.windows[i]

    def __iter__(self):
        return iter(self.windows)

    @property
    def top(self) -> int:
        return len(self.windows) - 1

    @property
    def v_min(self) -> float:
        return self.windows[0].v_floor

    @property
    def v_max(self) -> float:
        return self.windows[-1].v_ceiling

    def index_of_freq(self, freq_hz: float) -> int:
        for i, w in enumerate(self.windows):
            if abs(w.freq_hz - freq_hz) <= 1e-6 * max(1.0, freq_hz):
                return i
        raise KeyError(f"no window runs at {freq_hz:g} Hz")

    def to_rows(self) -> list[list[float]]:
        return [[w.freq_hz, w.v_reg, w.v_floor, w.v_ceiling] for w in self.windows]


def validate_table(windows: Sequence[PerformanceWindow]) -> None:
    """Check ordering, contiguity and regulator placement of a window table.

    Raises
    ------
    WindowTableError
        Naming the offending window index.
    """
    if not windows:
        raise WindowTableError("window table is empty")
    for i, w in enumerate(windows):
        if not w.v_floor < w.v_ceiling:
            raise WindowTableError(f"window {i}: v_floor {w.v_floor} must be below v_ceiling {w.v_ceiling}")
        if w.freq_hz <= 0:
            raise WindowTableError(f"window {i}: frequency must be positive")
        if abs(w.v_reg - w.v_floor) > _EDGE_TOL:
            raise WindowTableError(f"window {i}: v_reg {w.v_reg} must equal v_floor {w.v_floor}")
        if i == 0:
            continue
        prev = windows[i - 1]
        if w.freq_hz <= prev.freq_hz:
            raise WindowTableError(f"window {i}: frequency not above window {i - 1}")
        if w.v_reg <= prev.v_reg:
            raise WindowTableError(f"window {i}: v_reg not above window {i - 1}")
        if abs(w.v_floor - prev.v_ceiling) > _EDGE_TOL:
            gap = "gap" if w.v_floor > prev.v_ceiling else "overlap"
            raise WindowTableError(f"window {i}: {gap} with window {i - 1} ({prev.v_ceiling} vs {w.v_floor})")


def window_for_voltage(table: WindowTable, v: float) -> int | None:
    """Index of the window whose span contains ``v``; ``None`` below the lowest floor.

    Voltages at or above the top ceiling map to the top window.
    """
    if v < table.windows[0].v_floor:
        return None
    floors = [w.v_floor for w in table.windows]
    return bisect.bisect_right(floors, v) - 1


def msp430g2553_windows() -> WindowTable:
    """The four operating points of the MSP430G2553 between 1.8 V and 3.6 V."""
    return WindowTable.from_rows(
        [
            (1e6, 1.8, 1.8, 2.2),
            (8e6, 2.2, 2.2, 2.8),
            (12e6, 2.8, 2.8, 3.3),
            (16e6, 3.3, 3.3, 3.6),
        ]
    )
