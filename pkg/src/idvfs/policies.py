"""Governors that pick the performance window: static, D2VFS and FBTC.

Every step function mutates a ``PolicyState`` and returns the actuation events
it produced (they are also appended to ``state.event_log``).  Ordering rules:

* downscale: ``SetFrequency`` (lower f) before ``SetRegulator`` (lower V), so
  the core is never faster than its supply allows;
* upscale: ``SetRegulator`` before ``SetFrequency``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence, TextIO

from .design_fbtc import DividerDesign
from .windows import WindowTable, window_for_voltage

__all__ = [
    "ActuationEvent",
    "CircuitryComponent",
    "CircuitryProfile",
    "PolicyError",
    "PolicyState",
    "circuitry_drain",
    "d2vfs_boot",
    "d2vfs_profile",
    "d2vfs_step",
    "events_to_csv",
    "fbtc_profile",
    "fbtc_step",
    "fbtc_upscale_voltage",
    "hibernus_profile",
    "power_state_step",
    "static_step",
]

PolicyKind = Literal["static", "d2vfs", "fbtc"]

SET_FREQUENCY = "SetFrequency"
SET_REGULATOR = "SetRegulator"
POWER_ON = "PowerOn"
POWER_OFF = "PowerOff"
INTERRUPT = "InterruptFired"


class PolicyError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActuationEvent:
    at: float
    action: str
    value: float | str | None = None
    cycle: int = 0


@dataclass
class PolicyState:
    kind: PolicyKind
    current_window: int | None = None
    powered: bool = False
    pending_upscale: bool = False
    discharge_irq_enabled: bool = False
    # D2VFS window-detector latch: the window the hardware last reported.
    detected_window: int | None = None
    event_log: list[ActuationEvent] = field(default_factory=list)

    def _emit(self, out: list[ActuationEvent], t: float, cycle: int, action: str, value=None) -> None:
        ev = ActuationEvent(t, action, value, cycle)
        out.append(ev)
        self.event_log.append(ev)


def _downscale(state: PolicyState, table: WindowTable, target: int, t: float, cycle: int, out) -> None:
    state._emit(out, t, cycle, SET_FREQUENCY, table[target].freq_hz)
    state._emit(out, t, cycle, SET_REGULATOR, table[target].v_reg)
    state.current_window = target


def _upscale(state: PolicyState, table: WindowTable, target: int, t: float, cycle: int, out) -> None:
    state._emit(out, t, cycle, SET_REGULATOR, table[target].v_reg)
    state._emit(out, t, cycle, SET_FREQUENCY, table[target].freq_hz)
    state.current_window = target


# ---------------------------------------------------------------------------
# power latch and static governor


def power_state_step(state: PolicyState, v_cap: float, v_on: float, v_min: float, t: float = 0.0, cycle: int = 0):
    """Set/reset latch: on at ``v_on`` while off, off below ``v_min`` while on."""
    if not v_min < v_on:
        raise ValueError("v_min must be below v_on")
    out: list[ActuationEvent] = []
    if not state.powered and v_cap >= v_on:
        state.powered = True
        state._emit(out, t, cycle, POWER_ON)
    elif state.powered and v_cap < v_min:
        state.powered = False
        state.current_window = None
        state._emit(out, t, cycle, POWER_OFF)
    return out


def static_step(state: PolicyState, v_cap: float, table: WindowTable, fixed_freq: float, t: float = 0.0, cycle: int = 0):
    """Fixed window, unregulated supply: power off once ``v_cap`` drops below the window floor."""
    idx = table.index_of_freq(fixed_freq)
    out: list[ActuationEvent] = []
    if state.powered:
        if state.current_window is None:
            state.current_window = idx
        if v_cap < table[idx].v_floor:
            state.powered = False
            state.current_window = None
            state._emit(out, t, cycle, POWER_OFF)
    return out


# ---------------------------------------------------------------------------
# D2VFS


def d2vfs_boot(state: PolicyState, v_cap: float, table: WindowTable, t: float = 0.0, cycle: int = 0):
    """Power-up: the core starts in the lowest window and the driver jumps to the detected one."""
    out: list[ActuationEvent] = []
    state.current_window = 0
    state.pending_upscale = False
    detected = window_for_voltage(table, v_cap)
    state.detected_window = 0 if detected is None else detected
    if state.detected_window > 0:
        state._emit(out, t, cycle, INTERRUPT, "boot")
        _upscale(state, table, state.detected_window, t, cycle, out)
    return out


def d2vfs_step(
    state: PolicyState,
    table: WindowTable,
    boundary: int,
    direction: Literal["down", "up"],
    t: float = 0.0,
    cycle: int = 0,
):
    """Handle one window-boundary crossing reported by the detector.

    ``boundary`` is the index of the upper window at the crossed edge, i.e. the
    crossing happens at ``table[boundary].v_floor``.

    Downward: the core drops to the newly detected window at once.  Upward: the
    core moves only to the window *below* the newly detected one, so the first
    upward crossing after a discharge never actuates and the core keeps one
    window of headroom while charging (``pending_upscale`` marks that lag).
    """
    if state.kind != "d2vfs":
        raise PolicyError("d2vfs_step on a non-d2vfs state")
    if not 1 <= boundary < len(table):
        raise PolicyError(f"no boundary at index {boundary}")
    out: list[ActuationEvent] = []
    if direction == "down":
        if state.detected_window != boundary:
            raise PolicyError(f"downward crossing at boundary {boundary} while detector reports {state.detected_window}")
        state.detected_window = boundary - 1
        state._emit(out, t, cycle, INTERRUPT, "down")
        if state.current_window is not None and state.current_window > state.detected_window:
            _downscale(state, table, state.detected_window, t, cycle, out)
    elif direction == "up":
        if state.detected_window != boundary - 1:
            raise PolicyError(f"upward crossing at boundary {boundary} while detector reports {state.detected_window}")
        state.detected_window = boundary
        state._emit(out, t, cycle, INTERRUPT, "up")
        target = boundary - 1
        if state.current_window is not None and state.current_window < target:
            _upscale(state, table, target, t, cycle, out)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    state.pending_upscale = state.current_window is not None and state.current_window < state.detected_window
    return out


# ---------------------------------------------------------------------------
# FBTC


def fbtc_upscale_voltage(
    table: WindowTable,
    design: DividerDesign,
    window: int,
    capacitance: float | None = None,
    min_run_energy: float = 0.0,
) -> float:
    """Capacitor voltage at which an upscale out of ``window`` is taken.

    The charge comparator trips at ``v_reg / delta_c``.  The move is also held
    until the target window's discharge comparator would stay quiet with
    ``min_run_energy`` to spare, so an upscale is never undone immediately.
    """
    charge = design.upscale_voltage(table[window].v_reg)
    if window >= len(table) - 1:
        return math.inf
    target_down = design.downscale_voltage(table[window + 1].v_reg)
    if capacitance is not None and min_run_energy > 0:
        target_down = math.sqrt(target_down**2 + 2.0 * min_run_energy / capacitance)
    return max(charge, target_down)


def fbtc_step(
    state: PolicyState,
    v_cap: float,
    table: WindowTable,
    design: DividerDesign,
    t: float = 0.0,
    cycle: int = 0,
    capacitance: float | None = None,
    min_run_energy: float | Sequence[float] = 0.0,
):
    """Evaluate both comparators once and move at most one window.

    ``min_run_energy`` may be given per target window.
    """
    if state.kind != "fbtc":
        raise PolicyError("fbtc_step on a non-fbtc state")
    out: list[ActuationEvent] = []
    cur = state.current_window
    if not state.powered or cur is None:
        return out
    v_reg = table[cur].v_reg
    if cur > 0 and state.discharge_irq_enabled and v_cap < design.downscale_voltage(v_reg):
        state._emit(out, t, cycle, INTERRUPT, "discharge")
        _downscale(state, table, cur - 1, t, cycle, out)
        if cur - 1 == 0:
            state.discharge_irq_enabled = False
    elif cur < len(table) - 1 and v_cap > fbtc_upscale_voltage(
        table, design, cur, capacitance, min_run_energy if isinstance(min_run_energy, (int, float)) else min_run_energy[cur + 1]
    ):
        state._emit(out, t, cycle, INTERRUPT, "charge")
        _upscale(state, table, cur + 1, t, cycle, out)
        state.discharge_irq_enabled = True
    return out


# ---------------------------------------------------------------------------
# quiescent circuitry


@dataclass(frozen=True)
class CircuitryComponent:
    """A standing load: a fixed current, a resistive divider, or both."""

    name: str
    current: float = 0.0
    resistance: float | None = None
    active: Literal["always", "only-when-on"] = "always"

    def __post_init__(self):
        if self.current < 0 or (self.resistance is not None and self.resistance <= 0):
            raise ValueError(f"{self.name}: currents must be >= 0 and resistances > 0")


@dataclass(frozen=True)
class CircuitryProfile:
    components: tuple[CircuitryComponent, ...] = ()

    def __add__(self, other: "CircuitryProfile") -> "CircuitryProfile":
        return CircuitryProfile(self.components + other.components)

    def active(self, powered: bool) -> list[CircuitryComponent]:
        return [c for c in self.components if c.active == "always" or powered]

    def coefficients(self, powered: bool) -> tuple[float, float]:
        """``(I, G)`` such that the standing power is ``I*V + G*V**2``."""
        i_sum = math.fsum(c.current for c in self.active(powered))
        g_sum = math.fsum(1.0 / c.resistance for c in self.active(powered) if c.resistance)
        return i_sum, g_sum


def circuitry_drain(profile: CircuitryProfile, v_cap: float, dt: float, powered: bool = True) -> float:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    i_sum, g_sum = profile.coefficients(powered)
    return (i_sum * v_cap + g_sum * v_cap * v_cap) * dt


# Datasheet typical supply currents used for the bundled profiles.
_DETECTOR_A = 0.95e-6  # nano-power voltage detector
_GATE_A = 0.5e-6  # single low-power logic gate
_OPAMP_A = 0.22e-6  # nano-power op-amp used as comparator
_FLIPFLOP_A = 20e-6  # quad D flip-flop
_MAG_COMPARATOR_A = 4e-6  # 4-bit magnitude comparator


def d2vfs_profile() -> CircuitryProfile:
    parts = [CircuitryComponent(f"detector_{i}", _DETECTOR_A) for i in range(4)]
    parts += [
        CircuitryComponent("flip_flop", _FLIPFLOP_A),
        CircuitryComponent("comparator_4bit", _MAG_COMPARATOR_A),
        CircuitryComponent("and_gate", _GATE_A),
    ]
    return CircuitryProfile(tuple(parts))


def fbtc_profile(design: DividerDesign) -> CircuitryProfile:
    return CircuitryProfile(
        (
            CircuitryComponent("on_detector", _DETECTOR_A),
            CircuitryComponent("min_detector", _DETECTOR_A),
            CircuitryComponent("not_gate", _GATE_A),
            CircuitryComponent("nor_gates", _GATE_A),
            CircuitryComponent("charge_opamp", _OPAMP_A),
            CircuitryComponent("discharge_opamp", _OPAMP_A),
            CircuitryComponent("discharge_divider", resistance=design.r1 + design.r2),
            CircuitryComponent("charge_divider", resistance=design.r3 + design.r4),
        )
    )


def hibernus_profile(divider_ohms: float = 200e3) -> CircuitryProfile:
    return CircuitryProfile((CircuitryComponent("hibernus_divider", resistance=divider_ohms),))


# ---------------------------------------------------------------------------
# event log output


def events_to_csv(events: Iterable[ActuationEvent], fh: TextIO | None = None) -> str:
    """Write ``time_s,cycle,action,value`` rows; returns the text when ``fh`` is None."""
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "cycle", "action", "value"])
    for ev in events:
        w.writerow([repr(float(ev.at)), ev.cycle, ev.action, "" if ev.value is None else ev.value])
    return buf.getvalue() if fh is None else ""
