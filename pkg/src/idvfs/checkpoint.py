"""Forward-progress schemes: interrupt-driven save with hibernation, and probe-driven save.

``hibernus`` saves once when the capacitor falls through ``v_save`` and then
waits in a low-power mode; ``mementos`` checks the capacitor at probe sites
and saves when it looks low.  ``none`` keeps no state across power loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, Sequence

from .windows import WindowTable

if TYPE_CHECKING:  # pragma: no cover
    from .emulator.config import ExperimentConfig
    from .emulator.workload import Workload

__all__ = [
    "CheckpointConfig",
    "StateFootprint",
    "device_floor",
    "hibernus_on_voltage",
    "mementos_probe",
    "tune_v_save",
    "v_save_for_budget",
]

Scheme = Literal["hibernus", "mementos", "none"]
AdcMode = Literal["default", "no_adc_off", "two_v_min"]

MSP430G2553_RAM_BYTES = 512
# Below this the ADC reference is unreliable, so the default probe mode saves
# at every probe and the two-threshold mode shuts the device down.
ADC_FLOOR_V = 2.2


@dataclass(frozen=True)
class StateFootprint:
    registers_bytes: int = 32
    ram_used_bytes: int = 160

    def __post_init__(self):
        if self.registers_bytes < 0 or self.ram_used_bytes < 0:
            raise ValueError("footprint sizes must be non-negative")
        if self.ram_used_bytes > MSP430G2553_RAM_BYTES:
            raise ValueError("footprint exceeds device RAM")

    @property
    def total(self) -> int:
        return self.registers_bytes + self.ram_used_bytes


@dataclass(frozen=True)
class CheckpointConfig:
    scheme: Scheme = "hibernus"
    # None selects the smallest threshold that leaves room for one save.
    v_save: float | None = None
    footprint: StateFootprint = field(default_factory=StateFootprint)
    adc_mode: AdcMode = "default"
    t_adc: float = 30e-6
    compare_overhead_cycles: int = 10
    i_hibernate: float = 0.5e-6
    resume_margin: float = 0.1
    # Energy headroom factor applied when v_save is derived automatically.
    save_margin: float = 1.25

    def __post_init__(self):
        if self.scheme not in ("hibernus", "mementos", "none"):
            raise ValueError(f"unknown checkpoint scheme {self.scheme!r}")
        if self.adc_mode not in ("default", "no_adc_off", "two_v_min"):
            raise ValueError(f"unknown ADC mode {self.adc_mode!r}")
        if self.t_adc <= 0:
            raise ValueError("t_adc must be positive")
        if self.compare_overhead_cycles < 0 or self.i_hibernate < 0 or self.resume_margin < 0:
            raise ValueError("probe overhead, hibernation current and resume margin must be non-negative")
        if self.save_margin < 1:
            raise ValueError("save_margin must be at least 1")


def hibernus_on_voltage(
    cfg: CheckpointConfig,
    v_cap: float,
    powered_state: Literal["active", "hibernating", "off", "booting"],
    v_prev: float | None = None,
    v_save: float | None = None,
) -> str:
    """Action the interrupt-driven scheme takes at this voltage.

    ``v_prev`` turns the active-state test into a crossing test; without it the
    level ``v_cap < v_save`` is used.
    """
    thr = cfg.v_save if v_save is None else v_save
    if thr is None:
        raise ValueError("v_save is not resolved")
    if powered_state == "active":
        below = v_cap < thr
        if v_prev is not None:
            below = below and v_prev >= thr
        return "save_then_hibernate" if below else "none"
    if powered_state == "hibernating":
        return "resume" if v_cap >= thr + cfg.resume_margin else "none"
    if powered_state == "booting":
        return "restore_on_boot"
    return "none"


def mementos_probe(cfg: CheckpointConfig, v_cap: float, freq_hz: float, v_save: float | None = None) -> tuple[int, str]:
    """Cycles spent sampling the capacitor, and whether to save."""
    thr = cfg.v_save if v_save is None else v_save
    if thr is None:
        raise ValueError("v_save is not resolved")
    cost = int(math.ceil(cfg.t_adc * freq_hz - 1e-9)) + cfg.compare_overhead_cycles
    save = v_cap < thr or (cfg.adc_mode == "default" and v_cap < ADC_FLOOR_V)
    return cost, "save" if save else "none"


def device_floor(cfg: CheckpointConfig, table: WindowTable, policy_kind: str, fixed_freq: float | None = None) -> float:
    """Capacitor voltage at which the device shuts down."""
    if policy_kind == "static":
        if fixed_freq is None:
            raise ValueError("static policy needs fixed_freq")
        floor = table[table.index_of_freq(fixed_freq)].v_floor
    else:
        floor = table.v_min
    if cfg.scheme == "mementos" and cfg.adc_mode == "two_v_min":
        floor = max(floor, ADC_FLOOR_V)
    return floor


def v_save_for_budget(floor: float, capacitance: float, energy_j: float) -> float:
    """Voltage holding ``energy_j`` above ``floor``."""
    return math.sqrt(floor * floor + 2.0 * energy_j / capacitance)


def tune_v_save(config: "ExperimentConfig", workload: "Workload", grid: Sequence[float]) -> float:
    """Grid search for the save threshold with the lowest total energy.

    Ties go to the lower threshold.  Raises ``RuntimeError`` when no candidate
    completes the workload.
    """
    from .emulator import NonTermination, run, with_overrides

    best: tuple[float, float] | None = None
    for v in sorted(grid):
        cfg = with_overrides(config, {"checkpoint.v_save": v})
        try:
            result = run(cfg, workload)
        except NonTermination:
            continue
        if not result.metrics.completed:
            continue
        e = result.metrics.energy_total_j
        if best is None or e < best[1]:
            best = (v, e)
    if best is None:
        raise RuntimeError("no v_save candidate completes the workload")
    return best[0]
