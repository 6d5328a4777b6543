"""Save/restore cost of a serial FRAM reached over a slow bus.

The bus, not the core, sets the transfer time, so the core simply stalls for
``time * f`` cycles while the transfer runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["NvmCapacityError", "NvmModel", "TransferCost", "restore_cost", "save_cost"]

# FRAM active current ~200 uA at 3.3 V while the 1 MHz bus clocks 9 bits per byte:
# 200e-6 * 3.3 * 9e-6 = 5.94 nJ per byte moved.
_FRAM_NJ_PER_BYTE = 5.94e-9


class NvmCapacityError(ValueError):
    pass


@dataclass(frozen=True)
class NvmModel:
    capacity_bytes: int = 8192
    bus_clock: float = 1e6
    bus_cycles_per_byte: int = 9
    transaction_overhead_bytes: int = 3
    write_energy_per_byte: float = _FRAM_NJ_PER_BYTE
    read_energy_per_byte: float = _FRAM_NJ_PER_BYTE
    # The FRAM is power-gated between transactions unless this is set.
    standby_current: float = 0.0

    def __post_init__(self):
        if self.capacity_bytes <= 0 or self.bus_clock <= 0 or self.bus_cycles_per_byte <= 0:
            raise ValueError("NVM capacity and bus rates must be positive")
        if self.transaction_overhead_bytes < 0 or self.standby_current < 0:
            raise ValueError("NVM overhead and standby current must be non-negative")
        if self.write_energy_per_byte <= 0 or self.read_energy_per_byte <= 0:
            raise ValueError("NVM energy per byte must be positive")


@dataclass(frozen=True)
class TransferCost:
    time_s: float
    stall_cycles: int
    energy_j: float


def _transfer(model: NvmModel, n_bytes: int, freq_hz: float, energy_per_byte: float) -> TransferCost:
    if n_bytes < 0:
        raise ValueError("byte count must be non-negative")
    if n_bytes > model.capacity_bytes:
        raise NvmCapacityError(f"{n_bytes} bytes exceed the {model.capacity_bytes}-byte NVM")
    moved = n_bytes + model.transaction_overhead_bytes
    time_s = moved * model.bus_cycles_per_byte / model.bus_clock
    # Data bytes plus the addressing bytes driven on the bus.
    energy = moved * energy_per_byte
    stall = int(math.ceil(time_s * freq_hz - 1e-9))
    return TransferCost(time_s, stall, energy)


def save_cost(model: NvmModel, n_bytes: int, freq_hz: float = 1e6) -> TransferCost:
    return _transfer(model, n_bytes, freq_hz, model.write_energy_per_byte)


def restore_cost(model: NvmModel, n_bytes: int, freq_hz: float = 1e6) -> TransferCost:
    return _transfer(model, n_bytes, freq_hz, model.read_energy_per_byte)
