"""Abstract workloads: a number of MCU cycles plus the state they keep in RAM."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["PRESETS", "Workload", "preset"]


@dataclass(frozen=True)
class Workload:
    total_cycles: int
    ram_used_bytes: int = 160
    probe_interval_cycles: int = 5000
    name: str = "custom"

    def __post_init__(self):
        if self.total_cycles <= 0:
            raise ValueError("total_cycles must be positive")
        if self.ram_used_bytes < 0 or self.probe_interval_cycles <= 0:
            raise ValueError("ram_used_bytes must be >= 0 and probe_interval_cycles > 0")


# Cycle counts are arbitrary stand-ins; only their order (dijkstra < fft < rsa) matters.
PRESETS: dict[str, Workload] = {
    "dijkstra": Workload(200_000, 160, 5000, "dijkstra"),
    "fft": Workload(800_000, 160, 5000, "fft"),
    "rsa": Workload(1_600_000, 160, 5000, "rsa"),
}


def preset(name: str) -> Workload:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown workload preset {name!r}; choose from {', '.join(PRESETS)}") from None
