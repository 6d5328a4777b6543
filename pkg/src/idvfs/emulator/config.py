"""Experiment configuration: flat ``section.key = value`` text or the equivalent JSON.

Every key has a default except ``energy_model.path``.  Numbers accept SI
prefixes (``100u``, ``100µF``, ``50m``, ``1.5k``, ``16MHz``).  Window rows are
written ``windows.<i> = freq, v_reg, v_floor, v_ceiling``.

Relative paths are resolved against the config file's directory first and the
bundled data directory second, so bundled configs can name bundled files.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..checkpoint import CheckpointConfig, StateFootprint, device_floor
from ..design_fbtc import DividerDesign, design_dividers, e24_series
from ..energy_model import EnergyModelError, EnergyModelTable, Regulator, load_energy_table
from ..harvest import ChargingNetwork, SourceTrace, constant_trace, load_trace_csv
from ..nvm import NvmModel
from ..windows import WindowTable, WindowTableError, msp430g2553_windows
from .workload import Workload, preset

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "bundled_config_path",
    "parse_config",
    "parse_config_text",
    "parse_quantity",
    "with_overrides",
]

SCHEMA_VERSION = 1

_REQUIRED = object()

# key -> (kind, default)
SCHEMA: dict[str, tuple[str, Any]] = {
    "energy_model.path": ("path", _REQUIRED),
    "capacitor.farads": ("float", 100e-6),
    "capacitor.rating": ("float", 3.6),
    "capacitor.v_initial": ("float?", None),
    "regulator.efficiency": ("float", 0.9),
    "v_boot": ("float", 3.6),
    "policy.kind": ("str", "fbtc"),
    "policy.fixed_freq": ("float?", None),
    "policy.switch_cycles": ("int", 18),
    "policy.p_lower": ("float", 1.17),
    "fbtc.design": ("str", "fixed"),
    "fbtc.r1": ("float", 150e3),
    "fbtc.r2": ("float", 10e6),
    "fbtc.r3": ("float", 2e6),
    "fbtc.r4": ("float", 8e6),
    "fbtc.eps_c": ("float", 0.05),
    "circuitry.enabled": ("bool", True),
    "checkpoint.scheme": ("str", "hibernus"),
    "checkpoint.v_save": ("float|auto", "auto"),
    "checkpoint.registers_bytes": ("int", 32),
    "checkpoint.adc_mode": ("str", "default"),
    "checkpoint.t_adc": ("float", 30e-6),
    "checkpoint.compare_overhead_cycles": ("int", 10),
    "checkpoint.i_hibernate": ("float", 0.5e-6),
    "checkpoint.resume_margin": ("float", 0.1),
    "checkpoint.save_margin": ("float", 1.25),
    "checkpoint.hibernus_divider_ohms": ("float", 200e3),
    "nvm.capacity_bytes": ("int", 8192),
    "nvm.bus_clock": ("float", 1e6),
    "nvm.bus_cycles_per_byte": ("int", 9),
    "nvm.transaction_overhead_bytes": ("int", 3),
    "nvm.write_energy_per_byte": ("float", 5.94e-9),
    "nvm.read_energy_per_byte": ("float", 5.94e-9),
    "nvm.standby_current": ("float", 0.0),
    "source.kind": ("str", "synthetic_poor"),
    "source.path": ("path?", None),
    "source.loop": ("bool", True),
    "source.voltage": ("float", 3.6),
    "charging.r_series": ("float", 1e3),
    "charging.doubler": ("bool", False),
    "charging.doubler_gain": ("float", 2.0),
    "charging.doubler_efficiency": ("float", 0.7),
    "workload.preset": ("str?", "dijkstra"),
    "workload.total_cycles": ("int?", None),
    "workload.ram_used_bytes": ("int?", None),
    "workload.probe_interval_cycles": ("int?", None),
    "sim.dt_max": ("float", 1e-3),
    "sim.crossing_tol": ("float", 1e-6),
    "sim.max_time_s": ("float", 3600.0),
    "sim.stall_limit": ("int", 3),
    "sim.max_failures": ("int?", None),
    "sim.seed": ("int", 0),
}

_PREFIX = {"p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "μ": 1e-6, "m": 1e-3, "k": 1e3, "M": 1e6, "G": 1e9}
_QUANTITY = re.compile(
    r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([pnuµμmkMG])?\s*(Hz|F|V|A|J|s|W|Ω|ohm|Ohm|B)?\s*$"
)


class ConfigError(ValueError):
    """Configuration problem; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


def parse_quantity(text: Any) -> float:
    """Parse a number with an optional SI prefix and unit (``'100µF'`` -> 1e-4)."""
    if isinstance(text, bool):
        raise ValueError("boolean is not a number")
    if isinstance(text, (int, float)):
        return float(text)
    m = _QUANTITY.match(str(text))
    if not m:
        raise ValueError(f"not a number: {text!r}")
    value = float(m.group(1))
    if m.group(2):
        value *= _PREFIX[m.group(2)]
    return value


def _coerce(kind: str, raw: Any, key: str) -> Any:
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if optional and (raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "null"))):
        return None
    try:
        if base == "float":
            return parse_quantity(raw)
        if base == "int":
            v = parse_quantity(raw)
            if v != int(v):
                raise ValueError(f"{raw!r} is not an integer")
            return int(v)
        if base == "bool":
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("true", "yes", "on", "1"):
                return True
            if s in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if base == "float|auto":
            if isinstance(raw, str) and raw.strip().lower() == "auto":
                return "auto"
            return parse_quantity(raw)
        if base in ("str", "path"):
            return str(raw).strip()
    except ValueError as exc:
        raise ConfigError(str(exc), key) from None
    raise ConfigError(f"unknown kind {kind}", key)


def _flatten(obj: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if key == "windows" and isinstance(v, list):
            for i, row in enumerate(v):
                out[f"windows.{i}"] = row
        elif isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _read_flat_text(text: str) -> tuple[dict[str, Any], dict[str, int]]:
    flat: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (p.strip() for p in body.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in flat:
            raise ConfigError("duplicate key", key, lineno)
        flat[key] = value
        lines[key] = lineno
    return flat, lines


def _resolve_path(value: str, base_dir: Path | None) -> Path:
    p = Path(value)
    if p.is_absolute():
        return p
    if base_dir is not None and (base_dir / p).exists():
        return base_dir / p
    bundled = resources.files("idvfs.data").joinpath(value)
    if bundled.is_file():
        return Path(str(bundled))
    return (base_dir or Path.cwd()) / p


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, typed view of a configuration.  ``flat`` is the resolved key map."""

    flat: dict[str, Any]
    base_dir: Path | None
    table: WindowTable
    energy: EnergyModelTable
    capacitance: float
    rating: float
    v_initial: float
    regulator: Regulator
    v_boot: float
    policy_kind: str
    fixed_freq: float | None
    switch_cycles: int
    p_lower: float
    design: DividerDesign
    circuitry_enabled: bool
    checkpoint: CheckpointConfig
    hibernus_divider_ohms: float
    nvm: NvmModel
    source_kind: str
    source: SourceTrace | None
    charging: ChargingNetwork
    workload: Workload
    dt_max: float
    crossing_tol: float
    max_time_s: float
    stall_limit: int
    max_failures: int | None

    @property
    def floor(self) -> float:
        return device_floor(self.checkpoint, self.table, self.policy_kind, self.fixed_freq)

    def to_dict(self) -> dict[str, Any]:
        """Resolved configuration with defaults, JSON-serialisable."""
        out = {}
        for k, v in sorted(self.flat.items()):
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_flat(cls, raw: Mapping[str, Any], base_dir: Path | None = None, lines: Mapping[str, int] | None = None):
        lines = lines or {}
        window_rows: dict[int, Any] = {}
        values: dict[str, Any] = {}
        for key, value in raw.items():
            if key.startswith("windows."):
                try:
                    idx = int(key.split(".", 1)[1])
                except ValueError:
                    raise ConfigError("window keys are windows.<index>", key, lines.get(key)) from None
                window_rows[idx] = value
                continue
            if key not in SCHEMA:
                raise ConfigError("unknown key", key, lines.get(key))
            try:
                values[key] = _coerce(SCHEMA[key][0], value, key)
            except ConfigError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], key, lines.get(key)) from None
        for key, (_, default) in SCHEMA.items():
            if key not in values:
                if default is _REQUIRED:
                    raise ConfigError("required field is missing", key)
                values[key] = default

        # window table
        if window_rows:
            if sorted(window_rows) != list(range(len(window_rows))):
                raise ConfigError("window indices must run 0..n-1", "windows")
            rows = []
            for i in range(len(window_rows)):
                r = window_rows[i]
                parts = r if isinstance(r, (list, tuple)) else str(r).split(",")
                try:
                    row = tuple(parse_quantity(p) for p in parts)
                except ValueError as exc:
                    raise ConfigError(str(exc), f"windows.{i}", lines.get(f"windows.{i}")) from None
                if len(row) != 4:
                    raise ConfigError("expected freq, v_reg, v_floor, v_ceiling", f"windows.{i}")
                rows.append(row)
        else:
            rows = [tuple(r) for r in msp430g2553_windows().to_rows()]
        try:
            table = WindowTable.from_rows(rows)
        except WindowTableError as exc:
            raise ConfigError(str(exc), "windows") from None
        flat: dict[str, Any] = {f"windows.{i}": tuple(r) for i, r in enumerate(rows)}

        energy_path = _resolve_path(values["energy_model.path"], base_dir)
        try:
            energy = load_energy_table(energy_path)
        except FileNotFoundError:
            raise ConfigError(f"file not found: {energy_path}", "energy_model.path") from None
        except EnergyModelError as exc:
            raise ConfigError(str(exc), "energy_model.path") from None

        C = values["capacitor.farads"]
        rating = values["capacitor.rating"]
        v_boot = values["v_boot"]
        if C <= 0:
            raise ConfigError("must be positive", "capacitor.farads")
        if v_boot > rating:
            raise ConfigError(f"v_boot {v_boot} V exceeds the capacitor rating {rating} V", "v_boot")
        try:
            energy.check_covers(table, max(rating, table.v_max))
        except EnergyModelError as exc:
            raise ConfigError(str(exc), "energy_model.path") from None
        v_initial = values["capacitor.v_initial"]
        if v_initial is not None and not 0 <= v_initial <= rating:
            raise ConfigError("must lie in [0, rating]", "capacitor.v_initial")

        kind = values["policy.kind"]
        if kind not in ("static", "d2vfs", "fbtc"):
            raise ConfigError("must be static, d2vfs or fbtc", "policy.kind")
        fixed = values["policy.fixed_freq"]
        if kind == "static":
            if fixed is None:
                raise ConfigError("static policy needs a frequency", "policy.fixed_freq")
            try:
                table.index_of_freq(fixed)
            except KeyError as exc:
                raise ConfigError(str(exc), "policy.fixed_freq") from None

        try:
            regulator = Regulator(values["regulator.efficiency"])
            if values["fbtc.design"] == "auto":
                design = design_dividers(table, values["fbtc.eps_c"], e24_series())
                values.update({"fbtc.r1": design.r1, "fbtc.r2": design.r2, "fbtc.r3": design.r3, "fbtc.r4": design.r4})
            elif values["fbtc.design"] == "fixed":
                design = DividerDesign(
                    values["fbtc.r1"], values["fbtc.r2"], values["fbtc.r3"], values["fbtc.r4"], eps_c=values["fbtc.eps_c"]
                )
            else:
                raise ConfigError("must be fixed or auto", "fbtc.design")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), "fbtc") from None

        # workload
        wl_name = values["workload.preset"]
        base_wl = preset(wl_name) if wl_name else Workload(1)
        workload = Workload(
            total_cycles=values["workload.total_cycles"] or base_wl.total_cycles,
            ram_used_bytes=base_wl.ram_used_bytes if values["workload.ram_used_bytes"] is None else values["workload.ram_used_bytes"],
            probe_interval_cycles=values["workload.probe_interval_cycles"] or base_wl.probe_interval_cycles,
            name=wl_name or "custom",
        )

        try:
            footprint = StateFootprint(values["checkpoint.registers_bytes"], workload.ram_used_bytes)
            v_save = values["checkpoint.v_save"]
            checkpoint = CheckpointConfig(
                scheme=values["checkpoint.scheme"],
                v_save=None if v_save == "auto" else v_save,
                footprint=footprint,
                adc_mode=values["checkpoint.adc_mode"],
                t_adc=values["checkpoint.t_adc"],
                compare_overhead_cycles=values["checkpoint.compare_overhead_cycles"],
                i_hibernate=values["checkpoint.i_hibernate"],
                resume_margin=values["checkpoint.resume_margin"],
                save_margin=values["checkpoint.save_margin"],
            )
            nvm = NvmModel(
                capacity_bytes=values["nvm.capacity_bytes"],
                bus_clock=values["nvm.bus_clock"],
                bus_cycles_per_byte=values["nvm.bus_cycles_per_byte"],
                transaction_overhead_bytes=values["nvm.transaction_overhead_bytes"],
                write_energy_per_byte=values["nvm.write_energy_per_byte"],
                read_energy_per_byte=values["nvm.read_energy_per_byte"],
                standby_current=values["nvm.standby_current"],
            )
            charging = ChargingNetwork(
                r_series=values["charging.r_series"],
                doubler=values["charging.doubler"],
                doubler_gain=values["charging.doubler_gain"],
                doubler_efficiency=values["charging.doubler_efficiency"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc), "checkpoint/nvm/charging") from None
        if footprint.total > nvm.capacity_bytes:
            raise ConfigError("state footprint exceeds NVM capacity", "nvm.capacity_bytes")

        floor = device_floor(checkpoint, table, kind, fixed)
        if v_boot <= floor:
            raise ConfigError(f"v_boot {v_boot} V must exceed the device floor {floor} V", "v_boot")
        if checkpoint.v_save is not None and not floor <= checkpoint.v_save <= rating:
            raise ConfigError(f"v_save must lie in [{floor}, {rating}] V", "checkpoint.v_save")

        source_kind = values["source.kind"]
        source = None
        if source_kind == "trace":
            if values["source.path"] is None:
                raise ConfigError("trace source needs a path", "source.path")
            path = _resolve_path(values["source.path"], base_dir)
            try:
                source = load_trace_csv(path, looped=values["source.loop"])
            except FileNotFoundError:
                raise ConfigError(f"file not found: {path}", "source.path") from None
            except ValueError as exc:
                raise ConfigError(str(exc), "source.path") from None
        elif source_kind == "constant":
            source = constant_trace(values["source.voltage"])
        elif source_kind not in ("synthetic_poor", "none"):
            raise ConfigError("must be trace, constant, synthetic_poor or none", "source.kind")

        for key in ("sim.dt_max", "sim.crossing_tol", "sim.max_time_s"):
            if values[key] <= 0:
                raise ConfigError("must be positive", key)

        for key, value in values.items():
            flat[key] = value
        return cls(
            flat=flat,
            base_dir=base_dir,
            table=table,
            energy=energy,
            capacitance=C,
            rating=rating,
            v_initial=v_boot if v_initial is None else v_initial,
            regulator=regulator,
            v_boot=v_boot,
            policy_kind=kind,
            fixed_freq=fixed,
            switch_cycles=values["policy.switch_cycles"],
            p_lower=values["policy.p_lower"],
            design=design,
            circuitry_enabled=values["circuitry.enabled"],
            checkpoint=checkpoint,
            hibernus_divider_ohms=values["checkpoint.hibernus_divider_ohms"],
            nvm=nvm,
            source_kind=source_kind,
            source=source,
            charging=charging,
            workload=workload,
            dt_max=values["sim.dt_max"],
            crossing_tol=values["sim.crossing_tol"],
            max_time_s=values["sim.max_time_s"],
            stall_limit=values["sim.stall_limit"],
            max_failures=values["sim.max_failures"],
        )


def parse_config_text(text: str, fmt: str = "flat", base_dir: Path | None = None) -> ExperimentConfig:
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object")
        return ExperimentConfig.from_flat(_flatten(data), base_dir)
    flat, lines = _read_flat_text(text)
    return ExperimentConfig.from_flat(flat, base_dir, lines)


def bundled_config_path(name: str) -> Path | None:
    res = resources.files("idvfs.data").joinpath(name)
    return Path(str(res)) if res.is_file() else None


def parse_config(path: str | Path) -> ExperimentConfig:
    """Load a config file; bare names of bundled configs are accepted too."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_config_path(str(path))
        if bundled is None:
            raise ConfigError(f"config file not found: {path}")
        p = bundled
    text = p.read_text()
    fmt = "json" if p.suffix == ".json" or text.lstrip().startswith("{") else "flat"
    return parse_config_text(text, fmt, p.parent)


def with_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """A copy of ``config`` with some keys replaced (re-validated)."""
    raw = dict(config.flat)
    # Resistors derived by the auto design must be re-derived, not pinned.
    if raw.get("fbtc.design") == "auto":
        for k in ("fbtc.r1", "fbtc.r2", "fbtc.r3", "fbtc.r4"):
            raw.pop(k, None)
    raw.update(overrides)
    return ExperimentConfig.from_flat(raw, config.base_dir)
