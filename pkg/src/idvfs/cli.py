"""Command-line front end: ``idvfs run | sweep-cap | sweep-vboot | design | validate | tune-vsave``.

Every artifact is JSON (or CSV for tabular output) carrying ``schema_version``
and the fully resolved configuration, so results can be reproduced from the
output alone.  Failures print a JSON error object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .checkpoint import tune_v_save
from .design_fbtc import (
    SwitchCostParams,
    check_anti_bounce,
    delta_c_upper_bound,
    delta_d_lower_bound,
    design_dividers,
    epsilon_c_min,
    min_cycles_for_switch,
    pair_is_feasible,
)
from .emulator import ConfigError, NonTermination, parse_config, parse_quantity, run
from .emulator.config import SCHEMA_VERSION, ExperimentConfig, with_overrides
from .emulator.engine import RunMetrics
from .emulator.sweeps import SweepResult, sweep_min_capacitance, sweep_min_vboot
from .emulator.workload import Workload, preset
from .policies import events_to_csv

# Flat RunMetrics columns for CSV output; the per-component split is expanded.
_METRIC_FIELDS = [
    "completion_time_s",
    "execution_time_s",
    "recharge_time_s",
    "energy_total_j",
    "n_energy_failures",
    "window_transitions",
    "completed",
]


class CliError(Exception):
    def __init__(self, kind: str, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.kind = kind
        self.field = field
        self.line = line

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "error": self.kind, "message": str(self)}
        if self.field is not None:
            out["field"] = self.field
        if self.line is not None:
            out["line"] = self.line
        return out


def _candidates(text: str, per_unit: float = 1.0) -> list[float]:
    """Comma-separated numbers; bare numbers are divided by ``per_unit`` (1e6 reads microfarads)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            float(part)
            out.append(float(part) / per_unit)
        except ValueError:
            out.append(parse_quantity(part))
    return out


def _workload(args, cfg: ExperimentConfig) -> Workload:
    if getattr(args, "workload", None):
        return preset(args.workload)
    if getattr(args, "cycles", None):
        base = cfg.workload
        return Workload(args.cycles, base.ram_used_bytes, base.probe_interval_cycles, "custom")
    return cfg.workload


def _envelope(cfg: ExperimentConfig, command: str, **payload) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg.to_dict(), **payload}


def _metrics_row(m: RunMetrics) -> dict[str, Any]:
    row = {k: getattr(m, k) for k in _METRIC_FIELDS}
    for name, value in m.energy_by_component.items():
        row[f"energy_{name}_j"] = value
    return row


def _emit(args, doc: dict, rows: list[dict] | None = None) -> None:
    if args.format == "csv" and rows is not None:
        # CSV cannot nest, so each row carries the resolved config as a JSON string.
        config_json = json.dumps(doc["config"], sort_keys=True)
        buf = io.StringIO()
        fields = ["schema_version", *(rows[0].keys() if rows else ()), "config"]
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        for r in rows:
            writer.writerow({"schema_version": SCHEMA_VERSION, **r, "config": config_json})
        text = buf.getvalue()
    else:
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError("usage", f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return with_overrides(cfg, overrides) if overrides else cfg


# ---------------------------------------------------------------- commands


def cmd_run(args) -> None:
    cfg = _load(args)
    result = run(cfg, _workload(args, cfg))
    m = result.metrics
    if args.events:
        Path(args.events).write_text(events_to_csv(result.events))
    doc = _envelope(cfg, "run", metrics=m.to_dict(), n_events=len(result.events))
    _emit(args, doc, [_metrics_row(m)])


def _sweep_rows(res: SweepResult) -> list[dict]:
    return [
        {"parameter": res.parameter, "policy": p.policy, "value": p.value, "feasible": p.feasible,
         "minimum": res.minima[p.policy], "reason": p.reason}
        for p in res.points
    ]  # fmt: skip


def cmd_sweep_cap(args) -> None:
    cfg = _load(args)
    res = sweep_min_capacitance(cfg, _workload(args, cfg), _candidates(args.candidates, 1e6), workers=args.workers)
    _emit(args, _envelope(cfg, "sweep-cap", sweep=res.to_dict()), _sweep_rows(res))


def cmd_sweep_vboot(args) -> None:
    cfg = _load(args)
    res = sweep_min_vboot(cfg, _workload(args, cfg), _candidates(args.candidates), workers=args.workers)
    _emit(args, _envelope(cfg, "sweep-vboot", sweep=res.to_dict()), _sweep_rows(res))


def cmd_design(args) -> None:
    cfg = _load(args)
    eps = cfg.design.eps_c
    params = SwitchCostParams(cfg.switch_cycles, cfg.p_lower, args.e_cc_max)
    d_lo = delta_d_lower_bound(cfg.table, eps)
    c_hi = delta_c_upper_bound(cfg.table, eps)
    d = cfg.design
    picked = design_dividers(cfg.table, eps)
    doc = _envelope(
        cfg,
        "design",
        delta_d_lower_bound=d_lo,
        delta_c_upper_bound=c_hi,
        min_cycles_for_switch=min_cycles_for_switch(params),
        epsilon_c_min=epsilon_c_min(cfg.capacitance, params),
        resistors={"r1": d.r1, "r2": d.r2, "r3": d.r3, "r4": d.r4},
        delta_d=d.delta_d,
        delta_c=d.delta_c,
        discharge_feasible=pair_is_feasible(d.r1, d.r2, d_lo, "discharge"),
        charge_feasible=pair_is_feasible(d.r3, d.r4, c_hi, "charge"),
        anti_bounce=check_anti_bounce(cfg.table, d).ok,
        anti_bounce_strict=check_anti_bounce(cfg.table, d, strict=True).violations,
        e24_pick={"r1": picked.r1, "r2": picked.r2, "r3": picked.r3, "r4": picked.r4},
    )
    _emit(args, doc)


def cmd_validate(args) -> None:
    cfg = _load(args)
    _emit(args, _envelope(cfg, "validate", ok=True))


def cmd_tune_vsave(args) -> None:
    cfg = _load(args)
    grid = _candidates(args.grid)
    best = tune_v_save(cfg, _workload(args, cfg), grid)
    _emit(args, _envelope(cfg, "tune-vsave", grid=grid, v_save=best))


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idvfs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workload=True):
        p.add_argument("--config", required=True, help="config file, or the name of a bundled config")
        p.add_argument("--output", "-o", help="write the artifact here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        if workload:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--workload", help="workload preset name")
            g.add_argument("--cycles", type=int, help="custom workload length in cycles")

    p = sub.add_parser("run", help="emulate one workload")
    common(p)
    p.add_argument("--events", help="write the actuation event log as CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-cap", help="minimum capacitance per policy")
    common(p)
    p.add_argument("--candidates", required=True, help="ascending list; bare numbers are microfarads")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_cap)

    p = sub.add_parser("sweep-vboot", help="minimum boot voltage per policy")
    common(p)
    p.add_argument("--candidates", required=True, help="ascending list of volts")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_vboot)

    p = sub.add_parser("design", help="divider bounds, resistor check and switch-cost margins")
    common(p, workload=False)
    p.add_argument("--e-cc-max", type=parse_quantity, default=0.85e-9, help="largest per-cycle energy (J)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("validate", help="parse and cross-check a config")
    common(p, workload=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("tune-vsave", help="grid-search the save threshold")
    common(p)
    p.add_argument("--grid", required=True, help="candidate save thresholds in volts")
    p.set_defaults(func=cmd_tune_vsave)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        err = exc
    except ConfigError as exc:
        err = CliError("config", str(exc), exc.field, exc.line)
    except NonTermination as exc:
        err = CliError("non_termination", str(exc))
    except (ValueError, RuntimeError, OSError) as exc:
        err = CliError(type(exc).__name__, str(exc))
    else:
        return 0
    sys.stderr.write(json.dumps(err.to_dict()) + "\n")
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
