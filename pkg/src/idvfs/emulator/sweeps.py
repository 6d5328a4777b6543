"""Minimum-capacitance and minimum-boot-voltage sweeps over governor policies."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .config import ConfigError, ExperimentConfig, with_overrides
from .engine import NonTermination, run
from .workload import Workload

__all__ = ["PolicySpec", "SweepPoint", "SweepResult", "default_policies", "sweep_min_capacitance", "sweep_min_vboot"]


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    fixed_freq: float | None = None

    @property
    def label(self) -> str:
        if self.kind == "static":
            return f"static-{self.fixed_freq / 1e6:g}MHz"
        return self.kind

    def overrides(self) -> dict[str, Any]:
        return {"policy.kind": self.kind, "policy.fixed_freq": self.fixed_freq}


@dataclass(frozen=True)
class SweepPoint:
    policy: str
    value: float
    feasible: bool
    reason: str
    completion_time_s: float | None = None
    energy_total_j: float | None = None
    n_energy_failures: int | None = None


@dataclass
class SweepResult:
    parameter: str
    candidates: list[float]
    minima: dict[str, float | None]
    points: list[SweepPoint]

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "candidates": list(self.candidates),
            "minima": dict(self.minima),
            "points": [p.__dict__ for p in self.points],
        }


def default_policies(config: ExperimentConfig) -> list[PolicySpec]:
    """One static policy per window, then the two dynamic governors."""
    return [PolicySpec("static", w.freq_hz) for w in config.table] + [PolicySpec("d2vfs"), PolicySpec("fbtc")]


def _evaluate(args: tuple[ExperimentConfig, Workload, PolicySpec, str, float]) -> SweepPoint:
    base, workload, spec, key, value = args
    try:
        cfg = with_overrides(base, {**spec.overrides(), key: value})
        m = run(cfg, workload).metrics
    except (NonTermination, ConfigError) as exc:
        return SweepPoint(spec.label, value, False, f"{type(exc).__name__}: {exc}")
    reason = "completed" if m.completed else "stopped before completion"
    return SweepPoint(spec.label, value, m.completed, reason, m.completion_time_s, m.energy_total_j, m.n_energy_failures)


def _sweep(
    key: str,
    config: ExperimentConfig,
    workload: Workload | None,
    candidates: Iterable[float],
    policies: Sequence[PolicySpec] | None,
    workers: int,
    extra: dict[str, Any] | None = None,
) -> SweepResult:
    cands = [float(c) for c in candidates]
    if not cands:
        raise ValueError("no candidates given")
    if any(b <= a for a, b in zip(cands, cands[1:])):
        raise ValueError("candidates must be strictly ascending")
    base = with_overrides(config, extra) if extra else config
    wl = workload or base.workload
    specs = list(policies) if policies is not None else default_policies(base)
    jobs = [(base, wl, spec, key, c) for spec in specs for c in cands]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_evaluate, jobs))
    else:
        points = [_evaluate(j) for j in jobs]
    # Minima are read off the full grid so the result does not depend on job order.
    minima: dict[str, float | None] = {}
    for spec in specs:
        ok = [p.value for p in points if p.policy == spec.label and p.feasible]
        minima[spec.label] = min(ok) if ok else None
    return SweepResult(key, cands, minima, points)


def sweep_min_capacitance(
    config: ExperimentConfig,
    workload: Workload | None,
    candidates: Iterable[float],
    policies: Sequence[PolicySpec] | None = None,
    workers: int = 1,
) -> SweepResult:
    """Smallest capacitance per policy for which the workload completes.

    ``None`` in ``minima`` marks a policy infeasible at every candidate.
    """
    return _sweep("capacitor.farads", config, workload, candidates, policies, workers)


def sweep_min_vboot(
    config: ExperimentConfig,
    workload: Workload | None,
    candidates: Iterable[float],
    policies: Sequence[PolicySpec] | None = None,
    workers: int = 1,
) -> SweepResult:
    """Smallest boot voltage per policy for which the workload completes."""
    return _sweep("v_boot", config, workload, candidates, policies, workers)
