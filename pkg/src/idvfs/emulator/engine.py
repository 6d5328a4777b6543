"""Discrete-event emulation of one workload on a capacitor-buffered device.

Active execution is stepped one MCU cycle at a time in a compiled kernel that
stops at the first cycle crossing an armed voltage threshold.  Everything else
(power-on, window changes, checkpoints, hibernation) is handled here between
kernel calls.  Energy is itemised per component:

``mcu``                 workload cycles, as seen at the core supply pin
``switch``              window-change driver cycles
``checkpoint``          core cycles stalled on NVM saves and restores
``probe``               voltage probe cycles (probe-driven checkpointing)
``regulator``           conversion loss between capacitor and core
``nvm``                 FRAM transfer and standby energy
``circuitry``           governor circuitry standing current
``checkpoint_circuitry``  standing current of the save-threshold divider
``hibernate``           low-power-mode current while hibernating
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..checkpoint import mementos_probe, v_save_for_budget
from ..design_fbtc import DesignError, SwitchCostParams, min_cycles_for_switch
from ..energy_model import energy_per_cycle
from ..nvm import restore_cost, save_cost
from ..policies import (
    SET_FREQUENCY,
    ActuationEvent,
    CircuitryProfile,
    PolicyState,
    d2vfs_boot,
    d2vfs_profile,
    d2vfs_step,
    fbtc_profile,
    fbtc_step,
    fbtc_upscale_voltage,
    hibernus_profile,
    power_state_step,
)
from ..windows import window_for_voltage
from . import _kernel as K
from .config import ExperimentConfig
from .workload import Workload

__all__ = ["NonTermination", "RunMetrics", "RunResult", "run"]

COMPONENTS = (
    "mcu",
    "switch",
    "checkpoint",
    "probe",
    "regulator",
    "nvm",
    "circuitry",
    "checkpoint_circuitry",
    "hibernate",
)


class NonTermination(RuntimeError):
    """The configuration cannot make forward progress across energy failures."""


@dataclass
class RunMetrics:
    completion_time_s: float
    execution_time_s: float
    recharge_time_s: float
    energy_total_j: float
    energy_by_component: dict[str, float]
    n_energy_failures: int
    window_transitions: int
    completed: bool
    progress_cycles: int = 0
    mcu_cycles: int = 0
    n_saves: int = 0
    n_restores: int = 0
    energy_initial_j: float = 0.0
    energy_final_j: float = 0.0
    energy_harvested_j: float = 0.0
    energy_source_j: float = 0.0
    v_save: float | None = None
    min_supply_margin_v: float = math.inf

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["min_supply_margin_v"]):
            d["min_supply_margin_v"] = None
        return d

    def conservation_error(self) -> float:
        """Relative mismatch of initial + harvested against consumed + final."""
        lhs = self.energy_initial_j + self.energy_harvested_j
        rhs = self.energy_total_j + self.energy_final_j
        return abs(lhs - rhs) / max(abs(lhs), 1e-300)


@dataclass
class RunResult:
    metrics: RunMetrics
    events: list[ActuationEvent] = field(default_factory=list)


_EMPTY = np.zeros(1)


class _Emulation:
    def __init__(self, cfg: ExperimentConfig, workload: Workload):
        self.cfg = cfg
        self.wl = workload
        self.table = cfg.table
        self.C = cfg.capacitance
        self.kind = cfg.policy_kind
        self.regulated = self.kind != "static"
        self.eta = cfg.regulator.eta(cfg.v_boot, self.table[0].v_reg) if self.regulated else 1.0
        self.floor = cfg.floor
        self.scheme = cfg.checkpoint.scheme
        self.n_bytes = cfg.checkpoint.footprint.total

        # capacitor state: [E, compensation, t, C]
        self.state = np.array([0.5 * self.C * cfg.v_initial**2, 0.0, 0.0, self.C])
        self.e_initial = float(self.state[0])

        self.ledger: dict[str, list[float]] = defaultdict(list)
        self.harvested: list[float] = []
        self.source_side: list[float] = []
        self.exec_time: list[float] = []
        self.recharge_time: list[float] = []

        self.policy = PolicyState(self.kind)
        self.progress = 0
        self.committed = 0
        self.has_checkpoint = False
        self.mcu_cycles = 0
        self.n_failures = 0
        self.n_saves = 0
        self.n_restores = 0
        self.stalls = 0
        self.last_committed_at_failure = -1
        self.min_margin = math.inf
        self.hibernating = False

        self._series = {}
        for w in self.table:
            v, e = cfg.energy.lookup(w.freq_hz)
            self._series[w.freq_hz] = (np.ascontiguousarray(v), np.ascontiguousarray(e))

        self._build_loads()
        self._build_source()
        self._fbtc_min_energy = self._fbtc_run_energy()
        self.v_save = self._resolve_v_save()
        self._precheck()

    # ------------------------------------------------------------------ setup

    def _build_loads(self):
        cfg = self.cfg
        governor = CircuitryProfile()
        if cfg.circuitry_enabled:
            if self.kind == "d2vfs":
                governor = d2vfs_profile()
            elif self.kind == "fbtc":
                governor = fbtc_profile(cfg.design)
        divider = CircuitryProfile()
        if cfg.circuitry_enabled and self.scheme == "hibernus":
            divider = hibernus_profile(cfg.hibernus_divider_ohms)
        self._governor = governor
        self._divider = divider

    def _loads(self, phase: str) -> list[tuple[str, float, float]]:
        """(component, I, G) standing loads for a phase: active, hibernate or off."""
        powered = phase != "off"
        loads = [
            ("circuitry", *self._governor.coefficients(powered)),
            ("checkpoint_circuitry", *self._divider.coefficients(powered)),
        ]
        if powered and self.cfg.nvm.standby_current > 0:
            loads.append(("nvm", self.cfg.nvm.standby_current, 0.0))
        if phase == "hibernate":
            loads.append(("hibernate", self.cfg.checkpoint.i_hibernate, 0.0))
        return [l for l in loads if l[1] or l[2]]

    def _build_source(self):
        cfg = self.cfg
        self.tr_t, self.tr_v, self.looped = _EMPTY, _EMPTY, False
        if cfg.source_kind == "trace":
            self.tr_t = np.ascontiguousarray(cfg.source.t)
            self.tr_v = np.ascontiguousarray(cfg.source.v)
            self.looped = cfg.source.looped
        self.gain = cfg.charging.gain
        self.eta_d = cfg.charging.efficiency

    def _source(self, powered: bool) -> tuple[int, float]:
        kind = self.cfg.source_kind
        if kind == "trace":
            return K.SRC_TRACE, 0.0
        if kind == "constant":
            return K.SRC_CONST, float(self.cfg.flat["source.voltage"])
        if kind == "synthetic_poor":
            return (K.SRC_NONE, 0.0) if powered else (K.SRC_CONST, 5.0)
        return K.SRC_NONE, 0.0

    # --------------------------------------------------------------- helpers

    @property
    def V(self) -> float:
        return math.sqrt(2.0 * max(self.state[0], 0.0) / self.C)

    @property
    def t(self) -> float:
        return float(self.state[2])

    def _window(self):
        return self.table[self.policy.current_window]

    def _cycle_cost(self, window_idx: int, v_cap: float) -> float:
        """Capacitor-side energy of one cycle in a window (estimate for planning)."""
        w = self.table[window_idx]
        if self.regulated:
            return energy_per_cycle(self.cfg.energy, w.freq_hz, w.v_reg) / self.eta
        lo, hi = self.cfg.energy.span(w.freq_hz)
        return energy_per_cycle(self.cfg.energy, w.freq_hz, min(max(v_cap, lo), hi))

    def _boot_window(self) -> int:
        if self.kind == "static":
            return self.table.index_of_freq(self.cfg.fixed_freq)
        return 0

    def _fbtc_run_energy(self) -> list[float]:
        """Energy an FBTC upscale into each window must leave above its discharge threshold."""
        cfg = self.cfg
        try:
            n_min = min_cycles_for_switch(SwitchCostParams(cfg.switch_cycles, cfg.p_lower))
        except DesignError:
            n_min = 0
        return [(n_min + cfg.switch_cycles) * self._cycle_cost(i, w.v_reg) for i, w in enumerate(self.table)]

    def _transfer_energy(self, window_idx: int, v_cap: float, restore: bool) -> float:
        """Capacitor-side energy of one save or restore in a window."""
        w = self.table[window_idx]
        fn = restore_cost if restore else save_cost
        cost = fn(self.cfg.nvm, self.n_bytes, w.freq_hz)
        nvm = cost.energy_j / (self.eta if self.regulated else 1.0)
        i_q = sum(i * v_cap + g * v_cap * v_cap for _, i, g in self._loads("active"))
        return cost.stall_cycles * self._cycle_cost(window_idx, v_cap) + nvm + i_q * cost.time_s

    def _window_at(self, v: float) -> int:
        if self.kind == "static":
            return self._boot_window()
        idx = window_for_voltage(self.table, v)
        return 0 if idx is None else idx

    def _resolve_v_save(self) -> float | None:
        ck = self.cfg.checkpoint
        if self.scheme == "none":
            return None
        if ck.v_save is not None:
            return ck.v_save
        # Smallest threshold holding save_margin saves' worth of energy above the floor,
        # evaluated in the window the device would be in at that voltage.
        v = self.floor
        for _ in range(8):
            win = self._window_at(v)
            budget = ck.save_margin * self._transfer_energy(win, v, restore=False)
            if self.scheme == "mementos":
                probe_cycles = self.wl.probe_interval_cycles + mementos_probe(ck, v, self.table[win].freq_hz, v_save=0.0)[0]
                budget += probe_cycles * self._cycle_cost(win, v)
            v_new = v_save_for_budget(self.floor, self.C, budget)
            if abs(v_new - v) < 1e-9:
                break
            v = v_new
        return v

    def _precheck(self):
        cfg = self.cfg
        if self.scheme == "none":
            return
        if self.v_save >= cfg.v_boot:
            raise NonTermination(
                f"save threshold {self.v_save:.3f} V is not below v_boot {cfg.v_boot} V; "
                "the capacitor cannot hold a checkpoint and useful work"
            )
        usable = 0.5 * self.C * (cfg.v_boot**2 - self.floor**2)
        boot_w = self._boot_window()
        overhead = self._transfer_energy(boot_w, cfg.v_boot, restore=True) + self._transfer_energy(
            self._window_at(self.v_save), self.v_save, restore=False
        )
        if usable <= overhead:
            raise NonTermination(
                f"usable energy per cycle {usable:.3e} J does not exceed save+restore {overhead:.3e} J"
            )

    # ---------------------------------------------------------------- ledger

    def _book_kernel(self, acc: np.ndarray, category: str | None, loads, dt_time: float, powered_phase: str):
        if category is not None:
            e_core = acc[0]
            e_cap = acc[2]
            self.ledger[category].append(e_core)
            if e_cap != e_core:
                self.ledger["regulator"].append(e_cap - e_core)
        s1, s2 = acc[4], acc[6]
        for name, i, g in loads:
            self.ledger[name].append(i * s1 + g * s2)
        if acc[8]:
            self.harvested.append(acc[8])
            self.source_side.append(acc[10])
        if powered_phase == "exec":
            self.exec_time.append(dt_time)
        else:
            self.recharge_time.append(dt_time)

    def _thresholds(self, arm_policy: bool, arm_save: bool) -> tuple[float, float]:
        lo = self.floor
        hi = math.inf
        if arm_save and self.scheme == "hibernus":
            lo = max(lo, self.v_save)
        if arm_policy and self.kind == "d2vfs":
            d = self.policy.detected_window
            if d > 0:
                lo = max(lo, self.table[d].v_floor)
            if d < self.table.top:
                hi = min(hi, self.table[d].v_ceiling)
        elif arm_policy and self.kind == "fbtc":
            cur = self.policy.current_window
            if cur > 0 and self.policy.discharge_irq_enabled:
                lo = max(lo, self.cfg.design.downscale_voltage(self.table[cur].v_reg))
            if cur < self.table.top:
                gate = fbtc_upscale_voltage(self.table, self.cfg.design, cur, self.C, self._fbtc_min_energy[cur + 1])
                hi = min(hi, math.nextafter(gate, math.inf))
        return lo, hi

    # ------------------------------------------------------------ execution

    def _kernel(self, n: int, category: str, v_lo: float, v_hi: float) -> tuple[int, int]:
        w = self._window()
        ev_v, ev_e = self._series[w.freq_hz]
        loads = self._loads("active")
        i_sum = math.fsum(l[1] for l in loads)
        g_sum = math.fsum(l[2] for l in loads)
        src, const_v = self._source(True)
        acc = np.zeros(2 * K.N_ACC)
        t0 = self.t
        done, reason, v_min = K.run_cycles(
            self.state, n, w.freq_hz, self.regulated, w.v_reg, self.eta, ev_v, ev_e, i_sum, g_sum,
            src, self.tr_t, self.tr_v, self.looped, const_v, self.cfg.charging.r_series, self.gain, self.eta_d,
            self.cfg.rating, v_lo, v_hi, acc,
        )  # fmt: skip
        self._book_kernel(acc, category, loads, self.t - t0, "exec")
        self.mcu_cycles += done
        if done:
            self.min_margin = min(self.min_margin, v_min - w.v_reg)
        return done, reason

    def _block(self, n: int, category: str, *, progress: bool = False, arm_policy: bool = True, arm_save: bool = False, time_based: bool = False) -> bool:
        """Run ``n`` cycles of one kind, reacting to threshold crossings.

        Returns False if the device lost power (or went into hibernation and
        then lost power) before the block finished.
        """
        remaining = n
        while remaining > 0:
            if not self.policy.powered:
                return False
            v_lo, v_hi = self._thresholds(arm_policy, arm_save)
            f_before = self._window().freq_hz
            done, reason = self._kernel(remaining, category, v_lo, v_hi)
            remaining -= done
            if progress:
                self.progress += done
            if reason == K.REASON_DONE:
                break
            if reason == K.REASON_UNDERFLOW:
                self._power_fail()
                return False
            if not self._settle(arm_policy=arm_policy, arm_save=arm_save):
                return False
            if time_based and remaining > 0:
                f_after = self._window().freq_hz
                if f_after != f_before:
                    remaining = int(math.ceil(remaining / f_before * f_after - 1e-9))
        return self.policy.powered

    def _settle(self, arm_policy: bool = True, arm_save: bool = False) -> bool:
        """Bring policy and power state in line with the present voltage.

        Returns False if the device is no longer running.
        """
        for _ in range(10_000):
            v = self.V
            if v < self.floor:
                self._power_fail()
                return False
            if arm_policy:
                handled, switched = self._policy_event(v)
                if handled:
                    if switched and not self._block(self.cfg.switch_cycles, "switch", arm_policy=False):
                        return False
                    continue
            if arm_save and self.scheme == "hibernus" and v < self.v_save:
                return self._save_and_hibernate()
            return True
        raise RuntimeError("threshold handling did not settle")

    def _policy_event(self, v: float) -> tuple[bool, bool]:
        """Process at most one comparator/detector edge.

        Returns ``(handled, switched)``; a D2VFS edge may be handled without
        moving the core (deferred upscale).
        """
        t, cyc = self.t, self.mcu_cycles
        before = self.policy.current_window
        if self.kind == "d2vfs":
            d = self.policy.detected_window
            if d > 0 and v < self.table[d].v_floor:
                d2vfs_step(self.policy, self.table, d, "down", t, cyc)
            elif d < self.table.top and v >= self.table[d].v_ceiling:
                d2vfs_step(self.policy, self.table, d + 1, "up", t, cyc)
            else:
                return False, False
            return True, self.policy.current_window != before
        if self.kind == "fbtc":
            ev = fbtc_step(self.policy, v, self.table, self.cfg.design, t, cyc, self.C, self._fbtc_min_energy)
            return bool(ev), bool(ev)
        return False, False

    # ------------------------------------------------------- power handling

    def _power_fail(self):
        power_state_step(self.policy, -1.0, math.inf, 0.0, self.t, self.mcu_cycles)
        self.policy.powered = False
        self.hibernating = False
        self.n_failures += 1
        self.progress = self.committed
        if self.committed <= self.last_committed_at_failure:
            self.stalls += 1
        else:
            self.stalls = 0
        self.last_committed_at_failure = self.committed
        if self.stalls >= self.cfg.stall_limit:
            raise NonTermination(
                f"no committed progress across {self.stalls} consecutive energy failures "
                f"(stuck at cycle {self.committed} of {self.wl.total_cycles})"
            )

    def _idle(self, phase: str, v_lo: float, v_hi: float) -> int:
        loads = self._loads(phase)
        i_sum = math.fsum(l[1] for l in loads)
        g_sum = math.fsum(l[2] for l in loads)
        src, const_v = self._source(phase != "off")
        acc = np.zeros(2 * K.N_ACC)
        t0 = self.t
        reason = K.run_idle(
            self.state, self.cfg.max_time_s, self.cfg.dt_max, i_sum, g_sum, src, self.tr_t, self.tr_v, self.looped,
            const_v, self.cfg.charging.r_series, self.gain, self.eta_d, self.cfg.rating, v_lo, v_hi,
            self.cfg.crossing_tol, acc,
        )  # fmt: skip
        self._book_kernel(acc, None, loads, self.t - t0, "recharge")
        return reason

    def _v_on(self) -> float:
        # A boot threshold at the rating is reached only up to rounding.
        return min(self.cfg.v_boot, self.cfg.rating * (1 - 1e-12))

    def _charge_to_boot(self):
        if self.V >= self._v_on():
            return
        reason = self._idle("off", -math.inf, self._v_on())
        if reason != K.REASON_HIGH:
            raise NonTermination(f"capacitor never reaches v_boot {self.cfg.v_boot} V within {self.cfg.max_time_s} s")

    def _boot(self) -> bool:
        t, cyc = self.t, self.mcu_cycles
        power_state_step(self.policy, self.V, self._v_on(), self.floor, t, cyc)
        self.policy.powered = True
        boot_w = self._boot_window()
        self.policy.current_window = boot_w
        self.policy.pending_upscale = False
        self.policy.discharge_irq_enabled = False
        self.policy.detected_window = None
        if self.kind == "d2vfs":
            # Detector latch tracks the voltage even before the driver runs.
            self.policy.detected_window = self._window_at(self.V)
        if self.has_checkpoint:
            if not self._transfer(restore=True):
                return False
            self.n_restores += 1
        self.progress = self.committed
        if self.kind == "d2vfs":
            if d2vfs_boot(self.policy, self.V, self.table, self.t, self.mcu_cycles):
                if not self._block(self.cfg.switch_cycles, "switch", arm_policy=False):
                    return False
        return self._settle(arm_policy=True, arm_save=True)

    def _transfer(self, restore: bool) -> bool:
        """NVM save or restore: FRAM energy up front, then the stalled core cycles."""
        w = self._window()
        fn = restore_cost if restore else save_cost
        cost = fn(self.cfg.nvm, self.n_bytes, w.freq_hz)
        e_cap = cost.energy_j / self.eta if self.regulated else cost.energy_j
        if e_cap > self.state[0]:
            self.ledger["nvm"].append(cost.energy_j * float(self.state[0]) / e_cap)
            if self.regulated:
                self.ledger["regulator"].append(float(self.state[0]) * (1 - self.eta))
            self.state[0] = 0.0
            self._power_fail()
            return False
        self.state[0] -= e_cap
        self.ledger["nvm"].append(cost.energy_j)
        if self.regulated:
            self.ledger["regulator"].append(e_cap - cost.energy_j)
        return self._block(cost.stall_cycles, "checkpoint", arm_policy=not restore, time_based=True)

    def _save(self) -> bool:
        progress_at_save = self.progress
        if not self._transfer(restore=False):
            return False
        self.committed = progress_at_save
        self.has_checkpoint = True
        self.n_saves += 1
        return True

    def _save_and_hibernate(self) -> bool:
        if not self._save():
            return False
        self.hibernating = True
        while True:
            resume = min(self.v_save + self.cfg.checkpoint.resume_margin, self.cfg.rating * (1 - 1e-12))
            reason = self._idle("hibernate", self.floor, resume)
            if reason == K.REASON_HIGH:
                self.hibernating = False
                return self._settle(arm_policy=True, arm_save=True)
            if reason == K.REASON_LOW:
                self._power_fail()
                return False
            raise NonTermination(f"hibernation outlasted the {self.cfg.max_time_s} s time limit")

    # --------------------------------------------------------------- driver

    def run(self) -> RunResult:
        total = self.wl.total_cycles
        interval = self.wl.probe_interval_cycles
        while self.progress < total:
            if self.cfg.max_failures is not None and self.n_failures >= self.cfg.max_failures:
                break
            if not self.policy.powered:
                self._charge_to_boot()
                if not self._boot():
                    continue
            n = total - self.progress
            if self.scheme == "mementos":
                next_probe = (self.progress // interval + 1) * interval
                n = min(n, next_probe - self.progress)
            if not self._block(n, "mcu", progress=True, arm_save=True):
                continue
            if self.scheme == "mementos" and self.progress < total and self.progress % interval == 0:
                self._probe()
        return RunResult(self._metrics(self.progress >= total), list(self.policy.event_log))

    def _probe(self):
        w = self._window()
        cost, _ = mementos_probe(self.cfg.checkpoint, self.V, w.freq_hz, self.v_save)
        if not self._block(cost, "probe"):
            return
        _, action = mementos_probe(self.cfg.checkpoint, self.V, self._window().freq_hz, self.v_save)
        if action == "save":
            self._save()

    def _metrics(self, completed: bool) -> RunMetrics:
        by_comp = {name: math.fsum(self.ledger.get(name, [])) for name in COMPONENTS}
        total = math.fsum(v for vals in self.ledger.values() for v in vals)
        exec_t = math.fsum(self.exec_time)
        rech_t = math.fsum(self.recharge_time)
        transitions = sum(1 for ev in self.policy.event_log if ev.action == SET_FREQUENCY)
        return RunMetrics(
            completion_time_s=self.t,
            execution_time_s=exec_t,
            recharge_time_s=rech_t,
            energy_total_j=total,
            energy_by_component=by_comp,
            n_energy_failures=self.n_failures,
            window_transitions=transitions,
            completed=completed,
            progress_cycles=self.progress,
            mcu_cycles=self.mcu_cycles,
            n_saves=self.n_saves,
            n_restores=self.n_restores,
            energy_initial_j=self.e_initial,
            energy_final_j=float(self.state[0]),
            energy_harvested_j=math.fsum(self.harvested),
            energy_source_j=math.fsum(self.source_side),
            v_save=self.v_save,
            min_supply_margin_v=self.min_margin,
        )


def run(config: ExperimentConfig, workload: Workload | None = None) -> RunResult:
    """Emulate ``workload`` (default: the config's) to completion.

    Raises
    ------
    NonTermination
        When the configuration cannot make forward progress.
    """
    return _Emulation(config, workload or config.workload).run()
