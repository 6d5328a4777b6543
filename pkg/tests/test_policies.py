import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordering import deferral_violations, ordering_violations

from idvfs.design_fbtc import paper_design
from idvfs.policies import (
    INTERRUPT,
    POWER_OFF,
    POWER_ON,
    SET_FREQUENCY,
    SET_REGULATOR,
    ActuationEvent,
    CircuitryComponent,
    CircuitryProfile,
    PolicyError,
    PolicyState,
    circuitry_drain,
    d2vfs_boot,
    d2vfs_profile,
    d2vfs_step,
    events_to_csv,
    fbtc_profile,
    fbtc_step,
    fbtc_upscale_voltage,
    hibernus_profile,
    power_state_step,
    static_step,
)
from idvfs.windows import window_for_voltage


def actions(events):
    return [(e.action, e.value) for e in events]


def test_power_latch_has_hysteresis():
    s = PolicyState("static")
    assert actions(power_state_step(s, 3.0, 3.6, 1.8)) == []
    assert actions(power_state_step(s, 3.6, 3.6, 1.8)) == [(POWER_ON, None)]
    assert actions(power_state_step(s, 2.0, 3.6, 1.8)) == []
    assert actions(power_state_step(s, 1.79, 3.6, 1.8)) == [(POWER_OFF, None)]
    with pytest.raises(ValueError):
        power_state_step(s, 2.0, 1.8, 1.8)


def test_static_policy_powers_off_below_its_floor(table):
    s = PolicyState("static", powered=True)
    static_step(s, 3.5, table, 16e6)
    assert s.current_window == 3 and s.powered
    assert actions(static_step(s, 3.29, table, 16e6)) == [(POWER_OFF, None)]
    assert not s.powered


def test_d2vfs_boot_jumps_to_detected_window(table):
    s = PolicyState("d2vfs")
    ev = d2vfs_boot(s, 3.5, table)
    assert actions(ev) == [(INTERRUPT, "boot"), (SET_REGULATOR, 3.3), (SET_FREQUENCY, 16e6)]
    assert s.current_window == 3 == s.detected_window


def test_d2vfs_boot_in_lowest_window_is_silent(table):
    s = PolicyState("d2vfs")
    assert d2vfs_boot(s, 2.0, table) == []
    assert s.current_window == 0


def test_d2vfs_downscale_is_frequency_first(table):
    s = PolicyState("d2vfs")
    d2vfs_boot(s, 3.5, table)
    ev = d2vfs_step(s, table, 3, "down")
    assert actions(ev) == [(INTERRUPT, "down"), (SET_FREQUENCY, 12e6), (SET_REGULATOR, 2.8)]
    assert s.current_window == 2 and not s.pending_upscale


def test_d2vfs_defers_the_first_upward_crossing(table):
    s = PolicyState("d2vfs")
    d2vfs_boot(s, 2.5, table)
    d2vfs_step(s, table, 1, "down")
    assert s.current_window == 0
    # Back up over 2.2 V: detector reports window 1, core stays put.
    ev = d2vfs_step(s, table, 1, "up")
    assert actions(ev) == [(INTERRUPT, "up")]
    assert s.current_window == 0 and s.detected_window == 1 and s.pending_upscale
    # Next edge at 2.8 V moves the core to window 1, one behind the detector.
    ev = d2vfs_step(s, table, 2, "up")
    assert actions(ev) == [(INTERRUPT, "up"), (SET_REGULATOR, 2.2), (SET_FREQUENCY, 8e6)]
    assert s.current_window == 1 and s.detected_window == 2


def test_d2vfs_rejects_inconsistent_edges(table):
    s = PolicyState("d2vfs")
    d2vfs_boot(s, 2.5, table)
    with pytest.raises(PolicyError):
        d2vfs_step(s, table, 3, "down")
    with pytest.raises(PolicyError):
        d2vfs_step(PolicyState("fbtc"), table, 1, "down")


def test_fbtc_upscale_gate_is_the_higher_of_two_conditions(table):
    d = paper_design()
    # 1 -> 8 MHz: charge comparator at 1.8 / 0.8 = 2.25 V is above 2.2 * 10.15 / 10.
    assert fbtc_upscale_voltage(table, d, 0) == pytest.approx(2.25)
    # 8 -> 12 MHz: 2.2 / 0.8 = 2.75 V is below the 12 MHz discharge threshold; that wins.
    assert fbtc_upscale_voltage(table, d, 1) == pytest.approx(2.8 * 10.15 / 10)
    assert fbtc_upscale_voltage(table, d, 3) == math.inf
    e = 1e-6
    expect = math.sqrt((2.8 * 10.15 / 10) ** 2 + 2 * e / 100e-6)
    assert fbtc_upscale_voltage(table, d, 1, 100e-6, e) == pytest.approx(expect)


def test_fbtc_steps_one_window_at_a_time(table):
    d = paper_design()
    s = PolicyState("fbtc", current_window=0, powered=True)
    ev = fbtc_step(s, 3.6, table, d)
    assert actions(ev) == [(INTERRUPT, "charge"), (SET_REGULATOR, 2.2), (SET_FREQUENCY, 8e6)]
    assert s.discharge_irq_enabled
    fbtc_step(s, 3.6, table, d)
    fbtc_step(s, 3.6, table, d)
    assert s.current_window == 3
    assert fbtc_step(s, 3.6, table, d) == []
    # Just above the 16 MHz discharge threshold nothing happens, just below it downscales.
    thr = d.downscale_voltage(3.3)
    assert fbtc_step(s, thr + 1e-6, table, d) == []
    ev = fbtc_step(s, thr - 1e-6, table, d)
    assert actions(ev) == [(INTERRUPT, "discharge"), (SET_FREQUENCY, 12e6), (SET_REGULATOR, 2.8)]


def test_fbtc_disables_discharge_interrupt_in_lowest_window(table):
    d = paper_design()
    s = PolicyState("fbtc", current_window=1, powered=True, discharge_irq_enabled=True)
    fbtc_step(s, 2.0, table, d)
    assert s.current_window == 0 and not s.discharge_irq_enabled


def test_fbtc_ignores_unpowered_state(table):
    assert fbtc_step(PolicyState("fbtc", current_window=0), 3.6, table, paper_design()) == []


def test_circuitry_drain_adds_current_and_resistive_terms():
    p = CircuitryProfile((CircuitryComponent("i", 2e-6), CircuitryComponent("r", resistance=1e6, active="only-when-on")))
    assert circuitry_drain(p, 3.0, 2.0, powered=True) == pytest.approx((2e-6 * 3.0 + 9.0 / 1e6) * 2.0)
    assert circuitry_drain(p, 3.0, 2.0, powered=False) == pytest.approx(2e-6 * 3.0 * 2.0)


def test_bundled_profiles():
    assert d2vfs_profile().coefficients(True) == (pytest.approx(4 * 0.95e-6 + 20e-6 + 4e-6 + 0.5e-6), 0.0)
    i, g = fbtc_profile(paper_design()).coefficients(True)
    assert g == pytest.approx(1 / 10.15e6 + 1 / 10e6)
    assert i == pytest.approx(2 * 0.95e-6 + 2 * 0.5e-6 + 2 * 0.22e-6)
    assert hibernus_profile(200e3).coefficients(False) == (0.0, pytest.approx(1 / 200e3))


def test_event_csv():
    text = events_to_csv([ActuationEvent(0.5, SET_FREQUENCY, 8e6, 12), ActuationEvent(1.0, POWER_OFF, None, 99)])
    assert text.splitlines() == ["time_s,cycle,action,value", "0.5,12,SetFrequency,8000000.0", "1.0,99,PowerOff,"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1.8, 3.6), min_size=1, max_size=40))
def test_d2vfs_core_never_outruns_the_detector(table, waveform):
    s = PolicyState("d2vfs", powered=True)
    s.event_log.append(ActuationEvent(0.0, POWER_ON))
    d2vfs_boot(s, waveform[0], table)
    for v in waveform[1:]:
        while True:
            d = s.detected_window
            if d > 0 and v < table[d].v_floor:
                d2vfs_step(s, table, d, "down")
            elif d < table.top and v >= table[d].v_ceiling:
                d2vfs_step(s, table, d + 1, "up")
            else:
                break
        assert s.detected_window == window_for_voltage(table, v)
        assert s.detected_window - 1 <= s.current_window <= s.detected_window
        assert s.pending_upscale == (s.current_window < s.detected_window)
    assert not ordering_violations(s.event_log, table)
    assert not deferral_violations(s.event_log)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1.8, 3.6), min_size=1, max_size=40))
def test_fbtc_window_is_always_safe(table, waveform):
    d = paper_design()
    s = PolicyState("fbtc", current_window=0, powered=True)
    s.event_log.append(ActuationEvent(0.0, POWER_ON))
    for v in waveform:
        for _ in range(len(table)):
            if not fbtc_step(s, v, table, d):
                break
        # The regulator never targets a voltage above what the capacitor holds.
        assert table[s.current_window].v_reg <= v or s.current_window == 0
    assert not ordering_violations(s.event_log, table)
