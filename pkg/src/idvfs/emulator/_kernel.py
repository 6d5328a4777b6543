"""Compiled inner loops of the emulator.

``run_cycles`` advances the capacitor one MCU cycle at a time and stops at the
first cycle whose end voltage leaves ``[v_lo, v_hi)``.  ``run_idle`` advances
a powered-down or hibernating device with adaptive steps and bisects to the
first threshold crossing.

All energy sums use compensated (Kahan) accumulation so that the
conservation identity holds to well below 1e-9 relative over millions of
cycles.  Accumulator layout (value, compensation pairs):

    0 MCU-side energy (what the core consumed)
    1 capacitor-side energy for the core (includes regulator loss)
    2 integral of V dt      (fixed-current loads)
    3 integral of V**2 dt   (resistive loads)
    4 energy delivered into the capacitor by the source
    5 energy drawn from the source
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

REASON_DONE = 0
REASON_LOW = 1
REASON_HIGH = 2
REASON_UNDERFLOW = 3
REASON_TIMEOUT = 4

N_ACC = 6

SRC_NONE = 0
SRC_TRACE = 1
SRC_CONST = 2


@njit(cache=True, inline="always")
def _kadd(acc, k, x):
    y = x - acc[2 * k + 1]
    s = acc[2 * k] + y
    acc[2 * k + 1] = (s - acc[2 * k]) - y
    acc[2 * k] = s


@njit(cache=True)
def _source_v(t, src_mode, tr_t, tr_v, looped, const_v):
    if src_mode == SRC_NONE:
        return 0.0
    if src_mode == SRC_CONST:
        return const_v
    t0 = tr_t[0]
    t1 = tr_t[tr_t.shape[0] - 1]
    if t > t1:
        if looped and t1 > t0:
            t = t0 + (t - t0) % (t1 - t0)
        else:
            return 0.0
    return np.interp(t, tr_t, tr_v)


@njit(cache=True)
def _charge(V, v_src, dt, C, r, gain, eta_d, rating):
    """Returns (delivered, source-side) energy for one RC step through a diode.

    The rating clamp is applied by the caller to the net energy, so a source
    can hold the capacitor at its rating against a standing load.
    """
    v_eff = gain * v_src
    if v_eff <= V:
        return 0.0, 0.0
    v_new = v_eff + (V - v_eff) * math.exp(-dt / (r * C))
    raw = 0.5 * C * (v_new * v_new - V * V)
    return raw * eta_d, C * v_eff * (v_new - V)


@njit(cache=True)
def run_cycles(
    state,
    n_max,
    freq,
    regulated,
    v_supply,
    eta,
    ev_v,
    ev_e,
    i_fixed,
    g_res,
    src_mode,
    tr_t,
    tr_v,
    looped,
    const_v,
    r_series,
    gain,
    eta_d,
    rating,
    v_lo,
    v_hi,
    acc,
):
    """Execute up to ``n_max`` cycles.

    ``state`` holds ``[E, E_compensation, t, C]`` and is updated in place.
    Returns ``(cycles_done, reason, min_start_voltage)``.  The cycle that takes
    the voltage out of range is counted as executed: it started in range.
    """
    E = state[0]
    Ec = state[1]
    t0 = state[2]
    C = state[3]
    dt = 1.0 / freq
    e_rating = 0.5 * C * rating * rating
    e_fixed = 0.0
    if regulated:
        e_fixed = np.interp(v_supply, ev_v, ev_e)
    v_min_seen = math.inf
    n = 0
    reason = REASON_DONE
    while n < n_max:
        V = math.sqrt(2.0 * E / C)
        if V < v_min_seen:
            v_min_seen = V
        if regulated:
            e = e_fixed
            w = e / eta
        else:
            e = np.interp(V, ev_v, ev_e)
            w = e
        q = (i_fixed * V + g_res * V * V) * dt
        h = 0.0
        s = 0.0
        if src_mode != SRC_NONE:
            vs = _source_v(t0 + n * dt, src_mode, tr_t, tr_v, looped, const_v)
            h, s = _charge(V, vs, dt, C, r_series, gain, eta_d, rating)
        d = h - w - q
        if h > 0.0 and E + d > e_rating:
            # The rating clamp sheds the surplus before it reaches the store.
            h -= E + d - e_rating
            d = h - w - q
        if E + d < 0.0:
            # Not enough left for this cycle: empty the store, split pro rata.
            avail = E + h
            scale = avail / (w + q)
            _kadd(acc, 0, e * scale)
            _kadd(acc, 1, w * scale)
            _kadd(acc, 2, V * dt * scale)
            _kadd(acc, 3, V * V * dt * scale)
            _kadd(acc, 4, h)
            _kadd(acc, 5, s)
            E = 0.0
            Ec = 0.0
            n += 1
            reason = REASON_UNDERFLOW
            break
        y = d - Ec
        tE = E + y
        Ec = (tE - E) - y
        E = tE
        _kadd(acc, 0, e)
        _kadd(acc, 1, w)
        _kadd(acc, 2, V * dt)
        _kadd(acc, 3, V * V * dt)
        if src_mode != SRC_NONE:
            _kadd(acc, 4, h)
            _kadd(acc, 5, s)
        n += 1
        V2 = math.sqrt(2.0 * E / C)
        if V2 < v_lo:
            reason = REASON_LOW
            break
        if V2 >= v_hi:
            reason = REASON_HIGH
            break
    state[0] = E
    state[1] = Ec
    state[2] = t0 + n * dt
    return n, reason, v_min_seen


@njit(cache=True)
def _idle_step(E, t, dt, C, i_fixed, g_res, src_mode, tr_t, tr_v, looped, const_v, r_series, gain, eta_d, rating):
    V = math.sqrt(2.0 * E / C)
    q = (i_fixed * V + g_res * V * V) * dt
    h = 0.0
    s = 0.0
    if src_mode != SRC_NONE:
        vs = _source_v(t, src_mode, tr_t, tr_v, looped, const_v)
        h, s = _charge(V, vs, dt, C, r_series, gain, eta_d, rating)
    E1 = E + h - q
    e_rating = 0.5 * C * rating * rating
    if h > 0.0 and E1 > e_rating:
        h -= E1 - e_rating
        E1 = e_rating
    scale = 1.0
    if E1 < 0.0:
        # The standing load empties the store within this step.
        scale = (E + h) / q
        E1 = 0.0
    return E1, h, s, scale, V


@njit(cache=True)
def run_idle(
    state,
    t_end,
    dt_max,
    i_fixed,
    g_res,
    src_mode,
    tr_t,
    tr_v,
    looped,
    const_v,
    r_series,
    gain,
    eta_d,
    rating,
    v_lo,
    v_hi,
    tol,
    acc,
):
    """Advance with no MCU cycles until a threshold is crossed or ``t_end``.

    Crossings are located by bisection on the step length until the voltage
    is within ``tol`` of the threshold (or the step is below 1 ps).  The
    step that is accepted always lands on the far side of the threshold.
    Returns the stop reason.
    """
    E = state[0]
    Ec = state[1]
    t = state[2]
    C = state[3]
    reason = REASON_TIMEOUT
    while t < t_end:
        dt = dt_max
        if t_end - t < dt:
            dt = t_end - t
        E1, h, s, scale, V = _idle_step(E, t, dt, C, i_fixed, g_res, src_mode, tr_t, tr_v, looped, const_v, r_series, gain, eta_d, rating)
        V1 = math.sqrt(2.0 * E1 / C)
        hit = 0
        if V1 < v_lo:
            hit = REASON_LOW
        elif V1 >= v_hi:
            hit = REASON_HIGH
        if hit != 0:
            thr = v_lo if hit == REASON_LOW else v_hi
            lo = 0.0
            hi = dt
            while hi - lo > 1e-12 and abs(V1 - thr) > tol:
                mid = 0.5 * (lo + hi)
                Em, hm, sm, scalem, _ = _idle_step(E, t, mid, C, i_fixed, g_res, src_mode, tr_t, tr_v, looped, const_v, r_series, gain, eta_d, rating)
                Vm = math.sqrt(2.0 * Em / C)
                crossed = Vm < v_lo if hit == REASON_LOW else Vm >= v_hi
                if crossed:
                    hi = mid
                    E1, h, s, scale, V1 = Em, hm, sm, scalem, Vm
                else:
                    lo = mid
            dt = hi
        d = h - (i_fixed * V + g_res * V * V) * dt * scale
        y = d - Ec
        tE = E + y
        Ec = (tE - E) - y
        E = tE
        if E < 0.0:
            E = 0.0
            Ec = 0.0
        _kadd(acc, 2, V * dt * scale)
        _kadd(acc, 3, V * V * dt * scale)
        _kadd(acc, 4, h)
        _kadd(acc, 5, s)
        t = t + dt
        if hit != 0:
            reason = hit
            break
    state[0] = E
    state[1] = Ec
    state[2] = t
    return reason
