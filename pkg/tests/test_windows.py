import pytest
from hypothesis import given
from hypothesis import strategies as st

from idvfs.windows import PerformanceWindow, WindowTable, WindowTableError, validate_table, window_for_voltage


def test_msp430_table_is_valid(table):
    validate_table(table.windows)
    assert [w.freq_hz for w in table] == [1e6, 8e6, 12e6, 16e6]
    assert [w.v_floor for w in table] == [1.8, 2.2, 2.8, 3.3]
    assert [w.v_ceiling for w in table] == [2.2, 2.8, 3.3, 3.6]


def test_gap_is_rejected():
    with pytest.raises(WindowTableError, match="gap"):
        WindowTable.from_rows([(1e6, 1.8, 1.8, 2.2), (8e6, 2.4, 2.4, 2.8)])


def test_overlap_is_rejected():
    with pytest.raises(WindowTableError, match="overlap"):
        WindowTable.from_rows([(1e6, 1.8, 1.8, 2.4), (8e6, 2.2, 2.2, 2.8)])


def test_descending_frequency_is_rejected():
    with pytest.raises(WindowTableError, match="frequency"):
        WindowTable.from_rows([(8e6, 1.8, 1.8, 2.2), (1e6, 2.2, 2.2, 2.8)])


def test_empty_table_is_rejected():
    with pytest.raises(WindowTableError, match="empty"):
        validate_table([])


def test_regulator_must_sit_at_floor():
    with pytest.raises(WindowTableError, match="v_reg"):
        WindowTable.from_rows([(1e6, 1.9, 1.8, 2.2)])


def test_floor_below_ceiling():
    with pytest.raises(WindowTableError):
        validate_table([PerformanceWindow(1e6, 2.2, 2.2, 2.2)])


@pytest.mark.parametrize(
    "v, expected",
    [(3.0, 2), (1.7, None), (3.6, 3), (1.8, 0), (2.2, 1), (2.8, 2), (3.3, 3), (2.1999, 0), (3.7, 3)],
)
def test_window_for_voltage(table, v, expected):
    assert window_for_voltage(table, v) == expected


@st.composite
def tables(draw):
    n = draw(st.integers(1, 6))
    lo = draw(st.floats(0.5, 3.0))
    widths = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    edges = [lo]
    for w in widths:
        edges.append(edges[-1] + w)
    return WindowTable.from_rows(((i + 1) * 1e6, edges[i], edges[i], edges[i + 1]) for i in range(n))


@given(tables(), st.floats(0.0, 1.0))
def test_lookup_is_total_inside_range(t, frac):
    v = min(t.v_max, t.v_min + frac * (t.v_max - t.v_min))
    idx = window_for_voltage(t, v)
    assert idx is not None
    w = t[idx]
    assert w.contains(v, top=idx == t.top)


@given(tables(), st.floats(0.0, 6.0), st.floats(0.0, 6.0))
def test_lookup_is_monotone(t, a, b):
    lo, hi = sorted((a, b))
    ia, ib = window_for_voltage(t, lo), window_for_voltage(t, hi)
    assert (-1 if ia is None else ia) <= (-1 if ib is None else ib)


@given(tables())
def test_midpoint_round_trip(t):
    for i, w in enumerate(t):
        assert window_for_voltage(t, 0.5 * (w.v_floor + w.v_ceiling)) == i
