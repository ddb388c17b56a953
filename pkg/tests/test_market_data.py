from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubblealarm.market_data import (
    DataError,
    OutOfRangeError,
    PriceSeries,
    RateSeries,
    load_price_series,
    load_riskfree,
    price_on,
    to_day,
    write_series,
)


def write_csv(path, rows, header=("Date", "Adj Close")):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_three_row_csv(tmp_path):
    p = write_csv(tmp_path / "px.csv", [("2000-01-03", 100), ("2000-01-04", 101), ("2000-01-05", 102)])
    s = load_price_series(p)
    assert len(s) == 3
    assert s.dates == [date(2000, 1, 3), date(2000, 1, 4), date(2000, 1, 5)]
    np.testing.assert_array_equal(s.prices, [100.0, 101.0, 102.0])


def test_rows_sorted_on_load(tmp_path):
    p = write_csv(tmp_path / "px.csv", [("2000-01-05", 102), ("2000-01-03", 100), ("2000-01-04", 101)])
    s = load_price_series(p)
    np.testing.assert_array_equal(s.prices, [100.0, 101.0, 102.0])


@pytest.mark.parametrize("bad", ["0", "-3.5"])
def test_non_positive_price_rejected(tmp_path, bad):
    p = write_csv(tmp_path / "px.csv", [("2000-01-03", 100), ("2000-01-04", bad)])
    with pytest.raises(DataError, match="non-positive"):
        load_price_series(p)


def test_duplicate_date_rejected(tmp_path):
    p = write_csv(tmp_path / "px.csv", [("2000-01-03", 100), ("2000-01-03", 101)])
    with pytest.raises(DataError, match="duplicate"):
        load_price_series(p)


def test_malformed_row_names_line(tmp_path):
    p = write_csv(tmp_path / "px.csv", [("2000-01-03", 100), ("2000-01-04", "abc"), ("2000-01-05", 101)])
    with pytest.raises(DataError, match=":3:"):
        load_price_series(p)


def test_missing_column(tmp_path):
    p = write_csv(tmp_path / "px.csv", [("2000-01-03", 100)], header=("Date", "Close"))
    with pytest.raises(DataError, match="Adj Close"):
        load_price_series(p)
    assert len(load_price_series(p, price_col="Close")) == 1


def test_custom_columns_and_extra_fields(tmp_path):
    p = tmp_path / "px.csv"
    p.write_text("day,open,close\n2001-02-01,1,5\n2001-02-02,1,6\n")
    s = load_price_series(p, date_col="day", price_col="close")
    np.testing.assert_array_equal(s.prices, [5.0, 6.0])


def test_price_on_exact_and_forward_fill():
    mon, tue = date(2024, 1, 1), date(2024, 1, 2)
    s = PriceSeries([mon.toordinal(), tue.toordinal()], [100.0, 101.0])
    assert price_on(s, tue) == 101.0
    fri = date(2024, 1, 5)
    s2 = PriceSeries([fri.toordinal(), date(2024, 1, 8).toordinal()], [100.0, 102.0])
    assert s2.price_on(date(2024, 1, 6)) == 100.0
    assert s2.price_on("2024-01-07") == 100.0


def test_price_on_before_first_observation():
    s = PriceSeries([to_day("2024-01-02")], [10.0])
    with pytest.raises(OutOfRangeError):
        s.price_on("2024-01-01")


def test_riskfree_two_rows(tmp_path):
    p = write_csv(tmp_path / "rf.csv", [("2005-01-03", 0.022), ("2005-01-04", 0.023)], header=("Date", "Rate"))
    rf = load_riskfree(p)
    assert len(rf) == 2
    assert rf.rate_on("2005-01-10") == 0.023


def test_riskfree_empty_file(tmp_path):
    p = tmp_path / "rf.csv"
    p.write_text("")
    with pytest.raises(DataError):
        load_riskfree(p)
    p.write_text("Date,Rate\n")
    with pytest.raises(DataError):
        load_riskfree(p)


def test_riskfree_allows_negative_rates(tmp_path):
    p = write_csv(tmp_path / "rf.csv", [("2015-01-05", -0.001)], header=("Date", "Rate"))
    assert load_riskfree(p).rate_on("2015-02-01") == -0.001


def test_constant_rate():
    rf = RateSeries.constant(0.03, "2000-01-01")
    assert rf.rate_on("2030-06-30") == 0.03
    with pytest.raises(OutOfRangeError):
        rf.rate_on("1999-12-31")


def test_series_is_immutable():
    s = PriceSeries([1, 2], [1.0, 2.0])
    with pytest.raises(ValueError):
        s.values[0] = 5.0


def test_calendar_forward_fill():
    s = PriceSeries([10, 13], [1.0, 2.0])
    days, vals = s.calendar()
    np.testing.assert_array_equal(days, [10, 11, 12, 13])
    np.testing.assert_array_equal(vals, [1.0, 1.0, 1.0, 2.0])


def test_truncate_keeps_prefix():
    s = PriceSeries([1, 2, 5, 9], [1.0, 2.0, 3.0, 4.0])
    t = s.truncate(5)
    np.testing.assert_array_equal(t.days, [1, 2, 5])


@st.composite
def price_series(draw):
    n = draw(st.integers(1, 40))
    gaps = draw(st.lists(st.integers(1, 5), min_size=n, max_size=n))
    days = 730000 + np.cumsum(gaps)
    prices = draw(st.lists(st.floats(1e-3, 1e6, allow_nan=False), min_size=n, max_size=n))
    return PriceSeries(days, prices)


@settings(max_examples=50, deadline=None)
@given(price_series())
def test_write_load_round_trip(tmp_path_factory, s):
    p = tmp_path_factory.mktemp("rt") / "px.csv"
    write_series(p, s)
    back = load_price_series(p)
    np.testing.assert_array_equal(back.days, s.days)
    np.testing.assert_array_equal(back.prices, s.prices)


@settings(max_examples=50, deadline=None)
@given(price_series(), st.integers(0, 200))
def test_price_on_idempotent_and_monotone(s, offset):
    d = s.first_day + offset
    assert s.price_on(d) == s.price_on(d)
    inc = PriceSeries(s.days, np.sort(s.prices))
    q = [inc.price_on(x) for x in range(s.first_day, s.first_day + offset + 1)]
    assert all(a <= b for a, b in zip(q, q[1:]))
