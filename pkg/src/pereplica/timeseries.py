"""Dated series, panels, CSV ingestion and return/level conversions.

All containers are frozen dataclasses over read-only numpy arrays. Dates are
``datetime64[D]`` without timezone. Returns are simple (arithmetic) returns
and every input is treated as a total-return series.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "#n/a"})
FFILL_CAP = 5


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def as_dates(values: Iterable) -> np.ndarray:
    """Coerce ISO strings, ``date`` objects or datetime64 values to ``datetime64[D]``."""
    try:
        return np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                          dtype="datetime64[D]")
    except ValueError as exc:
        raise DataError(f"unparseable date: {exc}") from None


@dataclass(frozen=True, eq=False)
class DateIndex:
    """Strictly increasing, non-empty sequence of calendar days."""

    dates: np.ndarray

    def __post_init__(self):
        d = as_dates(self.dates)
        if d.ndim != 1 or d.size == 0:
            raise DataError("date index must be a non-empty 1-D sequence")
        if d.size > 1:
            steps = np.diff(d).astype(np.int64)
            if np.any(steps == 0):
                dup = d[1:][steps == 0][0]
                raise DataError(f"duplicate date {dup}")
            if np.any(steps < 0):
                raise DataError("dates must be strictly increasing")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "dates", d)

    def __len__(self) -> int:
        return self.dates.size

    def __eq__(self, other) -> bool:
        return isinstance(other, DateIndex) and np.array_equal(self.dates, other.dates)

    def __getitem__(self, item):
        if isinstance(item, (int, np.integer)):
            return self.dates[item]
        return DateIndex(self.dates[item])

    @property
    def first(self) -> np.datetime64:
        return self.dates[0]

    @property
    def last(self) -> np.datetime64:
        return self.dates[-1]

    def iso(self) -> list[str]:
        return [str(d) for d in self.dates]

    def mask_between(self, start=None, end=None) -> np.ndarray:
        """Boolean mask of dates in the closed interval ``[start, end]``."""
        m = np.ones(self.dates.size, dtype=bool)
        if start is not None:
            m &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            m &= self.dates <= np.datetime64(end, "D")
        return m


def _index(index) -> DateIndex:
    return index if isinstance(index, DateIndex) else DateIndex(index)


class _Dated:
    """Shared slicing helpers; subclasses define ``_take(mask_or_slice)``."""

    index: DateIndex

    def __len__(self) -> int:
        return len(self.index)

    @property
    def dates(self) -> np.ndarray:
        return self.index.dates

    def between(self, start=None, end=None):
        mask = self.index.mask_between(start, end)
        if not mask.any():
            raise DataError(f"no observations between {start} and {end}")
        return self._take(mask)

    def take(self, selector):
        return self._take(selector)


@dataclass(frozen=True, eq=False)
class Series(_Dated):
    """Generic dated float series (signals, levels); NaN allowed."""

    index: DateIndex
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "index", _index(self.index))
        v = _frozen(self.values)
        if v.shape != (len(self.index),):
            raise DataError(f"series length {v.shape} does not match index length {len(self.index)}")
        object.__setattr__(self, "values", v)

    def _take(self, sel):
        return type(self)(self.index.dates[sel], self.values[sel], self.name)


@dataclass(frozen=True, eq=False)
class ReturnSeries(Series):
    """Per-period simple returns; every value must exceed -1."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"non-finite return in series {self.name!r}")
        if np.any(self.values <= -1.0):
            raise DataError(f"return <= -100% in series {self.name!r}")


@dataclass(frozen=True, eq=False)
class NavSeries(Series):
    """Strictly positive value levels."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0.0):
            raise DataError(f"NAV levels must be finite and > 0 in series {self.name!r}")


@dataclass(frozen=True, eq=False)
class AssetPanel(_Dated):
    """Aligned T x K matrix of simple returns with named columns."""

    index: DateIndex
    asset_names: tuple
    returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "index", _index(self.index))
        names = tuple(str(n) for n in self.asset_names)
        if len(set(names)) != len(names):
            raise DataError(f"asset names must be unique: {names}")
        r = _frozen(self.returns)
        if r.ndim != 2 or r.shape != (len(self.index), len(names)):
            raise DataError(
                f"panel shape {r.shape} does not match index {len(self.index)} x assets {len(names)}")
        if not np.all(np.isfinite(r)):
            raise DataError("panel contains missing or non-finite cells")
        object.__setattr__(self, "asset_names", names)
        object.__setattr__(self, "returns", r)

    @property
    def n_assets(self) -> int:
        return len(self.asset_names)

    def _take(self, sel):
        return AssetPanel(self.index.dates[sel], self.asset_names, self.returns[sel])

    def column(self, name: str) -> ReturnSeries:
        try:
            k = self.asset_names.index(name)
        except ValueError:
            raise DataError(f"unknown asset {name!r}; have {list(self.asset_names)}") from None
        return ReturnSeries(self.index, self.returns[:, k], name)

    def select(self, names: Sequence[str]) -> "AssetPanel":
        cols = [self.asset_names.index(n) if n in self.asset_names else None for n in names]
        if None in cols:
            missing = [n for n, c in zip(names, cols) if c is None]
            raise DataError(f"unknown assets {missing}")
        return AssetPanel(self.index, tuple(names), self.returns[:, cols])


@dataclass(frozen=True, eq=False)
class WeightPath(_Dated):
    """Dated T x K weight matrix."""

    index: DateIndex
    asset_names: tuple
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "index", _index(self.index))
        object.__setattr__(self, "asset_names", tuple(self.asset_names))
        w = _frozen(self.weights)
        if w.shape != (len(self.index), len(self.asset_names)):
            raise DataError(f"weight matrix shape {w.shape} does not match index/assets")
        object.__setattr__(self, "weights", w)

    def _take(self, sel):
        return WeightPath(self.index.dates[sel], self.asset_names, self.weights[sel])


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def read_table(path, date_column: str = "date", missing: str = "reject"):
    """Parse a dated numeric CSV into ``(dates, column_names, matrix)``.

    Rows come back sorted ascending by date. ``missing`` is ``"reject"`` or
    ``"ffill"`` (forward-fill, at most ``FFILL_CAP`` consecutive cells per column).
    """
    if missing not in ("reject", "ffill"):
        raise DataError(f"unknown missing-data policy {missing!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if date_column not in header:
        raise DataError(f"{path}: date column {date_column!r} not in header {header}")
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    dcol = header.index(date_column)
    names = [h for i, h in enumerate(header) if i != dcol]
    if not names:
        raise DataError(f"{path}: no value columns")

    dates = []
    data = np.empty((len(rows) - 1, len(names)))
    for i, row in enumerate(rows[1:]):
        line = i + 2  # 1-based file line, header is line 1
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} cells, expected {len(header)}")
        try:
            dates.append(np.datetime64(row[dcol].strip(), "D"))
        except ValueError:
            raise DataError(
                f"{path}: row {line}, column {date_column!r}: unparseable date {row[dcol]!r}") from None
        vals = [c for j, c in enumerate(row) if j != dcol]
        for k, cell in enumerate(vals):
            cell = cell.strip()
            if cell.lower() in MISSING_TOKENS:
                data[i, k] = np.nan
                continue
            try:
                x = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {line}, column {names[k]!r}: unparseable number {cell!r}") from None
            if not math.isfinite(x):
                raise DataError(f"{path}: row {line}, column {names[k]!r}: non-finite value {cell!r}")
            data[i, k] = x

    dates = np.array(dates, dtype="datetime64[D]")
    order = np.argsort(dates, kind="stable")
    dates, data = dates[order], data[order]
    steps = np.diff(dates).astype(np.int64)
    if np.any(steps == 0):
        raise DataError(f"{path}: duplicate date {dates[1:][steps == 0][0]}")

    holes = np.isnan(data)
    if holes.any():
        if missing == "reject":
            i, k = np.argwhere(holes)[0]
            raise DataError(f"{path}: missing value on {dates[i]}, column {names[k]!r}")
        data = _ffill(data, dates, names, path)
    return dates, names, data


def _ffill(data, dates, names, path):
    out = data.copy()
    for k in range(out.shape[1]):
        run = 0
        for i in range(out.shape[0]):
            if np.isnan(out[i, k]):
                if i == 0:
                    raise DataError(f"{path}: column {names[k]!r} starts with a missing value")
                run += 1
                if run > FFILL_CAP:
                    raise DataError(
                        f"{path}: column {names[k]!r} has more than {FFILL_CAP} consecutive "
                        f"missing values ending {dates[i]}")
                out[i, k] = out[i - 1, k]
            else:
                run = 0
    return out


def load_csv(path, date_column: str = "date", missing: str = "reject") -> AssetPanel:
    """Load a returns CSV as an :class:`AssetPanel` (columns in header order)."""
    dates, names, data = read_table(path, date_column, missing)
    return AssetPanel(dates, tuple(names), data)


def load_panel(path, kind: str = "returns", date_column: str = "date",
               missing: str = "reject") -> AssetPanel:
    """Load a panel from a returns-CSV or a levels-CSV (``kind``)."""
    dates, names, data = read_table(path, date_column, missing)
    if kind == "returns":
        return AssetPanel(dates, tuple(names), data)
    if kind == "levels":
        if np.any(data <= 0):
            raise DataError(f"{path}: levels must be > 0")
        return AssetPanel(dates[1:], tuple(names), data[1:] / data[:-1] - 1.0)
    raise DataError(f"unknown CSV kind {kind!r}; expected 'returns' or 'levels'")


def load_nav(path, kind: str = "levels", column: str | None = None, date_column: str = "date",
             missing: str = "reject", base: float = 100.0) -> NavSeries:
    """Load one column as a NAV track; a returns-CSV is compounded from ``base``."""
    dates, names, data = read_table(path, date_column, missing)
    if column is None:
        if len(names) != 1:
            raise DataError(f"{path}: several value columns {names}; pick one")
        column = names[0]
    if column not in names:
        raise DataError(f"{path}: column {column!r} not found")
    v = data[:, names.index(column)]
    if kind == "levels":
        return NavSeries(dates, v, column)
    if kind == "returns":
        return returns_to_nav(ReturnSeries(dates, v, column), base)
    raise DataError(f"unknown CSV kind {kind!r}; expected 'returns' or 'levels'")


def load_returns(path, column: str | None = None, kind: str = "returns",
                 date_column: str = "date", missing: str = "reject") -> ReturnSeries:
    if kind == "levels":
        return nav_to_returns(load_nav(path, "levels", column, date_column, missing))
    dates, names, data = read_table(path, date_column, missing)
    if column is None:
        if len(names) != 1:
            raise DataError(f"{path}: several value columns {names}; pick one")
        column = names[0]
    if column not in names:
        raise DataError(f"{path}: column {column!r} not found")
    return ReturnSeries(dates, data[:, names.index(column)], column)


def write_csv(path, dates, columns: dict, fmt: str = "{!r}") -> None:
    """Write ``date`` plus named columns; floats use ``repr`` for exact round trips."""
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *names])
        for i, d in enumerate(np.asarray(dates, dtype="datetime64[D]")):
            w.writerow([str(d), *(fmt.format(float(c[i])) for c in cols)])


# ---------------------------------------------------------------------------
# Alignment and conversions
# ---------------------------------------------------------------------------

def align_inner(a, b):
    """Restrict two dated objects to their common dates (order preserved)."""
    common = np.intersect1d(a.dates, b.dates)
    if common.size == 0:
        raise DataError("no common dates")
    return a._take(np.isin(a.dates, common)), b._take(np.isin(b.dates, common))


def align_all(*items):
    common = items[0].dates
    for it in items[1:]:
        common = np.intersect1d(common, it.dates)
    if common.size == 0:
        raise DataError("no common dates")
    return tuple(it._take(np.isin(it.dates, common)) for it in items)


def nav_to_returns(nav: NavSeries) -> ReturnSeries:
    if len(nav) < 2:
        raise DataError("need at least two NAV points to form returns")
    v = nav.values
    return ReturnSeries(nav.dates[1:], v[1:] / v[:-1] - 1.0, nav.name)


def returns_to_nav(r: ReturnSeries, base: float = 100.0, base_date=None) -> NavSeries:
    """Compound returns from ``base``.

    The base point is dated ``base_date`` or, by default, one calendar day
    before the first return.
    """
    if not base > 0:
        raise DataError("base level must be > 0")
    v = np.asarray(r.values, dtype=np.float64)
    if np.any(v <= -1.0):
        raise DataError("return <= -100% cannot be compounded")
    if base_date is None:
        base_date = r.dates[0] - np.timedelta64(1, "D")
    levels = base * np.concatenate(([1.0], np.cumprod(1.0 + v)))
    dates = np.concatenate(([np.datetime64(base_date, "D")], r.dates))
    return NavSeries(dates, levels, r.name)


def quarter_keys(dates) -> np.ndarray:
    """Integer calendar-quarter id (year * 4 + quarter - 1) of each date."""
    months = np.asarray(dates, dtype="datetime64[M]").astype(np.int64)  # months since 1970-01
    return months // 3


def resample_quarterly(r: ReturnSeries) -> ReturnSeries:
    """Compound returns within each calendar quarter; stamp on the quarter's last date."""
    if len(r) == 0:
        raise DataError("empty series")
    q = quarter_keys(r.dates)
    starts = np.flatnonzero(np.r_[True, q[1:] != q[:-1]])
    ends = np.r_[starts[1:], q.size] - 1
    growth = np.multiply.reduceat(1.0 + r.values, starts)
    return ReturnSeries(r.dates[ends], growth - 1.0, r.name)


def business_days(start, n: int) -> np.ndarray:
    """``n`` consecutive weekdays starting at or after ``start``."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")
