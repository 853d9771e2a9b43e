"""Daily (date x stock) panel: loading, validation, slicing and splitting."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyPanel,
    MissingColumn,
    NoValidStocks,
    SpecOutOfRange,
    UnparseableRow,
)


def as_day(d) -> np.datetime64:
    return np.datetime64(d, "D")


@dataclass(frozen=True)
class ColumnSpec:
    """Column names of the panel CSV. ``features=None`` takes every column that
    is not one of the fixed ones, in header order."""

    date: str = "date"
    stock_id: str = "stock_id"
    ret: str = "return"
    cap_weight: str = "cap_weight"
    industry: str = "industry"
    features: tuple[str, ...] | None = None

    def fixed(self) -> tuple[str, ...]:
        return (self.date, self.stock_id, self.ret, self.cap_weight, self.industry)


@dataclass(frozen=True)
class LoadReport:
    rows: int
    valid: int
    invalid: int
    reasons: dict[str, int]

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2, sort_keys=True))


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Dense (D dates x S stocks) panel.

    Cells with ``valid == False`` carry NaN features/returns/caps and industry -1.
    Stock ids are kept sorted so every cross-section has a deterministic order.
    """

    dates: np.ndarray  # datetime64[D], strictly increasing
    stock_ids: np.ndarray  # str, sorted, unique
    feature_names: tuple[str, ...]
    features: np.ndarray  # (D, S, P)
    returns: np.ndarray  # (D, S)
    cap_weight: np.ndarray  # (D, S)
    industry: np.ndarray  # (D, S) int codes into industry_names, -1 if unknown
    industry_names: tuple[str, ...]
    valid: np.ndarray  # (D, S) bool
    load_report: LoadReport | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("dates", "stock_ids", "features", "returns", "cap_weight", "industry", "valid"):
            getattr(self, name).setflags(write=False)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_stocks(self) -> int:
        return len(self.stock_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_industries(self) -> int:
        return len(self.industry_names)

    def date_index(self, date) -> int:
        d = as_day(date)
        i = int(np.searchsorted(self.dates, d))
        if i >= len(self.dates) or self.dates[i] != d:
            raise KeyError(f"date {d} not in panel")
        return i

    def equals(self, other: "PanelDataset") -> bool:
        """Exact equality on structure and on every valid cell."""
        if not (
            np.array_equal(self.dates, other.dates)
            and np.array_equal(self.stock_ids, other.stock_ids)
            and self.feature_names == other.feature_names
            and np.array_equal(self.valid, other.valid)
        ):
            return False
        v = self.valid
        names_a = np.asarray(self.industry_names, dtype=object)
        names_b = np.asarray(other.industry_names, dtype=object)
        return (
            np.array_equal(self.features[v], other.features[v])
            and np.array_equal(self.returns[v], other.returns[v])
            and np.array_equal(self.cap_weight[v], other.cap_weight[v])
            and np.array_equal(names_a[self.industry[v]], names_b[other.industry[v]])
        )


@dataclass(frozen=True)
class CrossSection:
    date: np.datetime64
    stock_ids: np.ndarray
    columns: np.ndarray  # column indices into the panel
    features: np.ndarray  # (N, P)
    returns: np.ndarray
    caps: np.ndarray
    industries: np.ndarray


@dataclass(frozen=True)
class SplitSpec:
    train_end: str
    valid_end: str
    test_end: str


def _parse_float(text: str, line: int, column: str) -> float:
    if text == "" or text.lower() in ("nan", "na", "null"):
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise UnparseableRow(line, f"column {column!r}: {text!r} is not a number") from None


def load_panel(path, schema: ColumnSpec | None = None, report_path=None) -> PanelDataset:
    """Read a panel CSV (``date,stock_id,f1..fP,return,cap_weight,industry``).

    Rows that parse but fail validation (missing features, non-finite return,
    non-positive cap, missing industry) are kept as ``valid=False`` and counted
    in the load report. Rows that cannot be parsed at all raise ``UnparseableRow``.
    """
    schema = schema or ColumnSpec()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyPanel(f"{path}: no header") from None
        header = [h.strip() for h in header]
        for col in schema.fixed():
            if col not in header:
                raise MissingColumn(col)
        feat_cols = schema.features or tuple(h for h in header if h not in schema.fixed())
        for col in feat_cols:
            if col not in header:
                raise MissingColumn(col)
        if not feat_cols:
            raise MissingColumn("no feature columns")
        pos = {h: i for i, h in enumerate(header)}
        fpos = [pos[c] for c in feat_cols]

        records = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UnparseableRow(line, f"expected {len(header)} fields, got {len(row)}")
            try:
                d = np.datetime64(row[pos[schema.date]].strip(), "D")
            except ValueError:
                raise UnparseableRow(line, f"bad date {row[pos[schema.date]]!r}") from None
            sid = row[pos[schema.stock_id]].strip()
            if not sid:
                raise UnparseableRow(line, "empty stock_id")
            feats = [_parse_float(row[i].strip(), line, header[i]) for i in fpos]
            ret = _parse_float(row[pos[schema.ret]].strip(), line, schema.ret)
            cap = _parse_float(row[pos[schema.cap_weight]].strip(), line, schema.cap_weight)
            ind = row[pos[schema.industry]].strip()
            records.append((line, d, sid, feats, ret, cap, ind))

    if not records:
        raise EmptyPanel(f"{path}: no data rows")

    dates = np.unique(np.array([r[1] for r in records], dtype="datetime64[D]"))
    stock_ids = np.array(sorted({r[2] for r in records}))
    industry_names = tuple(sorted({r[6] for r in records if r[6]}))
    d_index = {d: i for i, d in enumerate(dates.tolist())}
    s_index = {s: i for i, s in enumerate(stock_ids.tolist())}
    i_index = {name: i for i, name in enumerate(industry_names)}

    D, S, P = len(dates), len(stock_ids), len(feat_cols)
    features = np.full((D, S, P), np.nan)
    returns = np.full((D, S), np.nan)
    caps = np.full((D, S), np.nan)
    industry = np.full((D, S), -1, dtype=np.int64)
    valid = np.zeros((D, S), dtype=bool)
    seen = np.zeros((D, S), dtype=bool)
    reasons: Counter = Counter()

    for line, d, sid, feats, ret, cap, ind in records:
        di, si = d_index[d.astype(object)], s_index[sid]
        if seen[di, si]:
            raise UnparseableRow(line, f"duplicate ({d}, {sid})")
        seen[di, si] = True
        f = np.asarray(feats)
        if not np.all(np.isfinite(f)):
            reasons["missing_feature"] += 1
        elif not math.isfinite(ret):
            reasons["nonfinite_return"] += 1
        elif not (math.isfinite(cap) and cap > 0):
            reasons["nonpositive_cap"] += 1
        elif not ind:
            reasons["missing_industry"] += 1
        else:
            features[di, si] = f
            returns[di, si] = ret
            caps[di, si] = cap
            industry[di, si] = i_index[ind]
            valid[di, si] = True

    n_valid = int(valid.sum())
    report = LoadReport(rows=len(records), valid=n_valid, invalid=len(records) - n_valid, reasons=dict(reasons))
    if report_path is not None:
        report.to_json(report_path)
    return PanelDataset(
        dates=dates,
        stock_ids=stock_ids,
        feature_names=tuple(feat_cols),
        features=features,
        returns=returns,
        cap_weight=caps,
        industry=industry,
        industry_names=industry_names,
        valid=valid,
        load_report=report,
    )


def write_panel(panel: PanelDataset, path) -> None:
    """Write the valid cells of ``panel`` in the canonical CSV layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "stock_id", *panel.feature_names, "return", "cap_weight", "industry"])
        for di, d in enumerate(panel.dates):
            ds = str(d)
            for si in np.flatnonzero(panel.valid[di]):
                w.writerow(
                    [
                        ds,
                        panel.stock_ids[si],
                        *(repr(float(x)) for x in panel.features[di, si]),
                        repr(float(panel.returns[di, si])),
                        repr(float(panel.cap_weight[di, si])),
                        panel.industry_names[panel.industry[di, si]],
                    ]
                )


def cross_section(panel: PanelDataset, date) -> CrossSection:
    di = panel.date_index(date)
    cols = np.flatnonzero(panel.valid[di])
    if cols.size == 0:
        raise NoValidStocks(f"no valid stocks on {panel.dates[di]}")
    return CrossSection(
        date=panel.dates[di],
        stock_ids=panel.stock_ids[cols],
        columns=cols,
        features=panel.features[di, cols].copy(),
        returns=panel.returns[di, cols].copy(),
        caps=panel.cap_weight[di, cols].copy(),
        industries=panel.industry[di, cols].copy(),
    )


def split(panel: PanelDataset, spec: SplitSpec) -> tuple[range, range, range]:
    """Partition date indices into (train, valid, test) ranges by end date (inclusive)."""
    a, b, c = as_day(spec.train_end), as_day(spec.valid_end), as_day(spec.test_end)
    if not (a < b < c):
        raise SpecOutOfRange(f"need train_end < valid_end < test_end, got {a}, {b}, {c}")
    if a < panel.dates[0] or c > panel.dates[-1]:
        raise SpecOutOfRange(f"split {a}..{c} outside panel range {panel.dates[0]}..{panel.dates[-1]}")
    ia = int(np.searchsorted(panel.dates, a, side="right"))
    ib = int(np.searchsorted(panel.dates, b, side="right"))
    ic = int(np.searchsorted(panel.dates, c, side="right"))
    return range(0, ia), range(ia, ib), range(ib, ic)


def standardize(panel: PanelDataset, zscore: bool = False, winsorize: float | None = None) -> PanelDataset:
    """Optional per-date feature preprocessing (both off by default).

    ``winsorize`` clips each feature to its per-date [q, 1-q] quantiles;
    ``zscore`` then rescales to zero mean, unit population std over valid stocks.
    """
    if not zscore and winsorize is None:
        return panel
    feats = np.array(panel.features)
    for di in range(panel.n_dates):
        cols = np.flatnonzero(panel.valid[di])
        if cols.size == 0:
            continue
        x = feats[di, cols]
        if winsorize is not None:
            lo, hi = np.quantile(x, [winsorize, 1.0 - winsorize], axis=0)
            x = np.clip(x, lo, hi)
        if zscore:
            sd = x.std(axis=0)
            x = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        feats[di, cols] = x
    return replace(panel, features=feats)
