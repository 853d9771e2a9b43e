"""CSV/JSON emission and parsing for factor matrices, factor returns, covariances and weights."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingColumn, UnparseableRow
from .factornet import FactorMatrix
from .portfolio import PortfolioWeights
from .riskmodel import FactorReturnSeries


def _f(x: float) -> str:
    return repr(float(x))


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def write_factors(factors: Sequence[FactorMatrix], path) -> None:
    """Long format ``date,stock_id,f1..fK``."""
    K = factors[0].values.shape[1] if factors else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "stock_id", *(f"f{k + 1}" for k in range(K))])
        for fm in factors:
            d = str(fm.date)
            for sid, row in zip(fm.stock_ids, fm.values):
                w.writerow([d, sid, *map(_f, row)])


def read_factors(path) -> list[FactorMatrix]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["date", "stock_id"]:
            raise MissingColumn("factor file must start with date,stock_id")
        K = len(header) - 2
        groups: dict[str, tuple[list, list]] = {}
        for row in r:
            if len(row) != K + 2:
                raise UnparseableRow(r.line_num, f"expected {K + 2} fields")
            ids, vals = groups.setdefault(row[0], ([], []))
            ids.append(row[1])
            try:
                vals.append([float(v) for v in row[2:]])
            except ValueError:
                raise UnparseableRow(r.line_num, "non-numeric factor value") from None
    out = []
    for d in sorted(groups):
        ids, vals = groups[d]
        ids = np.array(ids)
        order = np.argsort(ids, kind="stable")
        out.append(FactorMatrix(np.datetime64(d, "D"), ids[order], np.array(vals).reshape(-1, K)[order]))
    return out


def write_factor_returns(series: FactorReturnSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *series.names])
        for d, row in zip(series.dates, series.coef):
            w.writerow([str(d), *map(_f, row)])


def write_covariance(sigma: np.ndarray, stock_ids, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stock_id", *stock_ids])
        for sid, row in zip(stock_ids, sigma):
            w.writerow([sid, *map(_f, row)])


def read_covariance(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        ids = next(r)[1:]
        rows = [[float(v) for v in row[1:]] for row in r]
    return np.array(rows), np.array(ids)


def write_weights(weights: Sequence[PortfolioWeights], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "stock_id", "weight"])
        for pw in weights:
            for sid, x in zip(pw.stock_ids, pw.w):
                w.writerow([str(pw.date), sid, _f(x)])


def read_weights(path) -> list[PortfolioWeights]:
    groups: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for d, sid, x in r:
            ids, ws = groups.setdefault(d, ([], []))
            ids.append(sid)
            ws.append(float(x))
    return [PortfolioWeights(np.datetime64(d, "D"), np.array(groups[d][0]), np.array(groups[d][1])) for d in sorted(groups)]


def write_table(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_f(v) if isinstance(v, (float, np.floating)) else str(v) for v in row])
