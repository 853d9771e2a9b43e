"""Factor-quality statistics: significance, collinearity, stability and explained variance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoOverlap, SingularGram
from .factornet import FactorMatrix
from .objective import vif_bruteforce
from .panel import PanelDataset
from .riskmodel import FactorReturnSeries, factor_return_series


@dataclass(frozen=True)
class Significance:
    mean_abs_t: np.ndarray
    pct_abs_t_gt2: np.ndarray
    n_dates: np.ndarray  # dates with a defined t-stat, per factor
    n_excluded: int  # dates where every selected t-stat was undefined


def significance_stats(series: FactorReturnSeries, factors: Sequence[int] | slice | None = None) -> Significance:
    """Mean |t| and share of dates with |t| > 2 per coefficient; NaN t-stats are skipped."""
    sel = series.style_slice if factors is None else factors
    T = np.abs(series.tstats[:, sel])
    ok = np.isfinite(T)
    n = ok.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_t = np.where(ok, T, 0.0).sum(axis=0) / n
        pct = np.where(ok, T > 2.0, False).sum(axis=0) / n
    return Significance(mean_t, pct, n, int((~ok.any(axis=1)).sum()))


def _pearson_cols(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    den = np.sqrt((a * a).sum(axis=0) * (b * b).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return (a * b).sum(axis=0) / den


def autocorrelation_pairs(factors: Sequence[FactorMatrix], lag: int = 1) -> np.ndarray:
    """(pairs, K) cross-sectional Pearson correlations of F_t with F_{t-lag} over common stocks."""
    if len(factors) <= lag:
        raise NoOverlap(f"need more than {lag} factor dates")
    rows = []
    for prev, cur in zip(factors[:-lag], factors[lag:]):
        common, ia, ib = np.intersect1d(prev.stock_ids, cur.stock_ids, return_indices=True)
        if common.size < 2:
            continue
        rows.append(_pearson_cols(cur.values[ib], prev.values[ia]))
    if not rows:
        raise NoOverlap("no consecutive dates share two or more stocks")
    return np.array(rows)


def autocorrelation(factors: Sequence[FactorMatrix], lag: int = 1) -> np.ndarray:
    """Per-factor mean lag autocorrelation."""
    return np.nanmean(autocorrelation_pairs(factors, lag), axis=0)


@dataclass(frozen=True)
class R2Series:
    dates: np.ndarray
    r2: np.ndarray
    mean: float


def r2_series(
    factors: Sequence[FactorMatrix],
    panel: PanelDataset,
    weights_mode: str = "equal",
    alignment: str = "forward",
    series: FactorReturnSeries | None = None,
) -> R2Series:
    """Per-date R^2 of the country + industry + factor regression, and its mean."""
    series = series or factor_return_series(factors, panel, weights_mode, alignment)
    ok = np.isfinite(series.r2)
    return R2Series(series.dates[ok], series.r2[ok], float(series.r2[ok].mean()) if ok.any() else float("nan"))


@dataclass(frozen=True)
class VifReport:
    mean_vif: np.ndarray  # brute-force VIF averaged over dates
    mean_vif_trace_form: np.ndarray  # N * diag((F'F)^-1), the per-factor terms of N tr((F'F)^-1)
    per_date: np.ndarray  # (dates, K) brute force
    per_date_trace_form: np.ndarray
    n_skipped: int
    dates: np.ndarray  # dates behind the per-date rows


def vif_report(factors: Sequence[FactorMatrix]) -> VifReport:
    """Per-factor VIFs averaged over dates; singular dates are skipped and counted.

    The trace-form value differs from the regression VIF when a column's squared
    norm is not exactly N (norm_op centers with cap weights, not equal weights),
    and can dip below 1.
    """
    rows, rows_tr, kept, skipped = [], [], [], 0
    for fm in factors:
        F = fm.values
        try:
            v = vif_bruteforce(F)
            G = F.T @ F
            tr = F.shape[0] * np.diag(np.linalg.inv(G))
        except (SingularGram, np.linalg.LinAlgError):
            skipped += 1
            continue
        rows.append(v)
        rows_tr.append(tr)
        kept.append(fm.date)
    if not rows:
        raise SingularGram("every date has a singular factor Gram matrix")
    A, B = np.array(rows), np.array(rows_tr)
    return VifReport(A.mean(axis=0), B.mean(axis=0), A, B, skipped, np.array(kept))
