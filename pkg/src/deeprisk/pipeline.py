"""End-to-end glue shared by the command line and the experiment scripts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import baselines, diagnostics, trainer
from .config import cov_config  # noqa: F401  (re-exported for the CLI)
from .errors import InsufficientHistory, NoOverlap
from .factornet import FactorMatrix, NetConfig
from .panel import PanelDataset, SplitSpec, split
from .portfolio import (
    PortfolioWeights,
    annualized_vol,
    daily_portfolio_returns,
    gmv_long_only,
    gmv_weights,
    turnover,
)
from .riskmodel import FactorReturnSeries, estimate_covariance, factor_return_series


def split_ranges(panel: PanelDataset, cfg: dict) -> tuple[range, range, range]:
    if cfg.get("train_end"):
        return split(panel, SplitSpec(cfg["train_end"], cfg["valid_end"], cfg["test_end"]))
    D = panel.n_dates
    a = int(round(D * cfg["train_frac"]))
    b = a + int(round(D * cfg["valid_frac"]))
    return range(0, a), range(a, b), range(b, D)


def compute_factors(
    model: str,
    panel: PanelDataset,
    cfg: dict,
    dates: Sequence[int] | None = None,
    params: dict | None = None,
    net_cfg: NetConfig | None = None,
    K: int | None = None,
) -> list[FactorMatrix]:
    """Factor matrices for ``dates`` (default: every date the model can be evaluated on)."""
    if model == "frm":
        idx = range(panel.n_dates) if dates is None else dates
        return [baselines.frm_factors(panel, panel.dates[t]) for t in idx]
    if model == "srm":
        w = cfg["srm_window"]
        idx = range(w - 1, panel.n_dates) if dates is None else dates
        k = K or cfg["K"]
        return [baselines.srm_factors(panel, panel.dates[t], k, w, cfg["srm_use_correlation"]) for t in idx]
    if model == "drm":
        if params is None or net_cfg is None:
            raise ValueError("drm factors need trained parameters")
        idx = range(net_cfg.lookback - 1, panel.n_dates) if dates is None else dates
        return trainer.infer_factors(
            params, net_cfg, panel, idx, cfg["smoothing"], cfg["smoothing_weight_on_previous"]
        )
    raise ValueError(f"unknown model {model!r}")


def test_factor_dates(factors: Sequence[FactorMatrix], panel: PanelDataset, test: range) -> list[FactorMatrix]:
    """Factor dates whose next-day return falls in the test range."""
    if len(test) == 0:
        raise NoOverlap("empty test range")
    lo, hi = test.start - 1, test.stop - 2
    out = [fm for fm in factors if lo <= panel.date_index(fm.date) <= hi]
    if not out:
        raise NoOverlap("no factor dates inside the test range")
    return out


@dataclass
class BacktestResult:
    gmv: list[PortfolioWeights]
    gmv_plus: list[PortfolioWeights]
    summary: dict
    cov_metadata: list[dict]


def run_backtest(
    factors: Sequence[FactorMatrix],
    panel: PanelDataset,
    test: range,
    cfg: dict,
    series: FactorReturnSeries | None = None,
) -> BacktestResult:
    """Rebalance GMV / GMV+ every ``rebalance_every`` days over the test range.

    The covariance at a rebalance date only uses factor returns realized up to
    that date; portfolios are held from the next day until the next rebalance.
    """
    if len(test) == 0:
        raise NoOverlap("empty test range")
    series = series or factor_return_series(factors, panel, cfg["weights_mode"], cfg["alignment"])
    by_date = {panel.date_index(fm.date): fm for fm in factors}
    ccfg = cov_config(cfg)
    gmv, gmv_plus, ew, mkt, metas = [], [], [], [], []
    for t in range(test.start - 1, test.stop - 1, cfg["rebalance_every"]):
        fm = by_date.get(t)
        if fm is None:
            raise InsufficientHistory(f"no factors on rebalance date {panel.dates[t]}")
        est = estimate_covariance(fm, panel, series, ccfg)
        gmv.append(gmv_weights(est.sigma, fm.date, fm.stock_ids))
        gmv_plus.append(gmv_long_only(est.sigma, cfg["long_only_tol"], date=fm.date, stock_ids=fm.stock_ids))
        n = len(fm.stock_ids)
        ew.append(PortfolioWeights(fm.date, fm.stock_ids, np.full(n, 1.0 / n)))
        caps = panel.cap_weight[t, np.searchsorted(panel.stock_ids, fm.stock_ids)]
        mkt.append(PortfolioWeights(fm.date, fm.stock_ids, caps / caps.sum()))
        metas.append(est.metadata)
    end = test.stop - 1
    ann = cfg["annualization"]
    vols = {name: annualized_vol(daily_portfolio_returns(ws, panel, end)[1], ann) for name, ws in
            (("gmv", gmv), ("gmv_plus", gmv_plus), ("equal_weight", ew), ("market", mkt))}
    summary = {
        "gmv_vol": vols["gmv"],
        "gmv_plus_vol": vols["gmv_plus"],
        "equal_weight_vol": vols["equal_weight"],
        "market_vol": vols["market"],
        "gmv_turnover": turnover(gmv),
        "gmv_plus_turnover": turnover(gmv_plus),
        "rebalance_dates": [str(pw.date) for pw in gmv],
        "first_return_date": str(panel.dates[test.start]),
        "last_return_date": str(panel.dates[end]),
        "annualization": ann,
        "rebalance_every": cfg["rebalance_every"],
        "psd_repaired_dates": [m["date"] for m in metas if m["psd_repaired"]],
    }
    return BacktestResult(gmv, gmv_plus, summary, metas)


@dataclass
class Report:
    metrics: dict
    r2: diagnostics.R2Series
    tstats: np.ndarray  # (dates, K) style t-stats on the test window
    tstat_dates: np.ndarray
    vif: diagnostics.VifReport
    autocorr_pairs: np.ndarray
    autocorr_dates: list
    series: FactorReturnSeries


def build_report(factors: Sequence[FactorMatrix], panel: PanelDataset, test: range, cfg: dict, backtest: BacktestResult | None = None) -> Report:
    """Table-style metrics on the test window plus the per-date data behind them."""
    series = factor_return_series(factors, panel, cfg["weights_mode"], cfg["alignment"])
    tf = test_factor_dates(factors, panel, test)
    lo, hi = panel.dates[test.start], panel.dates[test.stop - 1]
    in_test = (series.dates >= lo) & (series.dates <= hi)
    sub = FactorReturnSeries(
        series.dates[in_test], series.names, series.coef[in_test], series.tstats[in_test],
        series.residuals[in_test], series.r2[in_test], (), series.n_industries,
    )
    if len(sub.dates) == 0:
        raise NoOverlap("no regression dates inside the test range")
    r2 = diagnostics.r2_series(tf, panel, series=sub)
    sig = diagnostics.significance_stats(sub)
    vif = diagnostics.vif_report(tf)
    ac_pairs = diagnostics.autocorrelation_pairs(tf)
    ac = np.nanmean(ac_pairs, axis=0)
    backtest = backtest or run_backtest(factors, panel, test, cfg, series)
    K = tf[0].values.shape[1]
    metrics = {
        "seed": cfg["seed"],
        "n_test_dates": int(len(r2.dates)),
        "r2_mean": r2.mean,
        "gmv_vol": backtest.summary["gmv_vol"],
        "gmv_plus_vol": backtest.summary["gmv_plus_vol"],
        "equal_weight_vol": backtest.summary["equal_weight_vol"],
        "market_vol": backtest.summary["market_vol"],
        "factors": [
            {
                "id": k,
                "mean_t": float(sig.mean_abs_t[k]),
                "pct_t_gt2": float(sig.pct_abs_t_gt2[k]),
                "vif": float(vif.mean_vif[k]),
                "vif_trace_form": float(vif.mean_vif_trace_form[k]),
                "autocorr": float(ac[k]),
            }
            for k in range(K)
        ],
        "excluded_tstat_dates": sig.n_excluded,
        "vif_skipped_dates": vif.n_skipped,
    }
    return Report(
        metrics, r2, sub.tstats[:, sub.style_slice], sub.dates, vif,
        ac_pairs, [str(fm.date) for fm in tf[1:]], series,
    )
