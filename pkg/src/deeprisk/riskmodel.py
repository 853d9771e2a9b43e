"""Cross-sectional factor-return regression and factor-model covariance estimation.

Per date, returns are regressed on [country | industry dummies | style factors]
with the industry coefficients constrained to sum to zero. The factor returns
feed EWMA correlation/variance estimates (separate halflives), a volatility
regime adjustment, and per-stock specific variances; the stock covariance is
X Sigma_B X' + Delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyIndustry,
    InsufficientHistory,
    RankDeficient,
    ZeroPredictedVol,
)
from .factornet import FactorMatrix
from .panel import PanelDataset


@dataclass(frozen=True)
class RegressionResult:
    coef: np.ndarray  # (1 + J + K,)
    tstats: np.ndarray  # NaN where undefined (exact fit)
    residuals: np.ndarray  # (N,)
    r2: float


@dataclass(frozen=True)
class FactorReturnSeries:
    dates: np.ndarray  # return dates
    names: tuple[str, ...]
    coef: np.ndarray  # (T, 1 + J + K)
    tstats: np.ndarray  # (T, 1 + J + K)
    residuals: np.ndarray  # (T, S) over all panel stocks, NaN when absent
    r2: np.ndarray  # (T,)
    skipped: tuple = ()  # return dates without a usable regression
    n_industries: int = 0

    @property
    def style_slice(self) -> slice:
        return slice(1 + self.n_industries, len(self.names))


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma_b: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    vra_multiplier: float
    exposures: np.ndarray  # N x (1 + J + K) design used for assembly
    stock_ids: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


# --------------------------------------------------------------- regression


def restriction_matrix(n_ind: int, K: int) -> np.ndarray:
    """Maps free parameters [country, c_1..c_{J-1}, styles] to full coefficients
    [country, c_1..c_J, styles] with c_J = -sum(c_1..c_{J-1})."""
    R = np.zeros((1 + n_ind + K, n_ind + K))
    R[0, 0] = 1.0
    for j in range(n_ind - 1):
        R[1 + j, 1 + j] = 1.0
        R[n_ind, 1 + j] = -1.0
    R[1 + n_ind :, n_ind:] = np.eye(K)
    return R


def design_matrix(X_styles: np.ndarray, industries: np.ndarray, n_ind: int) -> np.ndarray:
    N = X_styles.shape[0]
    D = np.zeros((N, n_ind))
    D[np.arange(N), industries] = 1.0
    return np.hstack([np.ones((N, 1)), D, X_styles])


def cross_sectional_regress(
    X_styles: np.ndarray,
    industries: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    n_industries: int | None = None,
) -> RegressionResult:
    """Weighted least squares of y on [1 | industry dummies | styles] s.t. sum(industry coef) = 0.

    The constraint is eliminated with ``restriction_matrix``; t-statistics use the
    homoskedastic covariance of the restricted fit mapped back to all coefficients.
    Industry codes must be 0..J-1 and every industry must have a stock.
    """
    X_styles = np.asarray(X_styles, dtype=float).reshape(len(y), -1)
    y = np.asarray(y, dtype=float)
    industries = np.asarray(industries)
    N, K = X_styles.shape
    J = int(industries.max()) + 1 if n_industries is None else n_industries
    counts = np.bincount(industries, minlength=J)
    if len(counts) > J or np.any(counts == 0):
        raise EmptyIndustry(f"industry counts {counts.tolist()} for J={J}")
    w = np.ones(N) if weights is None else np.asarray(weights, dtype=float)
    R = restriction_matrix(J, K)
    Xr = design_matrix(X_styles, industries, J) @ R
    p = Xr.shape[1]
    if N <= p:
        raise RankDeficient(f"N={N} observations for {p} free parameters")
    sw = np.sqrt(w)
    Xw = Xr * sw[:, None]
    yw = y * sw
    Q, Rq = np.linalg.qr(Xw)
    diag = np.abs(np.diag(Rq))
    if diag.min() <= 1e-10 * diag.max():
        raise RankDeficient("design matrix is rank deficient")
    theta = np.linalg.solve(Rq, Q.T @ yw)
    coef = R @ theta
    resid = y - design_matrix(X_styles, industries, J) @ coef
    rss = float(np.sum(w * resid**2))
    tss = float(np.sum(w * y**2))
    s2 = rss / (N - p)
    if s2 <= 1e-28 * max(tss, 1e-300):
        tstats = np.full_like(coef, np.nan)
    else:
        Rinv = np.linalg.inv(Rq)
        cov_theta = s2 * (Rinv @ Rinv.T)
        se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", R, cov_theta, R), 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            tstats = np.where(se > 0, coef / se, np.nan)
    r2 = 1.0 - rss / tss if tss > 0 else math.nan
    return RegressionResult(coef=coef, tstats=tstats, residuals=resid, r2=r2)


def _regression_weights(mode: str, caps: np.ndarray) -> np.ndarray | None:
    if mode == "equal":
        return None
    if mode == "sqrt_cap":
        return np.sqrt(caps / caps.mean())
    raise ValueError(f"unknown weights_mode {mode!r}")


def factor_return_series(
    factors: Sequence[FactorMatrix],
    panel: PanelDataset,
    weights_mode: Literal["equal", "sqrt_cap"] = "equal",
    alignment: Literal["forward", "contemporaneous"] = "forward",
) -> FactorReturnSeries:
    """Regress each factor date's exposures against the next day's returns.

    Industries absent on a date get coefficient 0 and NaN t-stat; dates with
    zero returns or an infeasible regression are listed in ``skipped``.
    """
    if not factors:
        raise InsufficientHistory("no factor dates")
    K = factors[0].values.shape[1]
    J = panel.n_industries
    names = ("country", *panel.industry_names, *(f"f{k + 1}" for k in range(K)))
    shift = 1 if alignment == "forward" else 0
    rows_c, rows_t, rows_r, r2s, dates, skipped = [], [], [], [], [], []
    for fm in factors:
        t = panel.date_index(fm.date) + shift
        if t >= panel.n_dates:
            continue
        cols = np.searchsorted(panel.stock_ids, fm.stock_ids)
        keep = panel.valid[t, cols]
        cols = cols[keep]
        X = fm.values[keep]
        y = panel.returns[t, cols]
        if not np.any(y != 0.0):
            skipped.append(panel.dates[t])
            continue
        ind = panel.industry[t, cols]
        present = np.unique(ind)
        remap = np.full(J, -1)
        remap[present] = np.arange(len(present))
        try:
            res = cross_sectional_regress(
                X, remap[ind], y, _regression_weights(weights_mode, panel.cap_weight[t, cols]), len(present)
            )
        except (RankDeficient, EmptyIndustry):
            skipped.append(panel.dates[t])
            continue
        coef = np.zeros(1 + J + K)
        tst = np.full(1 + J + K, np.nan)
        idx = np.concatenate([[0], 1 + present, 1 + J + np.arange(K)])
        coef[idx] = res.coef
        tst[idx] = res.tstats
        resid = np.full(panel.n_stocks, np.nan)
        resid[cols] = res.residuals
        rows_c.append(coef)
        rows_t.append(tst)
        rows_r.append(resid)
        r2s.append(res.r2)
        dates.append(panel.dates[t])
    M = 1 + J + K
    return FactorReturnSeries(
        dates=np.array(dates, dtype="datetime64[D]"),
        names=names,
        coef=np.array(rows_c).reshape(-1, M),
        tstats=np.array(rows_t).reshape(-1, M),
        residuals=np.array(rows_r).reshape(-1, panel.n_stocks),
        r2=np.array(r2s),
        skipped=tuple(skipped),
        n_industries=J,
    )


# ---------------------------------------------------------------- EWMA


def ewma_weights(halflife: float, length: int) -> np.ndarray:
    """Normalized weights w_k ~ 0.5 ** (k / halflife), k = 0 the most recent observation.

    ``halflife=inf`` gives uniform weights. Note the lag order: reverse before
    applying to a chronologically ordered series.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if not halflife > 0:
        raise ValueError("halflife must be positive")
    k = np.arange(length)
    w = np.ones(length) if math.isinf(halflife) else 0.5 ** (k / halflife)
    return w / w.sum()


def ewma_moments(X: np.ndarray, halflife: float):
    """EWMA mean and covariance of a chronological (T, M) series (weights sum to 1, no bias correction)."""
    X = np.asarray(X, dtype=float)
    w = ewma_weights(halflife, X.shape[0])[::-1]
    # shift by the last row first so a constant series gives exactly zero spread
    X0 = X - X[-1]
    m0 = w @ X0
    Xc = X0 - m0
    return m0 + X[-1], (Xc * w[:, None]).T @ Xc


def nearest_psd(S: np.ndarray, tol: float = 0.0) -> tuple[np.ndarray, bool]:
    """Eigenvalue floor at 0 and re-symmetrization; flag says whether repair was needed."""
    S = 0.5 * (S + S.T)
    ev, V = np.linalg.eigh(S)
    scale = max(float(np.abs(ev).max()), 1e-300)
    if ev.min() >= -tol * scale:
        return S, False
    S2 = (V * np.maximum(ev, 0.0)) @ V.T
    return 0.5 * (S2 + S2.T), True


def factor_covariance(
    B: np.ndarray,
    corr_halflife: float = 240,
    var_halflife: float = 60,
    window: int | None = 504,
    return_flag: bool = False,
):
    """Sigma_B[i, j] = rho_ij sigma_i sigma_j with EWMA correlation and EWMA variances.

    Uses the last ``window`` rows. Factors with zero variance get zero rows/columns.
    With ``return_flag`` the result is ``(S, repaired, min_eig_ratio)``; the ratio is
    the smallest pre-repair eigenvalue over the largest in absolute value. Industry
    returns that sum to zero make S singular, so ratios around -1e-16 are round-off.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] < 2:
        raise InsufficientHistory("need at least two factor-return observations")
    if window is not None:
        B = B[-window:]
    _, C = ewma_moments(B, corr_halflife)
    _, V = ewma_moments(B, var_halflife)
    sd_c = np.sqrt(np.maximum(np.diag(C), 0.0))
    sig = np.sqrt(np.maximum(np.diag(V), 0.0))
    live = (sd_c > 0) & (sig > 0)
    rho = np.eye(len(sig))
    li = np.flatnonzero(live)
    rho[np.ix_(li, li)] = C[np.ix_(li, li)] / np.outer(sd_c[li], sd_c[li])
    np.fill_diagonal(rho, 1.0)
    S = rho * np.outer(sig, sig)
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    min_ratio = float(ev.min() / max(float(np.abs(ev).max()), 1e-300))
    S, repaired = nearest_psd(S)
    return (S, repaired, min_ratio) if return_flag else S


def predicted_vol_history(B: np.ndarray, halflife: float = 60, min_obs: int = 20) -> np.ndarray:
    """Out-of-sample factor volatility forecasts: row t uses rows < t only (NaN before ``min_obs``).

    Recursive EWMA of demeaned squares, equivalent to ``ewma_moments`` variances on the prefix.
    """
    B = np.asarray(B, dtype=float)
    T, M = B.shape
    out = np.full((T, M), np.nan)
    lam = 0.5 ** (1.0 / halflife)
    # running sums of weights, weighted x, weighted x^2 (most recent weight 1)
    sw, sx, sxx = 0.0, np.zeros(M), np.zeros(M)
    for t in range(T):
        if t >= min_obs:
            mu = sx / sw
            out[t] = np.sqrt(np.maximum(sxx / sw - mu * mu, 0.0))
        sw = lam * sw + 1.0
        sx = lam * sx + B[t]
        sxx = lam * sxx + B[t] ** 2
    return out


def volatility_regime_adjust(B: np.ndarray, sigma_pred: np.ndarray, sigma_b: np.ndarray | None = None, halflife: float = 20):
    """Bias statistic B_t = sqrt(mean_k (b_kt / sigma_kt)^2), lambda = sqrt(EWMA(B_t^2)).

    NaN forecasts are treated as missing (excluded per date); a zero forecast is an
    error. Returns (lambda, lambda^2 * sigma_b) - vols scale by lambda, correlations
    are unchanged.
    """
    B = np.asarray(B, dtype=float)
    S = np.asarray(sigma_pred, dtype=float)
    if B.shape != S.shape:
        raise DimensionMismatch(f"factor returns {B.shape} vs forecasts {S.shape}")
    if np.any(S == 0.0):
        raise ZeroPredictedVol("zero predicted factor volatility")
    z2 = (B / S) ** 2
    ok = np.isfinite(z2)
    cnt = ok.sum(axis=1)
    rows = cnt > 0
    if not rows.any():
        raise InsufficientHistory("no dates with volatility forecasts")
    bias2 = np.where(ok, z2, 0.0).sum(axis=1)[rows] / cnt[rows]
    w = ewma_weights(halflife, len(bias2))[::-1]
    lam = math.sqrt(float(w @ bias2))
    adjusted = None if sigma_b is None else lam * lam * np.asarray(sigma_b)
    return lam, adjusted


def specific_variance(residuals: np.ndarray, halflife: float = 60, min_obs: int = 2):
    """Per-stock EWMA variance of a chronological (T, N) residual panel (NaN = absent).

    Stocks with fewer than ``min_obs`` observations get the cross-sectional median
    and are flagged. Returns (delta, fallback_mask).
    """
    U = np.asarray(residuals, dtype=float)
    T, N = U.shape
    lam = 0.5 ** (1.0 / halflife)
    lagw = lam ** np.arange(T)[::-1]
    delta = np.full(N, np.nan)
    fallback = np.zeros(N, dtype=bool)
    for i in range(N):
        m = np.isfinite(U[:, i])
        if m.sum() < min_obs:
            fallback[i] = True
            continue
        w = lagw[m] / lagw[m].sum()
        u = U[m, i]
        mu = w @ u
        delta[i] = float(w @ (u - mu) ** 2)
    if fallback.any():
        good = delta[~fallback]
        delta[fallback] = float(np.median(good)) if good.size else 0.0
    return delta, fallback


def assemble_covariance(F: np.ndarray, sigma_b: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Sigma = F Sigma_B F' + diag(delta), symmetrized."""
    F = np.asarray(F, dtype=float)
    delta = np.asarray(delta, dtype=float)
    N = len(delta)
    if F.size == 0:
        F = F.reshape(N, 0)
    if F.shape[0] != N or sigma_b.shape != (F.shape[1], F.shape[1]):
        raise DimensionMismatch(f"F {F.shape}, Sigma_B {sigma_b.shape}, delta {delta.shape}")
    if np.any(delta < 0):
        raise DimensionMismatch("negative specific variance")
    S = F @ sigma_b @ F.T + np.diag(delta)
    return 0.5 * (S + S.T)


# ------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class CovConfig:
    corr_halflife: float = 240
    var_halflife: float = 60
    vra_halflife: float = 20
    specific_halflife: float = 60
    window: int = 504
    min_history: int = 60
    vra: bool = True


def estimate_covariance(
    fm: FactorMatrix,
    panel: PanelDataset,
    series: FactorReturnSeries,
    cfg: CovConfig = CovConfig(),
) -> CovarianceEstimate:
    """Covariance forecast for the day after ``fm.date`` from factor returns realized up to it."""
    t = panel.date_index(fm.date)
    upto = series.dates <= panel.dates[t]
    B = series.coef[upto][-cfg.window :]
    U = series.residuals[upto][-cfg.window :]
    if B.shape[0] < max(cfg.min_history, 2):
        raise InsufficientHistory(f"{B.shape[0]} factor-return dates before {fm.date}, need {cfg.min_history}")
    sigma_b, repaired, min_ratio = factor_covariance(B, cfg.corr_halflife, cfg.var_halflife, None, return_flag=True)
    lam = 1.0
    if cfg.vra:
        pred = predicted_vol_history(B, cfg.var_halflife)
        pred[:, np.all(B == 0.0, axis=0)] = np.nan
        pred[pred == 0.0] = np.nan
        try:
            lam, sigma_b = volatility_regime_adjust(B, pred, sigma_b, cfg.vra_halflife)
        except InsufficientHistory:
            lam = 1.0
    cols = np.searchsorted(panel.stock_ids, fm.stock_ids)
    delta_all, fallback = specific_variance(U[:, cols], cfg.specific_halflife)
    J = series.n_industries
    X = design_matrix(fm.values, panel.industry[t, cols], J)
    sigma = assemble_covariance(X, sigma_b, delta_all)
    meta = {
        "date": str(fm.date),
        "corr_halflife": cfg.corr_halflife,
        "var_halflife": cfg.var_halflife,
        "vra_halflife": cfg.vra_halflife,
        "specific_halflife": cfg.specific_halflife,
        "window": cfg.window,
        "n_history": int(B.shape[0]),
        "vra_multiplier": lam,
        "psd_repaired": bool(repaired),
        "min_eigenvalue_ratio": min_ratio,
        "specific_fallback": int(fallback.sum()),
    }
    return CovarianceEstimate(
        sigma_b=sigma_b, delta=delta_all, sigma=sigma, vra_multiplier=lam, exposures=X, stock_ids=fm.stock_ids, metadata=meta
    )
