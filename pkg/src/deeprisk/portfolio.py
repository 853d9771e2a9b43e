"""Global minimum variance portfolios (unconstrained and long-only) and realized volatility."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonConvergence, NoOverlap, SingularCovariance
from .panel import PanelDataset


@dataclass(frozen=True)
class PortfolioWeights:
    date: np.datetime64 | None
    stock_ids: np.ndarray | None
    w: np.ndarray
    info: dict = field(default_factory=dict)


def _pd_factor(S: np.ndarray):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None


def gmv_weights(sigma: np.ndarray, date=None, stock_ids=None) -> PortfolioWeights:
    """w = Sigma^-1 1 / (1' Sigma^-1 1).

    A non positive definite Sigma gets a 1e-10 * tr(Sigma)/N diagonal loading,
    recorded in ``info['ridge']``.
    """
    S = np.asarray(sigma, dtype=float)
    N = S.shape[0]
    ridge = 0.0
    Lc = _pd_factor(S)
    if Lc is None:
        ridge = 1e-10 * np.trace(S) / N
        Lc = _pd_factor(S + ridge * np.eye(N))
        if Lc is None:
            raise SingularCovariance("covariance is not positive definite even after loading")
    z = np.linalg.solve(Lc.T, np.linalg.solve(Lc, np.ones(N)))
    w = z / z.sum()
    w = w / w.sum()
    return PortfolioWeights(date, stock_ids, w, {"ridge": ridge})


def _eqp(S: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Minimizer of w'Sw over the free coordinates with sum(w) = 1 (others zero)."""
    idx = np.flatnonzero(free)
    n = len(idx)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = 2.0 * S[np.ix_(idx, idx)]
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    w = np.zeros(S.shape[0])
    w[idx] = sol[:n]
    return w


def kkt_residual(S: np.ndarray, w: np.ndarray) -> float:
    """Max violation of the long-only KKT conditions at w (scaled by the objective gradient)."""
    g = 2.0 * S @ w
    support = w > 1e-12
    nu = float(np.mean(g[support])) if support.any() else float(g.min())
    stationarity = np.abs(g[support] - nu).max(initial=0.0)
    dual = max(0.0, float(-(g[~support] - nu).min(initial=0.0)))
    primal = max(abs(w.sum() - 1.0), float(-w.min()))
    scale = max(1.0, float(np.abs(g).max()))
    return max(stationarity / scale, dual / scale, primal)


def gmv_long_only(sigma: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000, date=None, stock_ids=None) -> PortfolioWeights:
    """min w'Sigma w s.t. sum(w) = 1, w >= 0 by a primal active-set method.

    Starts from equal weights; each iteration solves the equality-constrained
    problem on the free set, steps toward it until a weight hits zero (which is
    then fixed), and releases the fixed weight with the most negative multiplier
    once the free-set optimum is reached.
    """
    S = np.asarray(sigma, dtype=float)
    S = 0.5 * (S + S.T)
    N = S.shape[0]
    w = np.full(N, 1.0 / N)
    free = np.ones(N, dtype=bool)
    for it in range(max_iter):
        target = _eqp(S, free)
        step = target - w
        if np.abs(step).max() <= 1e-15:
            g = 2.0 * S @ w
            nu = float(np.mean(g[free]))
            mult = np.where(free, np.inf, g - nu)
            j = int(np.argmin(mult))
            if mult[j] >= -tol * max(1.0, abs(nu)):
                w = np.where(free, np.maximum(w, 0.0), 0.0)
                w /= w.sum()
                res = kkt_residual(S, w)
                if res > max(tol, 1e-6):
                    raise NonConvergence(f"KKT residual {res:.3g} at termination")
                return PortfolioWeights(date, stock_ids, w, {"iterations": it + 1, "kkt_residual": res})
            free[j] = True
            continue
        blocking = free & (step < 0)
        alpha, j = 1.0, -1
        if blocking.any():
            ratios = np.where(blocking, w / np.where(blocking, -step, 1.0), np.inf)
            j = int(np.argmin(ratios))
            alpha = min(1.0, float(ratios[j]))
        w = w + alpha * step
        if alpha < 1.0:
            w[j] = 0.0
            free[j] = False
        else:
            w = target
    raise NonConvergence(f"active-set solver did not converge in {max_iter} iterations")


def portfolio_variance(sigma: np.ndarray, w: np.ndarray) -> float:
    return float(w @ sigma @ w)


def daily_portfolio_returns(weights: Sequence[PortfolioWeights], panel: PanelDataset, end: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Hold each weight vector from the day after its date until the next rebalance date.

    Missing returns count as zero. Returns (date indices, daily returns).
    """
    if not weights:
        raise NoOverlap("no portfolios")
    starts = [panel.date_index(pw.date) for pw in weights]
    stop = panel.n_dates - 1 if end is None else end
    idx, rets = [], []
    for k, pw in enumerate(weights):
        first = starts[k] + 1
        last = starts[k + 1] if k + 1 < len(weights) else stop
        cols = np.searchsorted(panel.stock_ids, pw.stock_ids)
        for t in range(first, last + 1):
            y = np.where(panel.valid[t, cols], panel.returns[t, cols], 0.0)
            idx.append(t)
            rets.append(float(pw.w @ y))
    if not rets:
        raise NoOverlap("no out-of-sample return dates after the first rebalance")
    return np.array(idx), np.array(rets)


def annualized_vol(daily_returns: np.ndarray, annualization: int = 252) -> float:
    """Population std of daily returns times sqrt(annualization)."""
    r = np.asarray(daily_returns, dtype=float)
    if r.size == 0:
        raise NoOverlap("empty return series")
    # the shift keeps a constant series at exactly zero
    return float((r - r[0]).std() * np.sqrt(annualization))


def realized_vol(weights: Sequence[PortfolioWeights], panel: PanelDataset, annualization: int = 252, end: int | None = None) -> float:
    return annualized_vol(daily_portfolio_returns(weights, panel, end)[1], annualization)


def turnover(weights: Sequence[PortfolioWeights]) -> float:
    """Mean one-way turnover between consecutive rebalances (stocks matched by id)."""
    if len(weights) < 2:
        return 0.0
    tot = []
    for a, b in zip(weights[:-1], weights[1:]):
        ids = np.union1d(a.stock_ids, b.stock_ids)
        wa = np.zeros(len(ids))
        wb = np.zeros(len(ids))
        wa[np.searchsorted(ids, a.stock_ids)] = a.w
        wb[np.searchsorted(ids, b.stock_ids)] = b.w
        tot.append(0.5 * np.abs(wa - wb).sum())
    return float(np.mean(tot))
