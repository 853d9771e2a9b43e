"""Comparison risk models: fundamental pass-through (FRM) and trailing-window PCA (SRM)."""

from __future__ import annotations

import numpy as np

from .errors import InsufficientHistory, RankDeficient
from .factornet import FactorMatrix, norm_op
from .panel import PanelDataset, cross_section


def frm_factors(panel: PanelDataset, date) -> FactorMatrix:
    """The day's input features, each column normalized with ``norm_op``."""
    cs = cross_section(panel, date)
    return FactorMatrix(date=cs.date, stock_ids=cs.stock_ids, values=norm_op(cs.features, cs.caps))


def pca_exposures(R: np.ndarray, K: int, use_correlation: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Top-K eigenvectors (N x K) of the covariance of a (T, N) return window, and all eigenvalues.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    X = R - R.mean(axis=0)
    if use_correlation:
        sd = X.std(axis=0)
        if np.any(sd <= 0):
            raise RankDeficient("constant return series in the window")
        X = X / sd
    # right singular vectors of the centered window = covariance eigenvectors
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    if len(s) < K or s[K - 1] <= 1e-12 * max(s[0], 1e-300):
        raise RankDeficient(f"return window has rank < {K}")
    V = Vt[:K].T.copy()
    for k in range(K):
        j = np.argmax(np.abs(V[:, k]))
        if V[j, k] < 0:
            V[:, k] = -V[:, k]
    return V, s**2 / X.shape[0]


def srm_factors(panel: PanelDataset, date, K: int = 10, window: int = 252, use_correlation: bool = False) -> FactorMatrix:
    """PCA factors from the ``window`` trading days ending at ``date`` (inclusive).

    Stocks without a full return history over the window are dropped for the date.
    """
    t = panel.date_index(date)
    if t - window + 1 < 0:
        raise InsufficientHistory(f"{t + 1} dates available, window needs {window}")
    full = panel.valid[t - window + 1 : t + 1].all(axis=0)
    cols = np.flatnonzero(full)
    if cols.size <= K:
        raise InsufficientHistory(f"{cols.size} stocks with full history, need more than K={K}")
    R = panel.returns[t - window + 1 : t + 1][:, cols]
    V, _ = pca_exposures(R, K, use_correlation)
    return FactorMatrix(date=panel.dates[t], stock_ids=panel.stock_ids[cols], values=norm_op(V, panel.cap_weight[t, cols]))
