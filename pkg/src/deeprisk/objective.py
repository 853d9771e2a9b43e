"""Training objective on a factor matrix: projection R^2, VIF trace, multi-horizon loss.

All functions take the N x K factor matrix ``F`` of one date. The loss and its
gradient are closed form; the gradient w.r.t. ``F`` is what the trainer
back-propagates through the network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidSpec, MissingHorizon, SingularGram, SingularNormalEquations, ZeroReturns

COND_LIMIT = 1e12


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.01
    H: int = 20
    ridge_eps: float = 1e-6
    target_mode: Literal["per-horizon", "current-projection"] = "per-horizon"

    def __post_init__(self):
        if self.lam < 0 or self.H < 1 or self.ridge_eps <= 0:
            raise InvalidSpec(f"invalid loss config {self}")
        if self.target_mode not in ("per-horizon", "current-projection"):
            raise InvalidSpec(f"unknown target_mode {self.target_mode!r}")


def _gram_inverse(F: np.ndarray, ridge_eps: float, exc=SingularNormalEquations) -> np.ndarray:
    K = F.shape[1]
    G = F.T @ F + ridge_eps * np.eye(K)
    if not np.all(np.isfinite(G)):
        raise exc("non-finite Gram matrix")
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
        raise exc(f"Gram matrix condition number {ev[-1] / max(ev[0], 1e-300):.3g} too large")
    return np.linalg.inv(G)


def projection_fit(F: np.ndarray, y: np.ndarray, ridge_eps: float = 0.0) -> np.ndarray:
    """Fitted values F (F'F + eps I)^-1 F' y."""
    F = np.atleast_2d(np.asarray(F, dtype=float).T).T
    if F.shape[0] <= F.shape[1]:
        raise SingularNormalEquations(f"need N > K, got N={F.shape[0]}, K={F.shape[1]}")
    Ginv = _gram_inverse(F, ridge_eps)
    return F @ (Ginv @ (F.T @ y))


def r_squared(F: np.ndarray, y: np.ndarray, ridge_eps: float = 0.0) -> float:
    """Uncentered R^2 = 1 - |y - y_hat|^2 / |y|^2."""
    y = np.asarray(y, dtype=float)
    ss = float(y @ y)
    if ss <= 0.0:
        raise ZeroReturns("all-zero return vector")
    r = y - projection_fit(F, y, ridge_eps)
    return 1.0 - float(r @ r) / ss


def vif_trace(F: np.ndarray) -> float:
    """Sum of VIFs via N * tr((F'F)^-1); exact for columns with F_i'F_i = N."""
    F = np.asarray(F, dtype=float)
    return F.shape[0] * float(np.trace(_gram_inverse(F, 0.0, SingularGram)))


def vif_bruteforce(F: np.ndarray) -> np.ndarray:
    """Per-column VIF from K separate regressions of column i on the others.

    R^2 is uncentered, matching the projection used everywhere else, so
    VIF_i = |F_i|^2 / RSS_i.
    """
    F = np.asarray(F, dtype=float)
    N, K = F.shape
    out = np.empty(K)
    for i in range(K):
        yi = F[:, i]
        ss = float(yi @ yi)
        if K == 1:
            out[i] = 1.0
            continue
        others = np.delete(F, i, axis=1)
        beta, *_ = np.linalg.lstsq(others, yi, rcond=None)
        resid = yi - others @ beta
        rss = float(resid @ resid)
        if rss <= ss * 1e-12:
            raise SingularGram(f"column {i} is (numerically) collinear with the others")
        out[i] = ss / rss
    return out


def _forward_targets(forward_returns, H: int) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(forward_returns, dtype=float))
    if Y.shape[0] < H or not np.all(np.isfinite(Y[:H])):
        raise MissingHorizon(f"need {H} finite forward return vectors, got {Y.shape[0]}")
    return Y[:H]


def _horizon_terms(F, Y, y_src, cfg: LossConfig, want_grad: bool):
    """Mean over horizons of |y_h - F beta|^2/|y_h|^2 with beta fitted on y_src (or y_h)."""
    Ginv = _gram_inverse(F, cfg.ridge_eps)
    H = Y.shape[0]
    loss = 0.0
    grad = np.zeros_like(F) if want_grad else None
    src_fixed = y_src is not None
    if src_fixed:
        beta_src = Ginv @ (F.T @ y_src)
        fit_src = F @ beta_src
    for h in range(H):
        y = Y[h]
        ss = float(y @ y)
        if ss <= 0.0:
            raise ZeroReturns(f"horizon {h + 1} has all-zero returns")
        if src_fixed:
            src, beta, fit = y_src, beta_src, fit_src
        else:
            src, beta = y, Ginv @ (F.T @ y)
            fit = F @ beta
        r = y - fit
        loss += float(r @ r) / ss
        if want_grad:
            c = Ginv @ (F.T @ r)
            g = np.outer(r, beta) + np.outer(src - fit, c) - np.outer(F @ c, beta)
            grad += -2.0 * g / ss
    if want_grad:
        grad /= H
    return loss / H, grad, Ginv


def multitask_loss(F: np.ndarray, forward_returns, cfg: LossConfig, current_returns=None) -> float:
    """Mean residual share over the H forward return vectors (rows of ``forward_returns``).

    ``target_mode="current-projection"`` projects ``current_returns`` once and measures the
    residual against every forward vector.
    """
    Y = _forward_targets(forward_returns, cfg.H)
    src = _loss_source(cfg, current_returns)
    return _horizon_terms(np.asarray(F, float), Y, src, cfg, False)[0]


def _loss_source(cfg, current_returns):
    if cfg.target_mode == "per-horizon":
        return None
    if current_returns is None:
        raise MissingHorizon("current-projection mode needs the current-date returns")
    return np.asarray(current_returns, dtype=float)


def total_loss(F: np.ndarray, forward_returns, cfg: LossConfig, current_returns=None) -> float:
    """multitask_loss + lam * tr((F'F + eps I)^-1)."""
    return loss_and_gradient(F, forward_returns, cfg, current_returns, want_grad=False)[0]


def loss_gradient(F: np.ndarray, forward_returns, cfg: LossConfig, current_returns=None) -> np.ndarray:
    return loss_and_gradient(F, forward_returns, cfg, current_returns)[1]


def loss_and_gradient(F, forward_returns, cfg: LossConfig, current_returns=None, want_grad: bool = True):
    """(total_loss, dLoss/dF).

    With beta = G^-1 F'y_src, r = y - F beta and c = G^-1 F'r, the data term has
    d|r|^2/dF = -2 [r beta' + (y_src - F beta) c' - F c beta'], and
    d tr(G^-1)/dF = -2 F G^-2.
    """
    F = np.asarray(F, dtype=float)
    Y = _forward_targets(forward_returns, cfg.H)
    data, grad, Ginv = _horizon_terms(F, Y, _loss_source(cfg, current_returns), cfg, want_grad)
    loss = data + cfg.lam * float(np.trace(Ginv))
    if want_grad and cfg.lam:
        grad = grad - 2.0 * cfg.lam * (F @ (Ginv @ Ginv))
    return loss, grad
