"""Synthetic market with a known factor structure.

Features are per-stock AR(1) processes. The true exposures are fixed nonlinear
and temporal transformations of the feature histories (a size term, its square,
a saturated combination, an exponential average of a fast feature, ...), so a
learner that sees the raw features can recover more than a linear pass-through.
Returns follow the factor model with a market term, industry terms, the style
factors and independent specific noise:

    y[t] = m[t] + g[ind, t] + exposures[t-1] @ b[t] + u[t]

i.e. exposures known at the end of day t-1 explain the return over day t.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .factornet import norm_op
from .panel import PanelDataset

# index of the fast-moving feature feeding the temporal exposure
FAST_FEATURE = 4
# feature indices each exposure recipe reads
_RECIPE_FEATURES = [(0,), (0,), (1, 2), (3, FAST_FEATURE), (3,), (5, 6)]
MAX_FACTORS = len(_RECIPE_FEATURES)


@dataclass(frozen=True)
class SynthSpec:
    n_stocks: int = 100
    n_dates: int = 750
    n_features: int = 10
    n_factors: int = 4
    factor_vols: tuple[float, ...] = (0.012, 0.010, 0.009, 0.008, 0.007, 0.006)
    factor_corr: float = 0.0  # common pairwise correlation of factor returns
    idio_vol: tuple[float, float] = (0.01, 0.03)
    persistence: float = 0.99
    fast_persistence: float = 0.6
    ema_decay: float = 0.5
    fast_share: float = 0.3  # variance share of the fast part in the blended exposure
    n_industries: int = 5
    market_vol: float = 0.008
    industry_vol: float = 0.004
    freeze_features: bool = False
    start_date: str = "2015-01-05"
    seed: int = 0

    def __post_init__(self):
        if min(self.n_stocks, self.n_dates, self.n_features, self.n_factors, self.n_industries) < 1:
            raise InvalidSpec("all dimensions must be >= 1")
        if self.n_factors > MAX_FACTORS:
            raise InvalidSpec(f"at most {MAX_FACTORS} true factors are supported")
        need = 1 + max(max(f) for f in _RECIPE_FEATURES[: self.n_factors])
        if self.n_features < need:
            raise InvalidSpec(f"{self.n_factors} factors need at least {need} features")
        if len(self.factor_vols) < self.n_factors:
            raise InvalidSpec("factor_vols shorter than n_factors")
        if not 0.0 <= self.persistence < 1.0 or not 0.0 <= self.fast_persistence < 1.0:
            raise InvalidSpec("persistence must lie in [0, 1)")
        if not 0.0 <= self.ema_decay < 1.0:
            raise InvalidSpec("ema_decay must lie in [0, 1)")
        if not 0.0 <= self.fast_share <= 1.0:
            raise InvalidSpec("fast_share must lie in [0, 1]")
        lo, hi = self.idio_vol
        if lo < 0 or hi < lo:
            raise InvalidSpec("idio_vol must be 0 <= lo <= hi")
        if not -1.0 / max(self.n_factors - 1, 1) < self.factor_corr < 1.0 and self.n_factors > 1:
            raise InvalidSpec("factor_corr makes the factor covariance indefinite")

    @property
    def factor_cov(self) -> np.ndarray:
        vols = np.asarray(self.factor_vols[: self.n_factors])
        K = self.n_factors
        corr = np.full((K, K), self.factor_corr) + (1.0 - self.factor_corr) * np.eye(K)
        return corr * np.outer(vols, vols)


@dataclass(frozen=True)
class GroundTruth:
    exposures: np.ndarray  # (T, N, K), normalized; row t explains returns of t+1
    factor_returns: np.ndarray  # (T, K); row t is realized over day t
    market: np.ndarray  # (T,)
    industry_returns: np.ndarray  # (T, J)
    specific_var: np.ndarray  # (N,)
    factor_cov: np.ndarray  # (K, K)
    market_var: float
    industry_var: float
    industry: np.ndarray = field(repr=False)  # (N,) industry codes

    def return_covariance(self, t: int) -> np.ndarray:
        """Model covariance of returns over day t+1 given exposures at t."""
        F = self.exposures[t]
        N = F.shape[0]
        J = self.industry_returns.shape[1]
        D = np.zeros((N, J))
        D[np.arange(N), self.industry] = 1.0
        return (
            self.market_var * np.ones((N, N))
            + self.industry_var * D @ D.T
            + F @ self.factor_cov @ F.T
            + np.diag(self.specific_var)
        )


def _raw_exposures(x: np.ndarray, k: int, ema: np.ndarray, fast_share: float) -> np.ndarray:
    if k == 0:
        return x[..., 0]
    if k == 1:
        return x[..., 0] ** 2
    if k == 2:
        return np.tanh(x[..., 1] + x[..., 2])
    if k == 3:
        return np.sqrt(1.0 - fast_share) * x[..., 3] + np.sqrt(fast_share) * ema
    if k == 4:
        return np.abs(x[..., 3])
    return x[..., 5] * x[..., 6]


def generate_panel(spec: SynthSpec) -> tuple[PanelDataset, GroundTruth]:
    """Draw a panel and its ground truth; identical output for identical specs."""
    rng = np.random.default_rng(spec.seed)
    N, T, P, K, J = spec.n_stocks, spec.n_dates, spec.n_features, spec.n_factors, spec.n_industries
    burn = 100
    total = T + 1 + burn

    phi = np.full(P, spec.persistence)
    if P > FAST_FEATURE:
        phi[FAST_FEATURE] = spec.fast_persistence
    x = np.empty((total, N, P))
    x[0] = rng.standard_normal((N, P))
    shocks = rng.standard_normal((total, N, P))
    for t in range(1, total):
        if spec.freeze_features:
            x[t] = x[t - 1]
        else:
            x[t] = phi * x[t - 1] + np.sqrt(1.0 - phi**2) * shocks[t]

    ema = np.empty((total, N))
    fast = x[..., FAST_FEATURE] if P > FAST_FEATURE else np.zeros((total, N))
    ema[0] = fast[0]
    for t in range(1, total):
        ema[t] = spec.ema_decay * ema[t - 1] + (1.0 - spec.ema_decay) * fast[t]
    ema = ema / ema[burn:].std()

    x, ema = x[burn:], ema[burn:]  # T + 1 days; day 0 only seeds the first return
    caps = np.exp(9.0 + 0.8 * x[..., 0])
    raw = np.stack([_raw_exposures(x, k, ema, spec.fast_share) for k in range(K)], axis=-1)
    expo = np.stack([norm_op(raw[t], caps[t]) for t in range(T + 1)])

    industry = rng.permutation(np.arange(N) % J)
    chol = np.linalg.cholesky(spec.factor_cov + 1e-18 * np.eye(K))
    b = rng.standard_normal((T + 1, K)) @ chol.T
    market = spec.market_vol * rng.standard_normal(T + 1)
    ind_ret = spec.industry_vol * rng.standard_normal((T + 1, J))
    sig = rng.uniform(spec.idio_vol[0], spec.idio_vol[1], size=N)
    u = rng.standard_normal((T + 1, N)) * sig

    y = np.empty((T + 1, N))
    y[0] = np.nan
    for t in range(1, T + 1):
        y[t] = market[t] + ind_ret[t, industry] + expo[t - 1] @ b[t] + u[t]

    start = np.datetime64(spec.start_date, "D")
    dates = np.busday_offset(start, np.arange(T), roll="forward")
    width = max(4, len(str(N - 1)))
    stock_ids = np.array([f"S{i:0{width}d}" for i in range(N)])
    panel = PanelDataset(
        dates=dates,
        stock_ids=stock_ids,
        feature_names=tuple(f"f{p + 1}" for p in range(P)),
        features=x[1:].copy(),
        returns=y[1:].copy(),
        cap_weight=caps[1:].copy(),
        industry=np.tile(industry, (T, 1)),
        industry_names=tuple(f"IND{j:02d}" for j in range(J)),
        valid=np.ones((T, N), dtype=bool),
    )
    truth = GroundTruth(
        exposures=expo[1:],
        factor_returns=b[1:],
        market=market[1:],
        industry_returns=ind_ret[1:],
        specific_var=sig**2,
        factor_cov=spec.factor_cov,
        market_var=spec.market_vol**2,
        industry_var=spec.industry_vol**2,
        industry=industry,
    )
    return panel, truth


def write_truth(truth: GroundTruth, panel: PanelDataset, out_dir) -> None:
    """Ground-truth bundle: exposures, factor returns and specific variances as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = truth.exposures.shape[2]
    with open(out / "truth_exposures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "stock_id", *(f"e{k + 1}" for k in range(K))])
        for t, d in enumerate(panel.dates):
            for i, sid in enumerate(panel.stock_ids):
                w.writerow([str(d), sid, *(repr(float(v)) for v in truth.exposures[t, i])])
    with open(out / "truth_factor_returns.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        J = truth.industry_returns.shape[1]
        w.writerow(["date", "market", *panel.industry_names[:J], *(f"b{k + 1}" for k in range(K))])
        for t, d in enumerate(panel.dates):
            row = [truth.market[t], *truth.industry_returns[t], *truth.factor_returns[t]]
            w.writerow([str(d), *(repr(float(v)) for v in row)])
    with open(out / "truth_specific.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stock_id", "specific_var"])
        for sid, v in zip(panel.stock_ids, truth.specific_var):
            w.writerow([sid, repr(float(v))])
