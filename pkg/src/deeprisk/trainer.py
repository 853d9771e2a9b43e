"""Training loop (per-day batches, gradient accumulation, Adam) and smoothed inference."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import factornet as fn
from .errors import DivergedLoss, InsufficientHistory, InvalidSpec
from .factornet import FactorMatrix, NetConfig
from .objective import LossConfig, loss_and_gradient
from .panel import PanelDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    accumulation: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 10
    smoothing: float = 0.99
    smoothing_weight_on_previous: bool = True
    seed: int = 0
    H: int = 20
    lam: float = 0.01
    ridge_eps: float = 1e-6
    target_mode: str = "per-horizon"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0 or self.accumulation < 1 or not 0.0 <= self.smoothing < 1.0:
            raise InvalidSpec(f"invalid training config {self}")

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, H=self.H, ridge_eps=self.ridge_eps, target_mode=self.target_mode)


@dataclass(frozen=True)
class Sample:
    t: int
    columns: np.ndarray
    history: np.ndarray  # (L, N, P)
    caps: np.ndarray
    industries: np.ndarray
    forward: np.ndarray  # (H, N)
    current: np.ndarray  # (N,)


def make_sample(panel: PanelDataset, t: int, L: int, H: int) -> Sample | None:
    """Window ending at date index t with H forward returns; None if unusable.

    Stocks must be valid on every date of the lookback and of the horizon.
    """
    if t - L + 1 < 0 or t + H >= panel.n_dates:
        return None
    ok = panel.valid[t - L + 1 : t + H + 1].all(axis=0)
    cols = np.flatnonzero(ok)
    if cols.size < 2:
        return None
    return Sample(
        t=t,
        columns=cols,
        history=panel.features[t - L + 1 : t + 1][:, cols],
        caps=panel.cap_weight[t, cols],
        industries=panel.industry[t, cols],
        forward=panel.returns[t + 1 : t + H + 1][:, cols],
        current=panel.returns[t, cols],
    )


def build_samples(panel: PanelDataset, dates: Sequence[int], L: int, H: int, K: int) -> list[Sample]:
    """Samples for every date in ``dates`` whose horizon stays inside ``dates``."""
    dates = list(dates)
    if not dates:
        return []
    last = dates[-1]
    out = []
    for t in dates:
        if t + H > last:
            break
        s = make_sample(panel, t, L, H)
        if s is not None and len(s.columns) > K:
            out.append(s)
    return out


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def sample_loss_grad(params, net_cfg, loss_cfg, s: Sample, training=False, rng=None, want_grad=True):
    F, cache = fn.forward_values(params, net_cfg, s.history, s.caps, s.industries, training, rng)
    loss, dF = loss_and_gradient(F, s.forward, loss_cfg, s.current, want_grad=want_grad)
    if not math.isfinite(loss):
        raise DivergedLoss(f"non-finite loss on date index {s.t}")
    if not want_grad:
        return loss, None
    return loss, fn.backward(params, net_cfg, cache, dF)


def mean_loss(params, net_cfg, loss_cfg, samples: Sequence[Sample]) -> float:
    if not samples:
        return math.nan
    return float(np.mean([sample_loss_grad(params, net_cfg, loss_cfg, s, want_grad=False)[0] for s in samples]))


# --------------------------------------------------------------- state I/O


def _arrays_to_json(d: dict) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(d.items())}


def _arrays_from_json(d: dict) -> dict:
    return {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d.items()}


def _save_state(path, state: dict) -> None:
    doc = dict(state)
    for key in ("params", "best_params", "adam_m", "adam_v"):
        doc[key] = _arrays_to_json(state[key])
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True))
    tmp.replace(path)


def _load_state(path) -> dict:
    doc = json.loads(Path(path).read_text())
    for key in ("params", "best_params", "adam_m", "adam_v"):
        doc[key] = _arrays_from_json(doc[key])
    return doc


# ------------------------------------------------------------------- train


def train(
    panel: PanelDataset,
    splits: tuple[Sequence[int], Sequence[int]] | tuple[Sequence[int], Sequence[int], Sequence[int]],
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    state_path=None,
    resume: bool = False,
):
    """Fit the network; returns (best params, report dict).

    ``splits`` holds the train and validation date-index ranges (a trailing test
    range is ignored). With ``state_path`` the full optimizer state is written
    after every epoch and ``resume=True`` continues from it.
    """
    train_idx, valid_idx = splits[0], splits[1]
    loss_cfg = train_cfg.loss_config()
    L, H, K = net_cfg.lookback, loss_cfg.H, net_cfg.K
    train_samples = build_samples(panel, train_idx, L, H, K)
    if not train_samples:
        raise InsufficientHistory(f"training range too short for lookback {L} and horizon {H}")
    valid_samples = build_samples(panel, valid_idx, L, H, K)

    if resume and state_path is not None and Path(state_path).exists():
        st = _load_state(state_path)
        params, best_params = st["params"], st["best_params"]
        opt = Adam(params, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
        opt.m, opt.v, opt.t = st["adam_m"], st["adam_v"], st["adam_t"]
        rng = np.random.default_rng()
        rng.bit_generator.state = st["rng_state"]
        history, epoch0 = st["history"], st["epoch"]
        best_val, best_epoch, bad = st["best_val"], st["best_epoch"], st["bad_epochs"]
    else:
        params = fn.init_params(net_cfg, train_cfg.seed)
        best_params = {k: v.copy() for k, v in params.items()}
        opt = Adam(params, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
        rng = np.random.default_rng(train_cfg.seed)
        history, epoch0 = [], 0
        best_val, best_epoch, bad = math.inf, -1, 0

    stopped_early = False
    for epoch in range(epoch0, train_cfg.max_epochs):
        if bad >= train_cfg.early_stop_patience:
            stopped_early = True
            break
        t0 = time.perf_counter()
        order = rng.permutation(len(train_samples))
        acc: dict | None = None
        n_acc = 0
        losses = []
        for j, i in enumerate(order):
            loss, g = sample_loss_grad(params, net_cfg, loss_cfg, train_samples[i], True, rng)
            losses.append(loss)
            if acc is None:
                acc = g
            else:
                for k in acc:
                    acc[k] += g[k]
            n_acc += 1
            if n_acc == train_cfg.accumulation or j == len(order) - 1:
                opt.step(params, acc)
                acc, n_acc = None, 0
        val = mean_loss(params, net_cfg, loss_cfg, valid_samples) if valid_samples else float(np.mean(losses))
        if not math.isfinite(val):
            raise DivergedLoss(f"validation loss is {val} after epoch {epoch}")
        if val < best_val:
            best_val, best_epoch, bad = val, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            bad += 1
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "valid_loss": val,
                "wall_time": time.perf_counter() - t0,
            }
        )
        log.info("epoch %d train %.5f valid %.5f", epoch, history[-1]["train_loss"], val)
        if state_path is not None:
            _save_state(
                state_path,
                {
                    "params": params,
                    "best_params": best_params,
                    "adam_m": opt.m,
                    "adam_v": opt.v,
                    "adam_t": opt.t,
                    "rng_state": rng.bit_generator.state,
                    "history": history,
                    "epoch": epoch + 1,
                    "best_val": best_val,
                    "best_epoch": best_epoch,
                    "bad_epochs": bad,
                },
            )

    report = {
        "seed": train_cfg.seed,
        "net_config": asdict(net_cfg),
        "train_config": asdict(train_cfg),
        "epochs": history,
        "best_epoch": best_epoch,
        "best_valid_loss": best_val,
        "stopped_early": stopped_early or bad >= train_cfg.early_stop_patience,
        "n_train_dates": len(train_samples),
        "n_valid_dates": len(valid_samples),
    }
    return best_params, report


# --------------------------------------------------------------- inference


def window_columns(panel: PanelDataset, t: int, L: int) -> np.ndarray:
    if t - L + 1 < 0:
        raise InsufficientHistory(f"date index {t} has fewer than {L} days of history")
    return np.flatnonzero(panel.valid[t - L + 1 : t + 1].all(axis=0))


def raw_factors(params, net_cfg: NetConfig, panel: PanelDataset, t: int) -> FactorMatrix:
    """Unsmoothed network output at date index t over stocks with a full lookback window."""
    L = net_cfg.lookback
    cols = window_columns(panel, t, L)
    if cols.size < 2:
        raise InsufficientHistory(f"fewer than two stocks with {L} days of history at {panel.dates[t]}")
    return fn.forward(
        params,
        net_cfg,
        panel.features[t - L + 1 : t + 1][:, cols],
        panel.cap_weight[t, cols],
        panel.industry[t, cols],
        date=panel.dates[t],
        stock_ids=panel.stock_ids[cols],
    )


def smooth_step(prev: np.ndarray | None, raw: np.ndarray, a: float) -> np.ndarray:
    """One exponential-smoothing update a * prev + (1 - a) * raw; no history means raw."""
    return raw if prev is None else a * prev + (1.0 - a) * raw


def infer_factors(
    params,
    net_cfg: NetConfig,
    panel: PanelDataset,
    dates: Sequence[int],
    smoothing: float = 0.99,
    weight_on_previous: bool = True,
) -> list[FactorMatrix]:
    """Deterministic factors for each date index, exponentially smoothed per stock-factor cell.

    The smoothed state s_t = a * s_{t-1} + (1 - a) * raw_t (a = ``smoothing``, or
    1 - smoothing when ``weight_on_previous`` is False) is re-normalized before output;
    stocks missing on the previous date restart from their raw value.
    """
    a = smoothing if weight_on_previous else 1.0 - smoothing
    state: dict[str, np.ndarray] = {}
    out = []
    for t in dates:
        fm = raw_factors(params, net_cfg, panel, t)
        if a == 0.0:
            out.append(fm)
            state = {}
            continue
        sm = np.empty_like(fm.values)
        new_state = {}
        for i, sid in enumerate(fm.stock_ids.tolist()):
            sm[i] = smooth_step(state.get(sid), fm.values[i], a)
            new_state[sid] = sm[i]
        state = new_state
        caps = panel.cap_weight[t, np.searchsorted(panel.stock_ids, fm.stock_ids)]
        out.append(FactorMatrix(date=fm.date, stock_ids=fm.stock_ids, values=fn.norm_op(sm, caps)))
    return out
