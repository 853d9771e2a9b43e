"""Two-branch recurrent factor network with a cross-sectional attention residual.

Branch A runs a stacked GRU over each stock's raw feature history. Branch B runs
a second GRU over ``x - x_tilde`` where ``x_tilde`` is a graph-attention
aggregate of the day's cross-section. Each branch is pooled over time with
additive attention, projected to its block of factors and normalized with
``norm_op``; the two blocks are concatenated.

Everything is plain numpy with an explicit backward pass; ``forward`` can
return a cache that ``backward`` consumes to produce parameter gradients.
Arrays use a row convention: a batch of N stocks is an (N, features) matrix.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, EmptyNeighborhood, InvalidSpec, ZeroVariance

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    P: int
    K: int
    hidden: int = 32
    layers: int = 2
    K1: int | None = None  # factors from the plain branch; default K // 2
    lookback: int = 60
    gat_dropout: float = 0.5
    gat_enabled: bool = True
    neighborhood: Literal["full", "industry"] = "full"
    leaky_slope: float = 0.2
    self_aggregate: bool = False  # sum alpha_ij W x_i instead of W x_j

    def __post_init__(self):
        if self.P < 1 or self.K < 1 or self.hidden < 1 or self.layers < 1 or self.lookback < 1:
            raise InvalidSpec(f"non-positive dimension in {self}")
        if self.gat_enabled and not 1 <= self.k1 <= self.K - 1:
            raise InvalidSpec(f"need 1 <= K1 <= K-1 with the attention branch, got K1={self.k1}, K={self.K}")
        if not 0.0 <= self.gat_dropout < 1.0:
            raise InvalidSpec("gat_dropout must lie in [0, 1)")
        if self.neighborhood not in ("full", "industry"):
            raise InvalidSpec(f"unknown neighborhood {self.neighborhood!r}")

    @property
    def k1(self) -> int:
        if not self.gat_enabled:
            return self.K
        return self.K // 2 if self.K1 is None else self.K1

    @property
    def k2(self) -> int:
        return self.K - self.k1


@dataclass(frozen=True)
class FactorMatrix:
    date: np.datetime64 | None
    stock_ids: np.ndarray | None
    values: np.ndarray  # (N, K)

    @property
    def K(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------- parameters


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    H, P = cfg.hidden, cfg.P
    shapes: dict[str, tuple[int, ...]] = {}
    branches = [("a", "proj_q", cfg.k1)]
    if cfg.gat_enabled:
        branches.append(("b", "proj_qt", cfg.k2))
    for br, proj, k in branches:
        for layer in range(cfg.layers):
            d_in = P if layer == 0 else H
            shapes[f"gru_{br}.{layer}.W_i"] = (3 * H, d_in)
            shapes[f"gru_{br}.{layer}.W_h"] = (3 * H, H)
            shapes[f"gru_{br}.{layer}.b_i"] = (3 * H,)
            shapes[f"gru_{br}.{layer}.b_h"] = (3 * H,)
        shapes[f"attn_time_{br}.W"] = (H, H)
        shapes[f"attn_time_{br}.v"] = (H,)
        shapes[proj] = (H, k)
    if cfg.gat_enabled:
        shapes["gat.W"] = (P, P)
        shapes["gat.a"] = (2 * P,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...], cfg: NetConfig) -> int:
    if name.startswith("gru_"):
        return cfg.hidden
    if name == "gat.a":
        return 2 * cfg.P
    if name == "gat.W":
        return cfg.P
    return shape[0]


def init_params(cfg: NetConfig, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization, keys in sorted order."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in sorted(param_shapes(cfg).items()):
        bound = 1.0 / np.sqrt(_fan_in(name, shape, cfg))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def check_params(params: dict[str, np.ndarray], cfg: NetConfig) -> None:
    shapes = param_shapes(cfg)
    if set(shapes) != set(params):
        raise DimensionMismatch(f"parameter keys differ from config: {sorted(set(shapes) ^ set(params))}")
    for k, s in shapes.items():
        if params[k].shape != s:
            raise DimensionMismatch(f"{k}: expected {s}, got {params[k].shape}")
        if not np.all(np.isfinite(params[k])):
            raise DimensionMismatch(f"{k}: non-finite entries")


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _layer(params: dict, prefix: str) -> dict:
    return {k: params[f"{prefix}.{k}"] for k in ("W_i", "W_h", "b_i", "b_h")}


# ----------------------------------------------------------------------- GRU


def gru_cell(layer: dict, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One GRU step. Gate rows of the stacked weights are ordered (reset, update, candidate).

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h
    """
    W_i, W_h = layer["W_i"], layer["W_h"]
    H = W_h.shape[1]
    if x.shape[-1] != W_i.shape[1] or h_prev.shape[-1] != H:
        raise DimensionMismatch(f"x {x.shape} / h {h_prev.shape} vs W_i {W_i.shape}, W_h {W_h.shape}")
    gi = x @ W_i.T + layer["b_i"]
    gh = h_prev @ W_h.T + layer["b_h"]
    r = expit(gi[..., :H] + gh[..., :H])
    z = expit(gi[..., H : 2 * H] + gh[..., H : 2 * H])
    n = np.tanh(gi[..., 2 * H :] + r * gh[..., 2 * H :])
    return (1.0 - z) * n + z * h_prev


def gru_layer_forward(layer: dict, xs: np.ndarray):
    """Run a GRU layer over ``xs`` of shape (L, N, d_in) from a zero state."""
    W_h, b_h = layer["W_h"], layer["b_h"]
    L, N, _ = xs.shape
    H = W_h.shape[1]
    gi = xs @ layer["W_i"].T + layer["b_i"]
    hs = np.empty((L, N, H))
    r_all, z_all, n_all, ghn_all = (np.empty((L, N, H)) for _ in range(4))
    h = np.zeros((N, H))
    for t in range(L):
        gh = h @ W_h.T + b_h
        g = gi[t]
        r = expit(g[:, :H] + gh[:, :H])
        z = expit(g[:, H : 2 * H] + gh[:, H : 2 * H])
        ghn = gh[:, 2 * H :]
        n = np.tanh(g[:, 2 * H :] + r * ghn)
        h = (1.0 - z) * n + z * h
        hs[t], r_all[t], z_all[t], n_all[t], ghn_all[t] = h, r, z, n, ghn
    return hs, (xs, hs, r_all, z_all, n_all, ghn_all)


def gru_layer_backward(layer: dict, cache, dhs: np.ndarray):
    xs, hs, r_all, z_all, n_all, ghn_all = cache
    W_h = layer["W_h"]
    L, N, H = hs.shape
    dgi = np.empty((L, N, 3 * H))
    dgh = np.empty((L, N, 3 * H))
    dh_next = np.zeros((N, H))
    for t in range(L - 1, -1, -1):
        dh = dhs[t] + dh_next
        h_prev = hs[t - 1] if t > 0 else np.zeros((N, H))
        r, z, n = r_all[t], z_all[t], n_all[t]
        dan = dh * (1.0 - z) * (1.0 - n * n)
        daz = dh * (h_prev - n) * z * (1.0 - z)
        dar = dan * ghn_all[t] * r * (1.0 - r)
        dgi[t, :, :H] = dar
        dgi[t, :, H : 2 * H] = daz
        dgi[t, :, 2 * H :] = dan
        dgh[t, :, :H] = dar
        dgh[t, :, H : 2 * H] = daz
        dgh[t, :, 2 * H :] = dan * r
        dh_next = dh * z + dgh[t] @ W_h
    h_prev_all = np.concatenate([np.zeros((1, N, H)), hs[:-1]], axis=0)
    grads = {
        "W_i": _flat(dgi).T @ _flat(xs),
        "W_h": _flat(dgh).T @ _flat(h_prev_all),
        "b_i": dgi.sum(axis=(0, 1)),
        "b_h": dgh.sum(axis=(0, 1)),
    }
    return dgi @ layer["W_i"], grads


# ------------------------------------------------------- temporal attention


def attention_scores(hiddens: np.ndarray, W: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Additive scores s_t = v . tanh(W h_t); hiddens (L, ..., H) -> (L, ...)."""
    return np.tanh(hiddens @ W.T) @ v


def _softmax0(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def temporal_attention(hiddens: np.ndarray, score_params: dict) -> np.ndarray:
    """Softmax-over-time weighted sum of hidden states; hiddens (L, H) or (L, N, H)."""
    if hiddens.shape[0] < 1:
        raise DimensionMismatch("need at least one hidden state")
    w = _softmax0(attention_scores(hiddens, score_params["W"], score_params["v"]))
    return np.einsum("l...,l...h->...h", w, hiddens)


def _attention_forward(hiddens, W, v):
    U = np.tanh(hiddens @ W.T)
    w = _softmax0(U @ v)
    out = (w[..., None] * hiddens).sum(axis=0)
    return out, (hiddens, U, w)


def _attention_backward(W, v, cache, dout):
    hiddens, U, w = cache
    dw = (hiddens * dout).sum(axis=-1)
    ds = w * (dw - (w * dw).sum(axis=0, keepdims=True))
    dpre = ds[..., None] * v * (1.0 - U * U)
    dh = w[..., None] * dout[None] + dpre @ W
    grads = {
        "W": _flat(dpre).T @ _flat(hiddens),
        "v": ds.ravel() @ _flat(U),
    }
    return dh, grads


# ----------------------------------------------------------- graph attention


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def neighborhood_mask(industries: np.ndarray | None, kind: str) -> np.ndarray | None:
    """Boolean (N, N) mask of allowed neighbors, or None for the full cross-section."""
    if kind == "full" or industries is None:
        return None
    ind = np.asarray(industries)
    return ind[:, None] == ind[None, :]


def _masked_softmax(e: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        if not np.all(mask.any(axis=-1)):
            raise EmptyNeighborhood("a stock has no neighbors under the attention mask")
        e = np.where(mask, e, -np.inf)
    e = e - e.max(axis=-1, keepdims=True)
    ex = np.exp(e)
    return ex / ex.sum(axis=-1, keepdims=True)


def gat_coefficients(X: np.ndarray, W: np.ndarray, a: np.ndarray, neighborhood=None, slope: float = 0.2):
    """Normalized attention alpha (N, N) for one day; X may carry leading batch axes.

    e_ij = LeakyReLU(a . [W x_i || W x_j]), softmax over j in the neighborhood.
    ``neighborhood`` is a boolean (N, N) mask or None for all stocks.
    """
    P = W.shape[0]
    if X.shape[-1] != W.shape[1] or a.shape != (2 * P,):
        raise DimensionMismatch(f"X {X.shape}, W {W.shape}, a {a.shape}")
    V = X @ W.T
    raw = (V @ a[:P])[..., :, None] + (V @ a[P:])[..., None, :]
    return _masked_softmax(_leaky(raw, slope), neighborhood)


def gat_aggregate(X: np.ndarray, alpha: np.ndarray, W: np.ndarray, slope: float = 0.2, self_only: bool = False):
    """x_tilde_i = LeakyReLU(sum_j alpha_ij W x_j).

    ``self_only=True`` uses W x_i inside the sum, which collapses to
    LeakyReLU(W x_i) for row-stochastic alpha.
    """
    V = X @ W.T
    Z = V if self_only else alpha @ V
    return _leaky(Z, slope)


def _gat_forward(X, W, a, mask, slope, strict, dropout, rng):
    P = W.shape[0]
    V = X @ W.T  # (L, N, P)
    raw = (V @ a[:P])[..., :, None] + (V @ a[P:])[..., None, :]
    alpha = _masked_softmax(_leaky(raw, slope), mask)
    keep = None
    alpha_d = alpha
    if dropout > 0.0 and rng is not None:
        keep = rng.random(alpha.shape) >= dropout
        s = (alpha * keep).sum(axis=-1, keepdims=True)
        dead = s[..., 0] <= 0.0
        if dead.any():
            keep[dead] = True
            s = (alpha * keep).sum(axis=-1, keepdims=True)
        alpha_d = alpha * keep / s
    Z = V if strict else alpha_d @ V
    Xt = _leaky(Z, slope)
    return Xt, (X, V, raw, alpha, keep, alpha_d, Z)


def _gat_backward(W, a, cache, dXt, slope, strict):
    X, V, raw, alpha, keep, alpha_d, Z = cache
    P = W.shape[0]
    dZ = dXt * _leaky_grad(Z, slope)
    if strict:
        dV = dZ
        grads = {"W": _flat(dV).T @ _flat(X), "a": np.zeros_like(a)}
        return grads
    dalpha_d = dZ @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(alpha_d, -1, -2) @ dZ
    if keep is not None:
        s = (alpha * keep).sum(axis=-1, keepdims=True)
        dalpha = keep * (dalpha_d - (dalpha_d * alpha_d).sum(axis=-1, keepdims=True)) / s
    else:
        dalpha = dalpha_d
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
    draw = de * _leaky_grad(raw, slope)
    ds1 = draw.sum(axis=-1)
    ds2 = draw.sum(axis=-2)
    da = np.concatenate([ds1.ravel() @ _flat(V), ds2.ravel() @ _flat(V)])
    dV = dV + ds1[..., None] * a[:P] + ds2[..., None] * a[P:]
    return {"W": _flat(dV).T @ _flat(X), "a": da}


# ------------------------------------------------------------ normalization


def norm_op(v: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Cap-weighted zero mean, equal-weighted unit (population) std.

    Works column-wise on (N, K) input as well as on a single (N,) vector.
    """
    out, _ = _norm_forward(np.asarray(v, dtype=float), np.asarray(caps, dtype=float))
    return out


def _norm_forward(V, caps):
    if V.shape[0] < 2:
        raise ZeroVariance("need at least two stocks to normalize")
    w = caps / caps.sum()
    m = w @ V
    sd = V.std(axis=0)
    if np.any(sd <= 1e-12 * (np.abs(m) + 1.0)):
        raise ZeroVariance("constant column cannot be normalized")
    return (V - m) / sd, (V, w, m, sd)


def _norm_backward(cache, dU):
    V, w, m, sd = cache
    N = V.shape[0]
    d = V - m
    c = V - V.mean(axis=0)
    g_sum = dU.sum(axis=0)
    gd = (dU * d).sum(axis=0)
    if V.ndim == 1:
        return (dU - w * g_sum) / sd - gd * c / (N * sd**3)
    return (dU - np.outer(w, g_sum)) / sd - c * (gd / (N * sd**3))


# ------------------------------------------------------------------ forward


def _branch_forward(params, cfg, br, xs):
    caches = []
    h = xs
    for layer in range(cfg.layers):
        h, c = gru_layer_forward(_layer(params, f"gru_{br}.{layer}"), h)
        caches.append(c)
    pooled, acache = _attention_forward(h, params[f"attn_time_{br}.W"], params[f"attn_time_{br}.v"])
    return pooled, (caches, acache)


def _branch_backward(params, cfg, br, cache, dpooled, grads):
    caches, acache = cache
    dh, ag = _attention_backward(params[f"attn_time_{br}.W"], params[f"attn_time_{br}.v"], acache, dpooled)
    grads[f"attn_time_{br}.W"] = ag["W"]
    grads[f"attn_time_{br}.v"] = ag["v"]
    for layer in range(cfg.layers - 1, -1, -1):
        prefix = f"gru_{br}.{layer}"
        dh, lg = gru_layer_backward(_layer(params, prefix), caches[layer], dh)
        for k, g in lg.items():
            grads[f"{prefix}.{k}"] = g
    return dh


def forward_values(
    params: dict,
    cfg: NetConfig,
    history: np.ndarray,
    caps: np.ndarray,
    industries: np.ndarray | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Factor values (N, K) plus the cache for ``backward``."""
    history = np.asarray(history, dtype=float)
    if history.ndim != 3 or history.shape[2] != cfg.P:
        raise DimensionMismatch(f"history must be (L, N, {cfg.P}), got {history.shape}")
    if history.shape[1] != len(caps):
        raise DimensionMismatch("caps length differs from the number of stocks")
    pooled_a, cache_a = _branch_forward(params, cfg, "a", history)
    raw_a = pooled_a @ params["proj_q"]
    Fa, ncache_a = _norm_forward(raw_a, caps)
    cache = {"a": cache_a, "na": ncache_a, "pooled_a": pooled_a}
    if not cfg.gat_enabled:
        return Fa, cache
    mask = neighborhood_mask(industries, cfg.neighborhood)
    dropout = cfg.gat_dropout if training else 0.0
    Xt, gcache = _gat_forward(
        history, params["gat.W"], params["gat.a"], mask, cfg.leaky_slope, cfg.self_aggregate, dropout, rng
    )
    pooled_b, cache_b = _branch_forward(params, cfg, "b", history - Xt)
    raw_b = pooled_b @ params["proj_qt"]
    Fb, ncache_b = _norm_forward(raw_b, caps)
    cache.update(b=cache_b, nb=ncache_b, pooled_b=pooled_b, gat=gcache)
    return np.concatenate([Fa, Fb], axis=1), cache


def forward(
    params: dict,
    cfg: NetConfig,
    history: np.ndarray,
    caps: np.ndarray,
    industries: np.ndarray | None = None,
    date=None,
    stock_ids=None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> FactorMatrix:
    """Map a (L, N, P) feature window to an N x K factor matrix.

    Dropout on the attention weights only happens with ``training=True`` and an rng.
    """
    values, _ = forward_values(params, cfg, history, caps, industries, training, rng)
    return FactorMatrix(date=date, stock_ids=stock_ids, values=values)


def backward(params: dict, cfg: NetConfig, cache: dict, dF: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given dLoss/dF."""
    grads: dict[str, np.ndarray] = {}
    k1 = cfg.k1
    draw_a = _norm_backward(cache["na"], dF[:, :k1])
    grads["proj_q"] = cache["pooled_a"].T @ draw_a
    _branch_backward(params, cfg, "a", cache["a"], draw_a @ params["proj_q"].T, grads)
    if cfg.gat_enabled:
        draw_b = _norm_backward(cache["nb"], dF[:, k1:])
        grads["proj_qt"] = cache["pooled_b"].T @ draw_b
        dx_resid = _branch_backward(params, cfg, "b", cache["b"], draw_b @ params["proj_qt"].T, grads)
        g = _gat_backward(params["gat.W"], params["gat.a"], cache["gat"], -dx_resid, cfg.leaky_slope, cfg.self_aggregate)
        grads["gat.W"] = g["W"]
        grads["gat.a"] = g["a"]
    return grads


# --------------------------------------------------------------- checkpoint


def save_checkpoint(path, params: dict, cfg: NetConfig, seed: int, extra: dict | None = None) -> None:
    """JSON container: config, row-major parameter tensors keyed by name, seed."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "seed": int(seed),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(params.items())},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path):
    """Returns (params, NetConfig, seed, extra)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidSpec(f"unsupported checkpoint version {doc.get('version')}")
    cfg = NetConfig(**doc["config"])
    params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
    check_params(params, cfg)
    return params, cfg, doc["seed"], doc.get("extra", {})
