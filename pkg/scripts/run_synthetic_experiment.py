"""Compare FRM, SRM, SRM(2x), DRM and DRM(2x) on a synthetic panel.

Prints a model table (held-out R^2, GMV and GMV+ vol) next to the published
full-scale numbers, plus per-factor diagnostics for DRM, and writes everything
to ``--out`` as JSON.

    python scripts/run_synthetic_experiment.py --out runs/synth --epochs 8
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from deeprisk import pipeline, reference
from deeprisk.config import load_config
from deeprisk.factornet import NetConfig
from deeprisk.synth import SynthSpec, generate_panel
from deeprisk.trainer import TrainConfig, train


@dataclass
class ExperimentConfig:
    synth_seed: int = 0
    train_seed: int = 0
    K: int = 4
    lookback: int = 20
    hidden: int = 32
    epochs: int = 8
    learning_rate: float = 2e-3
    accumulation: int = 16
    H: int = 20
    lam: float = 0.01
    train_end: int = 500  # date indices; validation runs to valid_end, test to the end
    valid_end: int = 625


def fit_drm(panel, ec: ExperimentConfig, K: int):
    ncfg = NetConfig(P=panel.n_features, K=K, lookback=ec.lookback, hidden=ec.hidden)
    tcfg = TrainConfig(
        learning_rate=ec.learning_rate, accumulation=ec.accumulation, max_epochs=ec.epochs,
        H=ec.H, lam=ec.lam, seed=ec.train_seed,
    )
    t0 = time.perf_counter()
    params, rep = train(panel, (range(ec.train_end), range(ec.train_end, ec.valid_end)), ncfg, tcfg)
    print(f"  trained DRM K={K} in {time.perf_counter() - t0:.0f}s (best epoch {rep['best_epoch']})", flush=True)
    return params, ncfg


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synthetic")
    for f, default in asdict(ExperimentConfig()).items():
        ap.add_argument(f"--{f.replace('_', '-')}", type=type(default), default=default)
    args = ap.parse_args()
    ec = ExperimentConfig(**{f: getattr(args, f) for f in asdict(ExperimentConfig())})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    panel, _ = generate_panel(SynthSpec(seed=ec.synth_seed))
    cfg = load_config(overrides={"smoothing": 0.0, "srm_window": 120})
    test = range(ec.valid_end, panel.n_dates)

    factor_sets = {
        "FRM": pipeline.compute_factors("frm", panel, cfg),
        "SRM": pipeline.compute_factors("srm", panel, cfg, K=ec.K),
        "SRM (x2)": pipeline.compute_factors("srm", panel, cfg, K=2 * ec.K),
    }
    for name, K in (("DRM", ec.K), ("DRM (x2)", 2 * ec.K)):
        params, ncfg = fit_drm(panel, ec, K)
        factor_sets[name] = pipeline.compute_factors("drm", panel, cfg, params=params, net_cfg=ncfg)

    results = {}
    print(f"\n{'model':<10}{'R2':>8}{'GMV':>8}{'GMV+':>8}   published R2/GMV/GMV+")
    for name, factors in factor_sets.items():
        rep = pipeline.build_report(factors, panel, test, cfg)
        results[name] = rep.metrics
        m = rep.metrics
        pub = reference.MODEL_TABLE[name]
        print(f"{name:<10}{m['r2_mean']:>8.4f}{m['gmv_vol']:>8.4f}{m['gmv_plus_vol']:>8.4f}   {pub}")
    m = results["FRM"]
    print(f"{'Market':<10}{'':>8}{m['market_vol']:>8.4f}{m['market_vol']:>8.4f}   {reference.MODEL_TABLE['Market']}")
    print(f"{'Equal':<10}{'':>8}{m['equal_weight_vol']:>8.4f}{m['equal_weight_vol']:>8.4f}")

    print("\nDRM factors: mean|t|  %|t|>2   VIF   autocorr")
    for f in results["DRM"]["factors"]:
        print(f"  f{f['id'] + 1:<3}{f['mean_t']:>9.3f}{f['pct_t_gt2']:>8.3f}{f['vif']:>7.3f}{f['autocorr']:>9.4f}")

    (out / "results.json").write_text(json.dumps({"config": asdict(ec), "models": results}, indent=2))
    print(f"\nwrote {out / 'results.json'}")


if __name__ == "__main__":
    main()
