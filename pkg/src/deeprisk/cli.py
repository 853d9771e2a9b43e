"""``deeprisk`` command line: synth, train, factors, cov, backtest, report.

Exit codes: 0 success, 2 usage or configuration, 3 data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import factornet as fn
from . import io, pipeline, trainer
from .config import load_config, net_config, parse_overrides, synth_spec, train_config
from .errors import ConfigError, DeepRiskError, NoOverlap
from .panel import as_day, load_panel, write_panel
from .synth import generate_panel, write_truth

log = logging.getLogger("deeprisk")


def _config(args) -> dict:
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _panel(path):
    if not Path(path).exists():
        raise ConfigError(f"panel file {path} not found")
    return load_panel(path)


def _factors(path):
    if not Path(path).exists():
        raise ConfigError(f"factor file {path} not found")
    return io.read_factors(path)


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> None:
    if not Path(args.spec).exists():
        raise ConfigError(f"spec file {args.spec} not found")
    try:
        doc = json.loads(Path(args.spec).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"spec file {args.spec}: {e}") from None
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = synth_spec(doc)
    panel, truth = generate_panel(spec)
    out = _out(args)
    write_panel(panel, out / "panel.csv")
    write_truth(truth, panel, out)
    io.write_json(out / "synth_meta.json", {"seed": spec.seed, "spec": asdict(spec)})
    log.info("wrote %d dates x %d stocks to %s", panel.n_dates, panel.n_stocks, out)


def cmd_train(args) -> None:
    cfg = _config(args)
    panel = _panel(args.panel)
    train_r, valid_r, _ = pipeline.split_ranges(panel, cfg)
    ncfg = net_config(cfg, panel.n_features)
    tcfg = train_config(cfg)
    log.info("lr=%g lambda=%g H=%d seed=%d", tcfg.learning_rate, tcfg.lam, tcfg.H, tcfg.seed)
    out = _out(args)
    params, report = trainer.train(panel, (train_r, valid_r), ncfg, tcfg, out / "train_state.json", args.resume)
    fn.save_checkpoint(out / "model.json", params, ncfg, tcfg.seed, {"best_epoch": report["best_epoch"]})
    io.write_json(out / "training_report.json", report)


def cmd_factors(args) -> None:
    cfg = _config(args)
    panel = _panel(args.panel)
    params = ncfg = None
    if args.model == "drm":
        if not args.checkpoint:
            raise ConfigError("--model drm needs --checkpoint")
        params, ncfg, _, _ = fn.load_checkpoint(args.checkpoint)
        if ncfg.P != panel.n_features:
            raise ConfigError(f"checkpoint expects {ncfg.P} features, panel has {panel.n_features}")
    factors = pipeline.compute_factors(args.model, panel, cfg, params=params, net_cfg=ncfg, K=args.k)
    out = _out(args)
    io.write_factors(factors, out / "factors.csv")
    io.write_json(
        out / "factors_meta.json",
        {
            "seed": cfg["seed"],
            "model": args.model,
            "k": int(factors[0].values.shape[1]) if factors else 0,
            "n_dates": len(factors),
            "first_date": str(factors[0].date) if factors else None,
            "last_date": str(factors[-1].date) if factors else None,
            "smoothing": cfg["smoothing"] if args.model == "drm" else None,
        },
    )


def cmd_cov(args) -> None:
    cfg = _config(args)
    panel = _panel(args.panel)
    factors = _factors(args.factors)
    d = as_day(args.date) if args.date else factors[-1].date
    fm = next((f for f in factors if f.date == d), None)
    if fm is None:
        raise NoOverlap(f"no factors on {d}")
    from .riskmodel import estimate_covariance, factor_return_series

    series = factor_return_series(factors, panel, cfg["weights_mode"], cfg["alignment"])
    est = estimate_covariance(fm, panel, series, pipeline.cov_config(cfg))
    out = _out(args)
    io.write_covariance(est.sigma, est.stock_ids, out / "covariance.csv")
    io.write_covariance(est.sigma_b, np.array(series.names), out / "factor_covariance.csv")
    io.write_factor_returns(series, out / "factor_returns.csv")
    io.write_json(out / "cov_meta.json", {"seed": cfg["seed"], **est.metadata})


def cmd_backtest(args) -> None:
    cfg = _config(args)
    panel = _panel(args.panel)
    factors = _factors(args.factors)
    _, _, test = pipeline.split_ranges(panel, cfg)
    bt = pipeline.run_backtest(factors, panel, test, cfg)
    out = _out(args)
    io.write_weights(bt.gmv, out / "weights_gmv.csv")
    io.write_weights(bt.gmv_plus, out / "weights_gmv_plus.csv")
    io.write_json(out / "backtest_summary.json", {"seed": cfg["seed"], **bt.summary})


def cmd_report(args) -> None:
    cfg = _config(args)
    panel = _panel(args.panel)
    factors = _factors(args.factors)
    _, _, test = pipeline.split_ranges(panel, cfg)
    rep = pipeline.build_report(factors, panel, test, cfg)
    out = _out(args)
    io.write_json(out / "metrics.json", rep.metrics)
    io.write_table(out / "r2_by_date.csv", ["date", "r2"], zip(map(str, rep.r2.dates), rep.r2.r2))
    K = rep.tstats.shape[1]
    names = [f"f{k + 1}" for k in range(K)]
    io.write_table(out / "tstats_by_date.csv", ["date", *names], ([str(d), *row] for d, row in zip(rep.tstat_dates, rep.tstats)))
    io.write_table(out / "vif_by_date.csv", ["date", *names], ([str(d), *row] for d, row in zip(rep.vif.dates, rep.vif.per_date)))
    io.write_table(
        out / "autocorr_by_date.csv", ["date", *names], ([d, *row] for d, row in zip(rep.autocorr_dates, rep.autocorr_pairs))
    )
    io.write_factor_returns(rep.series, out / "factor_returns.csv")
    cum = np.cumsum(rep.series.coef, axis=0)
    io.write_table(out / "cumulative_factor_returns.csv", ["date", *rep.series.names], ([str(d), *row] for d, row in zip(rep.series.dates, cum)))


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deeprisk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, panel=True, factors=False):
        sp.add_argument("--config", help="flat JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
        sp.add_argument("--out", required=True)
        if panel:
            sp.add_argument("--panel", required=True)
        if factors:
            sp.add_argument("--factors", required=True, help="factor CSV written by the factors command")

    sp = sub.add_parser("synth", help="generate a synthetic panel with ground truth")
    sp.add_argument("--spec", required=True, help="JSON object with SynthSpec fields")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="fit the factor network")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="continue from OUT/train_state.json")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("factors", help="emit factor exposures")
    common(sp)
    sp.add_argument("--model", choices=["drm", "frm", "srm"], required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--k", type=int, help="number of statistical factors (srm)")
    sp.set_defaults(func=cmd_factors)

    sp = sub.add_parser("cov", help="covariance forecast at one date")
    common(sp, factors=True)
    sp.add_argument("--date", help="factor date (default: last)")
    sp.set_defaults(func=cmd_cov)

    sp = sub.add_parser("backtest", help="GMV and long-only GMV over the test range")
    common(sp, factors=True)
    sp.set_defaults(func=cmd_backtest)

    sp = sub.add_parser("report", help="factor diagnostics and portfolio metrics")
    common(sp, factors=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DeepRiskError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
