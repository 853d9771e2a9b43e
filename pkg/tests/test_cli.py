import csv
import json

import numpy as np
import pytest

from deeprisk import io
from deeprisk.cli import main
from deeprisk.factornet import norm_op
from deeprisk.panel import load_panel
from deeprisk.portfolio import annualized_vol, daily_portfolio_returns

SPEC = {"n_stocks": 30, "n_dates": 160, "n_features": 6, "n_factors": 3, "seed": 2}
TINY_NET = ["--set", "lookback=5", "--set", "hidden=4", "--set", "K=2", "--set", "accumulation=8"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert main(["synth", "--spec", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    assert main(["factors", "--panel", str(root / "data/panel.csv"), "--model", "frm", "--out", str(root / "frm")]) == 0
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_outputs_and_determinism(data, tmp_path):
    for name in ("panel.csv", "truth_exposures.csv", "truth_factor_returns.csv", "truth_specific.csv", "synth_meta.json"):
        assert (data / "data" / name).exists()
    assert json.loads((data / "data/synth_meta.json").read_text())["seed"] == 2
    assert main(["synth", "--spec", str(data / "spec.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "panel.csv").read_bytes() == (data / "data/panel.csv").read_bytes()


def test_missing_spec_is_usage_error(tmp_path):
    assert main(["synth", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert main(["synth", "--out", str(tmp_path)]) == 2


def test_unknown_config_key(data, tmp_path):
    rc = main(["factors", "--panel", str(data / "data/panel.csv"), "--model", "frm", "--out", str(tmp_path), "--set", "bogus=1"])
    assert rc == 2


def test_train_echoes_defaults(data, tmp_path):
    rc = main(["train", "--panel", str(data / "data/panel.csv"), "--out", str(tmp_path), "--set", "max_epochs=1", *TINY_NET])
    assert rc == 0
    rep = json.loads((tmp_path / "training_report.json").read_text())
    tc = rep["train_config"]
    assert (tc["learning_rate"], tc["lam"], tc["H"]) == (0.0002, 0.01, 20)
    assert rep["seed"] == 0
    assert (tmp_path / "model.json").exists() and (tmp_path / "train_state.json").exists()


def test_train_bad_split_dates(data, tmp_path):
    rc = main(
        ["train", "--panel", str(data / "data/panel.csv"), "--out", str(tmp_path),
         "--set", "train_end=2015-03-01", "--set", "valid_end=2015-02-01", "--set", "test_end=2015-04-01"]
    )
    assert rc == 2


def test_resume_matches_uninterrupted(data, tmp_path):
    args = ["train", "--panel", str(data / "data/panel.csv"), "--seed", "4", *TINY_NET]
    assert main([*args, "--out", str(tmp_path / "full"), "--set", "max_epochs=3"]) == 0
    assert main([*args, "--out", str(tmp_path / "part"), "--set", "max_epochs=1"]) == 0
    assert main([*args, "--out", str(tmp_path / "part"), "--set", "max_epochs=3", "--resume"]) == 0
    assert (tmp_path / "full/model.json").read_bytes() == (tmp_path / "part/model.json").read_bytes()


def test_frm_factors_are_normalized_inputs(data):
    panel = load_panel(data / "data/panel.csv")
    fms = io.read_factors(data / "frm/factors.csv")
    assert len(fms) == panel.n_dates
    t = 17
    np.testing.assert_allclose(fms[t].values, norm_op(panel.features[t], panel.cap_weight[t]), rtol=1e-15)


def test_srm_double_width(data, tmp_path):
    panel = str(data / "data/panel.csv")
    assert main(["factors", "--panel", panel, "--model", "srm", "--k", "6", "--set", "srm_window=40", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "factors_meta.json").read_text())
    assert meta["k"] == 6 and meta["n_dates"] == 160 - 39


def test_drm_rerun_identical(data, tmp_path):
    panel = str(data / "data/panel.csv")
    assert main(["train", "--panel", panel, "--out", str(tmp_path / "m"), "--set", "max_epochs=1", *TINY_NET]) == 0
    for out in ("a", "b"):
        rc = main(["factors", "--panel", panel, "--model", "drm", "--checkpoint", str(tmp_path / "m/model.json"), "--out", str(tmp_path / out)])
        assert rc == 0
    assert (tmp_path / "a/factors.csv").read_bytes() == (tmp_path / "b/factors.csv").read_bytes()
    assert main(["factors", "--panel", panel, "--model", "drm", "--out", str(tmp_path / "c")]) == 2


def test_cov_metadata_and_psd_flag(data, tmp_path):
    panel, factors = str(data / "data/panel.csv"), str(data / "frm/factors.csv")
    assert main(["cov", "--panel", panel, "--factors", factors, "--out", str(tmp_path / "late")]) == 0
    meta = json.loads((tmp_path / "late/cov_meta.json").read_text())
    assert (meta["corr_halflife"], meta["var_halflife"], meta["vra_halflife"]) == (240, 60, 20)
    # the zero-sum industry returns make the factor covariance singular, so at most round-off is clipped
    assert meta["min_eigenvalue_ratio"] > -1e-12
    sigma, ids = io.read_covariance(tmp_path / "late/covariance.csv")
    assert sigma.shape == (30, 30) and np.allclose(sigma, sigma.T, atol=1e-12)
    # four factor-return dates for 1 + 5 + 6 coefficients: rank deficient, negative round-off gets clipped
    rc = main(["cov", "--panel", panel, "--factors", factors, "--date", "2015-01-09", "--set", "min_history=2", "--out", str(tmp_path / "early")])
    assert rc == 0
    early = json.loads((tmp_path / "early/cov_meta.json").read_text())
    assert early["n_history"] == 4
    assert early["psd_repaired"] is (early["min_eigenvalue_ratio"] < 0)
    assert early["psd_repaired"] is True
    sigma, _ = io.read_covariance(tmp_path / "early/covariance.csv")
    assert np.linalg.eigvalsh(sigma).min() > -1e-14


def test_cov_insufficient_history(data, tmp_path):
    rc = main(["cov", "--panel", str(data / "data/panel.csv"), "--factors", str(data / "frm/factors.csv"), "--date", "2015-01-09", "--out", str(tmp_path)])
    assert rc == 3


def test_backtest_summary_recomputable(data, tmp_path):
    assert main(["backtest", "--panel", str(data / "data/panel.csv"), "--factors", str(data / "frm/factors.csv"), "--out", str(tmp_path), "--seed", "9"]) == 0
    summary = json.loads((tmp_path / "backtest_summary.json").read_text())
    assert summary["seed"] == 9
    panel = load_panel(data / "data/panel.csv")
    end = panel.date_index(summary["last_return_date"])
    for name, key in (("weights_gmv.csv", "gmv_vol"), ("weights_gmv_plus.csv", "gmv_plus_vol")):
        ws = io.read_weights(tmp_path / name)
        assert all(abs(pw.w.sum() - 1) < 1e-12 for pw in ws)
        vol = annualized_vol(daily_portfolio_returns(ws, panel, end)[1])
        assert vol == pytest.approx(summary[key], rel=1e-12)
    assert all(pw.w.min() >= 0 for pw in io.read_weights(tmp_path / "weights_gmv_plus.csv"))


def test_report_fields_and_aggregation(data, tmp_path):
    assert main(["report", "--panel", str(data / "data/panel.csv"), "--factors", str(data / "frm/factors.csv"), "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    for key in ("r2_mean", "gmv_vol", "gmv_plus_vol", "seed"):
        assert key in m
    assert len(m["factors"]) == 6
    assert set(m["factors"][0]) >= {"mean_t", "pct_t_gt2", "vif", "autocorr"}

    def column_values(name):
        rows = read_csv(tmp_path / name)
        return np.array([[float(v) for v in r[1:]] for r in rows[1:]])

    assert m["r2_mean"] == pytest.approx(column_values("r2_by_date.csv")[:, 0].mean(), rel=1e-12)
    T = np.abs(column_values("tstats_by_date.csv"))
    V = column_values("vif_by_date.csv")
    A = column_values("autocorr_by_date.csv")
    for k, f in enumerate(m["factors"]):
        assert f["mean_t"] == pytest.approx(np.nanmean(T[:, k]), rel=1e-12)
        assert f["pct_t_gt2"] == pytest.approx(np.mean(T[:, k] > 2), rel=1e-12)
        assert f["vif"] == pytest.approx(V[:, k].mean(), rel=1e-12)
        assert f["autocorr"] == pytest.approx(A[:, k].mean(), rel=1e-12)


def test_report_empty_test_range(data, tmp_path):
    rc = main(
        ["report", "--panel", str(data / "data/panel.csv"), "--factors", str(data / "frm/factors.csv"), "--out", str(tmp_path),
         "--set", "train_frac=0.9", "--set", "valid_frac=0.1"]
    )
    assert rc == 3
