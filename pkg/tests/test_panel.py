import numpy as np
import pytest

from deeprisk.errors import EmptyPanel, MissingColumn, NoValidStocks, SpecOutOfRange, UnparseableRow
from deeprisk.panel import SplitSpec, cross_section, load_panel, split, standardize, write_panel
from deeprisk.synth import SynthSpec, generate_panel

HEADER = "date,stock_id," + ",".join(f"f{i}" for i in range(1, 11)) + ",return,cap_weight,industry\n"


def test_single_row_maps_fields(tmp_path):
    feats = ",".join(["0.12"] + ["0.5"] * 9)
    p = tmp_path / "p.csv"
    p.write_text(HEADER + f"2017-01-03,SH600000,{feats},0.0031,5.2e9,Banks\n")
    panel = load_panel(p)
    assert panel.valid.sum() == 1
    assert panel.returns[0, 0] == 0.0031
    assert panel.cap_weight[0, 0] == 5.2e9
    assert panel.features[0, 0, 0] == 0.12
    assert panel.industry_names[panel.industry[0, 0]] == "Banks"
    assert str(panel.dates[0]) == "2017-01-03"


def test_header_only_is_empty(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text(HEADER)
    with pytest.raises(EmptyPanel):
        load_panel(p)


def test_missing_column(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,stock_id,f1,return,cap_weight\n2017-01-03,A,1,0.1,1\n")
    with pytest.raises(MissingColumn):
        load_panel(p)


def test_bad_row_reports_line(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,stock_id,f1,return,cap_weight,industry\n2017-01-03,A,1,0.1,1,X\n2017-01-0x,B,1,0.1,1,X\n")
    with pytest.raises(UnparseableRow, match="line 3"):
        load_panel(p)


def test_invalid_rows_counted(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text(
        "date,stock_id,f1,return,cap_weight,industry\n"
        "2017-01-03,A,1,0.1,1,X\n"
        "2017-01-03,B,,0.1,1,X\n"
        "2017-01-03,C,1,0.1,-5,X\n"
    )
    panel = load_panel(p, report_path=tmp_path / "r.json")
    assert panel.valid.tolist() == [[True, False, False]]
    assert panel.load_report.invalid == 2
    assert (tmp_path / "r.json").exists()


def test_round_trip(tmp_path):
    panel, _ = generate_panel(SynthSpec(n_stocks=12, n_dates=30, n_features=5, n_factors=2, seed=4))
    write_panel(panel, tmp_path / "p.csv")
    again = load_panel(tmp_path / "p.csv")
    assert again.equals(panel)


def test_cross_section_sorted_and_masked(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text(
        "date,stock_id,f1,return,cap_weight,industry\n"
        "2017-01-03,C,1,0.1,1,X\n2017-01-03,A,2,0.2,1,X\n2017-01-03,B,3,0.3,1,Y\n2017-01-03,D,,0.3,1,Y\n"
        "2017-01-04,A,,0.1,1,X\n"
    )
    panel = load_panel(p)
    cs = cross_section(panel, "2017-01-03")
    assert cs.stock_ids.tolist() == ["A", "B", "C"]
    assert cs.returns.tolist() == [0.2, 0.3, 0.1]
    with pytest.raises(NoValidStocks):
        cross_section(panel, "2017-01-04")


def test_split_counts():
    panel, _ = generate_panel(SynthSpec(n_stocks=5, n_dates=750, n_features=5, n_factors=1))
    d = panel.dates
    tr, va, te = split(panel, SplitSpec(str(d[499]), str(d[624]), str(d[749])))
    assert (len(tr), len(va), len(te)) == (500, 125, 125)
    assert list(tr) + list(va) + list(te) == list(range(750))


def test_split_rejects_bad_order():
    panel, _ = generate_panel(SynthSpec(n_stocks=5, n_dates=20, n_features=5, n_factors=1))
    d = panel.dates
    with pytest.raises(SpecOutOfRange):
        split(panel, SplitSpec(str(d[10]), str(d[5]), str(d[19])))
    with pytest.raises(SpecOutOfRange):
        split(panel, SplitSpec(str(d[3]), str(d[5]), "2099-01-01"))


def test_standardize_off_by_default_and_zscore():
    panel, _ = generate_panel(SynthSpec(n_stocks=30, n_dates=5, n_features=5, n_factors=1))
    assert standardize(panel) is panel
    z = standardize(panel, zscore=True, winsorize=0.05)
    np.testing.assert_allclose(z.features.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.features.std(axis=1), 1.0, atol=1e-12)
