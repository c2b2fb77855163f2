import pandas as pd
import pytest

from report import fid_table, peak_ratios, plot_sweep, render_report
from storage.images import png_config_hash


@pytest.fixture
def curve():
    return pd.DataFrame({
        "embedding_source": ["fisher"] * 3 + ["activation"] * 3,
        "decoder_id": ["decoder_fisher"] * 3 + ["decoder_activation"] * 3,
        "alpha": [0.0, 0.25, 0.5] * 2,
        "fid": [2.0, 3.0, 4.0, 1.0, 5.0, 9.0],
        "n": 100,
        "seed": 0,
    })


def test_table_pivots_by_source_and_alpha(curve):
    table = fid_table(curve)
    assert list(table.columns) == [0.0, 0.25, 0.5]
    assert table.loc["activation", 0.25] == 5.0


def test_peak_ratios(curve):
    assert peak_ratios(curve) == {"activation": 9.0, "fisher": 2.0}


def test_zero_baseline_gives_infinite_ratio(curve):
    curve.loc[curve["embedding_source"] == "fisher", "fid"] = [0.0, 1.0, 2.0]
    assert peak_ratios(curve)["fisher"] == float("inf")


def test_render_report_writes_plot(curve, tmp_path):
    text = render_report(curve, tmp_path / "fid.png")
    assert "fisher: FID(α=0.5) / FID(α=0) = 2.000" in text
    assert (tmp_path / "fid.png").stat().st_size > 0


def test_sweep_plot(tmp_path):
    sweep = pd.DataFrame({"proj_dim": [16, 16, 64, 64], "density": [0.1, 1.0, 0.1, 1.0],
                          "recon_error": [0.3, 0.25, 0.2, 0.15]})
    assert plot_sweep(sweep, tmp_path / "sweep.png").exists()


def test_plots_record_config_hash(curve, tmp_path):
    render_report(curve, tmp_path / "fid.png", "5eed")
    assert png_config_hash(tmp_path / "fid.png") == "5eed"
    curve.attrs["config_hash"] = "c5v0"
    render_report(curve, tmp_path / "again.png")
    assert png_config_hash(tmp_path / "again.png") == "c5v0"
    sweep = pd.DataFrame({"proj_dim": [16], "density": [1.0], "recon_error": [0.3]})
    assert png_config_hash(plot_sweep(sweep, tmp_path / "sweep.png", "abcd")) == "abcd"
