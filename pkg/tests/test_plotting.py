import csv

import numpy as np
import pytest

from eqtp.plotting import PlotError, plot_curves, read_curves, resample


def write(path, rows, header=("step", "score", "best", "model", "augment")):
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(header)
        w.writerows(rows)
    return path


def test_groups_by_model_columns(tmp_path):
    p = write(tmp_path / "r.csv", [(100, 0.2, 0, "equivariant", "off"), (200, 0.9, 1, "equivariant", "off"),
                                   (100, 0.1, 0, "baseline", "on")])
    assert read_curves(p) == {"equivariant/off": [(100, 0.2), (200, 0.9)], "baseline/on": [(100, 0.1)]}


def test_file_stems_name_series(tmp_path):
    a = write(tmp_path / "a.csv", [(1, 0.5)], ("step", "score"))
    b = write(tmp_path / "b.csv", [(2, 0.7)], ("step", "score"))
    assert read_curves([a, b]) == {"a": [(1, 0.5)], "b": [(2, 0.7)]}


def test_resample_interpolates_inside_and_blanks_outside():
    grid, s = resample({"x": [(0, 0.0), (10, 1.0)], "y": [(5, 0.5)]})
    assert grid.tolist() == [0, 5, 10]
    assert s["x"].tolist() == [0.0, 0.5, 1.0]
    assert np.isnan(s["y"][0]) and s["y"][1] == 0.5 and np.isnan(s["y"][2])


@pytest.mark.parametrize("text,msg", [
    ("", "empty CSV"),
    ("step,loss\n1,2\n", ":1: missing column"),
    ("step,score\n1,0.5\nx,0.1\n", ":3:"),
    ("step,score\n1,0.5,9\n", ":2: expected 2 fields"),
    ("step,score\n1,1.5\n", ":2: step must be"),
    ("step,score\n1,0.5\n1,0.6\n", "conflicting"),
    ("step,score\n", "no data rows"),
])
def test_malformed_csv(tmp_path, text, msg):
    (tmp_path / "r.csv").write_text(text)
    with pytest.raises(PlotError, match=msg):
        read_curves(tmp_path / "r.csv")


def test_missing_file(tmp_path):
    with pytest.raises(PlotError):
        read_curves(tmp_path / "nope.csv")


def test_plot_writes_png_and_table(tmp_path):
    p = write(tmp_path / "report.csv", [(100, 0.2, 0, "equivariant", "off"), (300, 0.9, 1, "equivariant", "off"),
                                        (200, 0.1, 0, "baseline", "on")])
    png, table = plot_curves(p, tmp_path / "report.png", "demo")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert table.name == "report_resampled.csv"
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["step", "equivariant/off", "baseline/on"]
    assert rows[2] == ["200", "0.5500", "0.1000"]


def test_plot_single_point(tmp_path):
    p = write(tmp_path / "one.csv", [(5, 1.0)], ("step", "score"))
    png, table = plot_curves(p, tmp_path / "curve.png")
    assert png.exists() and table == tmp_path / "curve.csv"
