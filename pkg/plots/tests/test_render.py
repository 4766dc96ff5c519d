import subprocess
import sys
from pathlib import Path

import pytest

from uavnet_plots import (CsvDataError, SpecError, parse_figure_spec, render)

MSE_CSV = """seed,slot,uav_id,mse
1,1,0,0.5
1,1,1,0.4
1,2,0,0.3
1,2,1,0.2
2,1,0,0.7
2,1,1,0.6
2,2,0,0.1
2,2,1,0.3
"""

SPEC = """figure.input = mse.csv
figure.x = slot
figure.y = mse
figure.group = uav_id
figure.out = fig.svg
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return p


def test_parse_spec_round():
    spec = parse_figure_spec(SPEC)
    assert spec.input_csv == "mse.csv"
    assert spec.y == ("mse",)
    assert spec.group == "uav_id"


def test_parse_spec_rejects_unknown_key():
    with pytest.raises(SpecError, match="unknown key"):
        parse_figure_spec(SPEC + "figure.color = red\n")
    with pytest.raises(SpecError, match="figure."):
        parse_figure_spec("input = x\n")
    with pytest.raises(SpecError, match="missing required"):
        parse_figure_spec("figure.input = a.csv\n")


def test_render_groups_and_averages_seeds(tmp_path):
    write(tmp_path, "mse.csv", MSE_CSV)
    spec = parse_figure_spec(SPEC)
    result = render(spec, base_dir=tmp_path, out_dir=tmp_path)
    assert result.series_names == ["0", "1"]
    assert result.points_per_series == {"0": 2, "1": 2}
    assert result.path.exists() and result.path.stat().st_size > 0


def test_render_is_idempotent_and_does_not_touch_input(tmp_path):
    csv_path = write(tmp_path, "mse.csv", MSE_CSV)
    before = csv_path.read_bytes()
    spec = parse_figure_spec(SPEC)
    render(spec, base_dir=tmp_path, out_dir=tmp_path)
    first = (tmp_path / "fig.svg").read_bytes()
    render(spec, base_dir=tmp_path, out_dir=tmp_path)
    second = (tmp_path / "fig.svg").read_bytes()
    assert first == second
    assert csv_path.read_bytes() == before


def test_multiple_y_columns_make_series(tmp_path):
    write(tmp_path, "ee.csv", "slot,a,b\n1,2.0,3.0\n2,2.5,3.5\n")
    spec = parse_figure_spec(
        "figure.input = ee.csv\nfigure.x = slot\nfigure.y = a,b\nfigure.out = ee.svg\n")
    result = render(spec, base_dir=tmp_path, out_dir=tmp_path)
    assert result.series_names == ["a", "b"]


def test_header_only_is_no_data_error(tmp_path):
    write(tmp_path, "mse.csv", "seed,slot,uav_id,mse\n")
    spec = parse_figure_spec(SPEC)
    with pytest.raises(CsvDataError, match="no data rows"):
        render(spec, base_dir=tmp_path)


def test_malformed_row_reports_row_number(tmp_path):
    write(tmp_path, "mse.csv", "seed,slot,uav_id,mse\n1,1,0,0.5\n1,2,0\n")
    spec = parse_figure_spec(SPEC)
    with pytest.raises(CsvDataError, match="row 3"):
        render(spec, base_dir=tmp_path)


def test_non_numeric_cell_reports_row(tmp_path):
    write(tmp_path, "mse.csv", "seed,slot,uav_id,mse\n1,1,0,soon\n")
    spec = parse_figure_spec(SPEC)
    with pytest.raises(CsvDataError, match="row 2"):
        render(spec, base_dir=tmp_path)


def test_missing_column_rejected(tmp_path):
    write(tmp_path, "mse.csv", "seed,slot,uav_id\n1,1,0\n")
    spec = parse_figure_spec(SPEC)
    with pytest.raises(CsvDataError, match="'mse' not in header"):
        render(spec, base_dir=tmp_path)


def test_missing_series_lists_available_groups(tmp_path):
    write(tmp_path, "mse.csv", MSE_CSV)
    spec = parse_figure_spec(SPEC + "figure.series = 0,1,7\n")
    with pytest.raises(CsvDataError, match="available groups"):
        render(spec, base_dir=tmp_path)


def test_missing_input_csv(tmp_path):
    spec = parse_figure_spec(SPEC)
    with pytest.raises(CsvDataError, match="not found"):
        render(spec, base_dir=tmp_path)


def run_cli(args):
    return subprocess.run([sys.executable, "-m", "uavnet_plots.cli", *args],
                          capture_output=True, text=True)


def test_cli_renders_and_exit_codes(tmp_path):
    write(tmp_path, "mse.csv", MSE_CSV)
    spec_path = write(tmp_path, "fig.spec", SPEC)
    proc = run_cli(["--spec", str(spec_path), "--out", str(tmp_path)])
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "fig.svg").stat().st_size > 0

    bad_spec = write(tmp_path, "bad.spec", "figure.bogus = 1\n")
    assert run_cli(["--spec", str(bad_spec)]).returncode == 2

    lonely = write(tmp_path / "empty", "fig.spec", SPEC)
    proc = run_cli(["--spec", str(lonely)])
    assert proc.returncode == 1
    assert "not found" in proc.stderr
