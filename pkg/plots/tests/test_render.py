"""Rendering tests against artifacts produced by the simulator CLI.

The fixture shells out to the installed ``agechemo`` command so the
package under test only ever sees the CSV/JSON files, exactly like a
user would.  The dilution-panel checks read pixels back out of the
saved PNGs; the render metadata is used for panel geometry only.
"""

import json
import shutil
import subprocess

import numpy as np
import pytest
from PIL import Image

from agechemo_plots.render import RenderError, RunFiles, load_run, main, read_table, render_run

SCENARIOS = ("fig1", "fig2", "fig3", "fig4")


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    """One CLI invocation covering all demo scenarios at a small grid."""
    exe = shutil.which("agechemo")
    assert exe is not None, "simulator CLI not on PATH; install the main package first"
    out = tmp_path_factory.mktemp("runs")
    cmd = [exe, "run", *SCENARIOS, "--grid", "200", "--out", str(out)]
    proc = subprocess.run(cmd, capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    return out


def _pixels(info):
    img = np.asarray(Image.open(info["out"]).convert("RGB")).astype(int)
    assert [img.shape[1], img.shape[0]] == info["image_size"]
    panel = info["d_panel"]
    r0, r1 = int(panel["row_lo"]), int(panel["row_hi"])
    c0, c1 = int(panel["col_lo"]), int(panel["col_hi"])
    return panel, r0, img[r0 : r1 + 1, c0 : c1 + 1]


def _red_rows(sub, r0):
    mask = (sub[:, :, 0] >= 180) & (sub[:, :, 1] <= 80) & (sub[:, :, 2] <= 80)
    rows = np.where(mask.any(axis=1))[0]
    return rows + r0


def _black_line_rows(sub, r0):
    # bound overlays span the panel; require dark pixels across at least
    # half its width so curve pixels and glyphs cannot register
    mask = (sub <= 60).all(axis=2)
    rows = np.where(mask.sum(axis=1) >= sub.shape[1] // 2)[0]
    return rows + r0


def _clusters(rows):
    groups = [[int(rows[0])]]
    for r in rows[1:]:
        if int(r) - groups[-1][-1] > 5:
            groups.append([])
        groups[-1].append(int(r))
    return groups


def test_every_demo_scenario_renders(artifacts, tmp_path):
    for name in SCENARIOS:
        info = render_run(load_run(str(artifacts / f"{name}_summary.json")), str(tmp_path))
        out = tmp_path / f"{name}.png"
        assert str(out) == info["out"]
        assert out.stat().st_size > 20_000
        with Image.open(out) as img:
            assert list(img.size) == info["image_size"]


def test_interval_bounds_box_the_dilution_curve(artifacts, tmp_path):
    info = render_run(load_run(str(artifacts / "fig4_summary.json")), str(tmp_path))
    panel, r0, sub = _pixels(info)
    black = _black_line_rows(sub, r0)
    groups = _clusters(black)
    assert len(groups) == 2, f"expected two bound lines, found row clusters {groups}"
    upper, lower = groups
    # clusters sit where the data transform put the bound values
    assert abs(np.mean(upper) - panel["bound_rows"]["D_max"]) < 3
    assert abs(np.mean(lower) - panel["bound_rows"]["D_min"]) < 3
    red = _red_rows(sub, r0)
    assert red.size > 0
    assert max(upper) < red.min(), "dilution curve touches the upper bound line"
    assert red.max() < min(lower), "dilution curve touches the lower bound line"


def test_negative_dilution_shows_below_the_zero_line(artifacts, tmp_path):
    with open(artifacts / "fig1_summary.json", encoding="utf-8") as fh:
        summary = json.load(fh)
    assert summary["run"]["min_D"] < 0
    info = render_run(load_run(str(artifacts / "fig1_summary.json")), str(tmp_path))
    panel, r0, sub = _pixels(info)
    assert "bound_rows" not in panel
    red = _red_rows(sub, r0)
    assert red.max() > panel["zero_row"], "curve never drawn below the zero line"


def test_render_from_bare_timeseries_csv(artifacts, tmp_path):
    info = render_run(load_run(str(artifacts / "fig2_timeseries.csv")), str(tmp_path))
    assert info["name"] == "fig2"
    assert info["profiles"] is not None, "sibling profile file should be picked up"
    assert "bound_rows" not in info["d_panel"]
    assert (tmp_path / "fig2.png").exists()


def test_render_entry_point(artifacts, tmp_path, capsys):
    source = str(artifacts / "fig3_summary.json")
    assert main([source, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "fig3" in out and "wrote" in out
    assert main([str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_column_is_reported(tmp_path):
    path = tmp_path / "run_timeseries.csv"
    path.write_text("# comment\nt,u,y\n0.0,0.1,0.2\n", encoding="utf-8")
    with pytest.raises(RenderError, match=r"no column 'D' \(columns: t, u, y\)"):
        render_run(load_run(str(path)), str(tmp_path))


def test_bad_tables_are_located(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("# only comments\nt,D,u,y\n", encoding="utf-8")
    with pytest.raises(RenderError, match="no data rows"):
        read_table(str(empty))
    headerless = tmp_path / "headerless.csv"
    headerless.write_text("# nothing else\n", encoding="utf-8")
    with pytest.raises(RenderError, match="no header"):
        read_table(str(headerless))
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("t,D\n0.0,0.5\n1.0\n", encoding="utf-8")
    with pytest.raises(RenderError, match=r"ragged\.csv:3"):
        read_table(str(ragged))
    try:
        read_table(str(tmp_path / "missing.csv"))
    except RenderError as err:
        assert "missing.csv" in str(err)
    else:
        raise AssertionError("missing file must raise")


def test_summary_needs_files_map(tmp_path):
    bad = tmp_path / "bad_summary.json"
    bad.write_text(json.dumps({"name": "x"}), encoding="utf-8")
    with pytest.raises(RenderError, match="files.timeseries"):
        load_run(str(bad))


def test_profile_table_needs_age_column(tmp_path):
    ts = tmp_path / "run_timeseries.csv"
    ts.write_text("t,D,u,y\n0.0,0.5,0.0,1.0\n1.0,0.4,0.0,1.1\n", encoding="utf-8")
    prof = tmp_path / "run_profiles.csv"
    prof.write_text("x,t=0.0\n0.0,1.0\n1.0,2.0\n", encoding="utf-8")
    run = RunFiles(name="run", timeseries=str(ts), profiles=str(prof))
    with pytest.raises(RenderError, match="no leading 'a' column"):
        render_run(run, str(tmp_path))
