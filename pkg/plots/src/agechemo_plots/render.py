"""Render simulator run artifacts (CSV/JSON) into a four-panel figure.

The simulator's ``run`` command writes, per scenario, a timeseries CSV
(``t, D, u, y, ...diagnostics``), an age-profile CSV (``a`` plus one
``t=...`` column per snapshot), and a summary JSON whose ``files`` map
names the two CSVs relative to the JSON's directory.  This module reads
those files back and draws:

    y(t) with the setpoint        D(t) with the interval overlays
    u(t)                          age profiles at the snapshot times

Only the artifact files are consumed; nothing is recomputed from the
model.  Pass either the summary JSON (which carries the setpoint and the
interval bounds) or a bare timeseries CSV (panels render without
overlays).

The dilution panel is drawn for machine checking as well as for humans:
the D curve is pure red, the interval bounds are pure black horizontal
lines, and everything else in that panel (setpoint line, spines, ticks,
grid) is grey.  ``render_run`` reports the pixel rows of the bound lines
and the panel's interior pixel box so a test can verify, from the PNG
alone, that the red curve stays strictly between the black lines.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class RenderError(Exception):
    pass


# pure colors reserved for the machine-checked dilution panel
_RED = (1.0, 0.0, 0.0)
_BLACK = (0.0, 0.0, 0.0)
_GREY = "#888888"
_FRAME = "#666666"


@dataclass
class RunFiles:
    """Resolved artifact paths and overlay values for one run."""

    name: str
    timeseries: str
    profiles: str | None = None
    ystar: float | None = None
    Dstar: float | None = None
    D_min: float | None = None
    D_max: float | None = None
    meta: dict = field(default_factory=dict)


def read_table(path: str) -> tuple[list[str], np.ndarray]:
    """Read a run CSV: ``#`` comments, one header line, float rows.

    Returns the column names and a (rows, cols) float array.
    """
    header: list[str] | None = None
    rows: list[list[float]] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if header is None:
                    header = [c.strip() for c in line.split(",")]
                    continue
                cells = line.split(",")
                if len(cells) != len(header):
                    raise RenderError(
                        f"{path}:{lineno}: row has {len(cells)} cells, header has {len(header)}"
                    )
                try:
                    rows.append([float(c) for c in cells])
                except ValueError as err:
                    raise RenderError(f"{path}:{lineno}: {err}") from err
    except OSError as err:
        raise RenderError(f"cannot read {path}: {err}") from err
    if header is None:
        raise RenderError(f"{path}: no header line found")
    if not rows:
        raise RenderError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def _column(cols: list[str], data: np.ndarray, name: str, path: str) -> np.ndarray:
    if name not in cols:
        raise RenderError(
            f"{path} has no column {name!r} (columns: {', '.join(cols)})"
        )
    return data[:, cols.index(name)]


def _float_or_none(value) -> float | None:
    if value is None:
        return None
    return float(value)


def load_run(source: str) -> RunFiles:
    """Resolve a summary JSON or a timeseries CSV into a RunFiles.

    A JSON source names both CSVs in its ``files`` map (paths relative
    to the JSON's directory) and carries the setpoint and interval
    overlays.  A CSV source renders standalone; a sibling profile file
    following the ``*_timeseries.csv`` naming convention is picked up
    when present.
    """
    if source.endswith(".json"):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                summary = json.load(fh)
        except OSError as err:
            raise RenderError(f"cannot read {source}: {err}") from err
        except json.JSONDecodeError as err:
            raise RenderError(f"{source}: not valid JSON: {err}") from err
        files = summary.get("files")
        if not isinstance(files, dict) or "timeseries" not in files:
            raise RenderError(f"{source}: summary lacks a files.timeseries entry")
        base = os.path.dirname(os.path.abspath(source))
        timeseries = os.path.join(base, files["timeseries"])
        profiles = files.get("profiles")
        if profiles is not None:
            profiles = os.path.join(base, profiles)
            if not os.path.exists(profiles):
                profiles = None
        eqm = summary.get("equilibrium") or {}
        ctrl = summary.get("controller") or {}
        return RunFiles(
            name=str(summary.get("name", "run")),
            timeseries=timeseries,
            profiles=profiles,
            ystar=_float_or_none(eqm.get("ystar")),
            Dstar=_float_or_none(eqm.get("Dstar")),
            D_min=_float_or_none(ctrl.get("D_min")),
            D_max=_float_or_none(ctrl.get("D_max")),
            meta=summary,
        )
    name = os.path.basename(source)
    for suffix in ("_timeseries.csv", ".csv"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    profiles = None
    if source.endswith("_timeseries.csv"):
        sibling = source[: -len("_timeseries.csv")] + "_profiles.csv"
        if os.path.exists(sibling):
            profiles = sibling
    return RunFiles(name=name, timeseries=source, profiles=profiles)


def _panel_rows(fig, ax, pad_px: float = 3.0) -> dict:
    # interior pixel box of the axes in image coordinates (row 0 at top)
    height = fig.canvas.get_width_height()[1]
    ext = ax.get_window_extent()
    return {
        "col_lo": float(ext.x0 + pad_px),
        "col_hi": float(ext.x1 - pad_px),
        "row_lo": float(height - ext.y1 + pad_px),
        "row_hi": float(height - ext.y0 - pad_px),
    }


def _data_row(fig, ax, value: float) -> float:
    height = fig.canvas.get_width_height()[1]
    return float(height - ax.transData.transform((0.0, value))[1])


def render_run(run: RunFiles, out_dir: str, dpi: int = 110) -> dict:
    """Draw the four panels and save ``{name}.png`` under out_dir.

    Returns metadata with the output path, the image size, and the
    dilution panel's interior pixel box plus the pixel rows of the
    interval bound lines (when bounds are present).
    """
    cols, data = read_table(run.timeseries)
    t = _column(cols, data, "t", run.timeseries)
    D = _column(cols, data, "D", run.timeseries)
    u = _column(cols, data, "u", run.timeseries)
    y = _column(cols, data, "y", run.timeseries)

    prof_cols: list[str] | None = None
    prof: np.ndarray | None = None
    if run.profiles is not None:
        prof_cols, prof = read_table(run.profiles)
        if prof_cols[0] != "a":
            raise RenderError(
                f"{run.profiles} has no leading 'a' column (columns: {', '.join(prof_cols)})"
            )

    fig, axes = plt.subplots(2, 2, figsize=(11.0, 7.5), dpi=dpi)
    fig.suptitle(f"run {run.name!r}", fontsize=12)
    ax_y, ax_D, ax_u, ax_f = axes[0, 0], axes[0, 1], axes[1, 0], axes[1, 1]

    ax_y.plot(t, y, color="#1f77b4", lw=1.8)
    if run.ystar is not None:
        ax_y.axhline(run.ystar, color=_GREY, ls="--", lw=1.2)
    ax_y.set_xlabel("t")
    ax_y.set_ylabel("output y")
    ax_y.grid(alpha=0.3)

    # machine-checked panel: keep pure red and pure black unique to the
    # dilution curve and the interval bound lines
    ax_D.plot(t, D, color=_RED, lw=2.0)
    if run.Dstar is not None:
        ax_D.axhline(run.Dstar, color=_GREY, ls="--", lw=1.2)
    has_bounds = run.D_min is not None and run.D_max is not None
    if has_bounds:
        ax_D.axhline(run.D_min, color=_BLACK, lw=1.8)
        ax_D.axhline(run.D_max, color=_BLACK, lw=1.8)
        margin = 0.08 * (run.D_max - run.D_min)
        ax_D.set_ylim(run.D_min - margin, run.D_max + margin)
    elif float(np.min(D)) < 0.0:
        # unconstrained laws may push the dilution negative; mark zero
        ax_D.axhline(0.0, color=_GREY, ls=":", lw=1.0)
    for spine in ax_D.spines.values():
        spine.set_color(_FRAME)
    ax_D.tick_params(colors=_FRAME)
    ax_D.set_xlabel("t")
    ax_D.set_ylabel("dilution D")
    ax_D.grid(alpha=0.3)

    ax_u.plot(t, u, color="#9467bd", lw=1.5)
    ax_u.axhline(0.0, color=_GREY, ls=":", lw=1.0)
    ax_u.set_xlabel("t")
    ax_u.set_ylabel("slew u")
    ax_u.grid(alpha=0.3)

    if prof is not None and prof_cols is not None:
        ages = prof[:, 0]
        snaps = prof_cols[1:]
        shades = plt.cm.viridis(np.linspace(0.05, 0.85, len(snaps)))
        for j, label in enumerate(snaps):
            ax_f.plot(ages, prof[:, j + 1], color=shades[j], lw=1.5, label=label)
        ax_f.legend(fontsize=8, frameon=False)
        ax_f.set_xlabel("age a")
        ax_f.set_ylabel("density f")
        ax_f.grid(alpha=0.3)
    else:
        ax_f.text(0.5, 0.5, "no profile snapshots", ha="center", va="center")
        ax_f.set_axis_off()

    fig.tight_layout(rect=(0, 0, 1, 0.96))
    # pixel geometry must be read from the final layout, before saving
    fig.canvas.draw()
    d_panel = _panel_rows(fig, ax_D)
    if has_bounds:
        d_panel["bound_rows"] = {
            "D_min": _data_row(fig, ax_D, run.D_min),
            "D_max": _data_row(fig, ax_D, run.D_max),
        }
    ylo, yhi = ax_D.get_ylim()
    if ylo < 0.0 < yhi:
        d_panel["zero_row"] = _data_row(fig, ax_D, 0.0)

    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"{run.name}.png")
    fig.savefig(out_path)
    width, height = fig.canvas.get_width_height()
    plt.close(fig)
    return {
        "out": out_path,
        "name": run.name,
        "timeseries": run.timeseries,
        "profiles": run.profiles,
        "image_size": [int(width), int(height)],
        "d_panel": d_panel,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="agechemo-render",
        description="Render simulator run artifacts (summary JSON or timeseries CSV) to PNG figures.",
    )
    parser.add_argument("sources", nargs="+", help="summary .json or timeseries .csv files")
    parser.add_argument("--out", default=".", help="output directory (default: current)")
    parser.add_argument("--dpi", type=int, default=110, help="figure resolution (default 110)")
    args = parser.parse_args(argv)

    status = 0
    for source in args.sources:
        try:
            info = render_run(load_run(source), args.out, dpi=args.dpi)
        except RenderError as err:
            print(f"error: {err}", file=sys.stderr)
            status = 1
            continue
        print(f"{info['name']}: wrote {info['out']}")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
