"""CSV tables and SVG line charts for sweep results.

The CSV is the source of truth: floats are written with ``repr`` so that
reading a table back reproduces the reports exactly.  Charts are derived
from the same rows and rendered deterministically (fixed SVG id salt, no
timestamp).
"""
from __future__ import annotations

import csv
import io
import os
from collections import OrderedDict

from .experiments import EvalReport, ReportPoint

COLUMNS = ("method", "x", "nmse_mean", "nmse_std", "n_seeds", "nmse_median", "n_excluded", "sweep_variable")
METRIC_NOTE = "NMSE on the L x N_F tap-coefficient matrix"
_LABELS = {"velocity_kmh": "user velocity (km/h)", "horizon": "prediction horizon (frames)"}


def csv_name(variable):
    return f"nmse_vs_{variable}.csv"


def report_csv(reports):
    """CSV text for reports that share one sweep variable."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in reports:
        for p in r.points:
            w.writerow([r.method, repr(p.x), repr(p.nmse_mean), repr(p.nmse_std), p.n_seeds,
                        repr(p.nmse_median), p.n_excluded, r.sweep_variable])
    return buf.getvalue()


def parse_report_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(COLUMNS) - set(rows[0]):
        raise ValueError(f"CSV lacks columns {sorted(set(COLUMNS) - set(rows[0]))}")
    grouped = OrderedDict()
    for row in rows:
        key = (row["method"], row["sweep_variable"])
        grouped.setdefault(key, []).append(ReportPoint(
            float(row["x"]), float(row["nmse_mean"]), float(row["nmse_std"]), int(row["n_seeds"]),
            float(row["nmse_median"]), int(row["n_excluded"])))
    return [EvalReport(m, v, pts) for (m, v), pts in grouped.items()]


def read_report_csv(path):
    with open(path, newline="") as fh:
        return parse_report_csv(fh.read())


def _group(reports):
    by_var = OrderedDict()
    for r in reports:
        by_var.setdefault(r.sweep_variable, []).append(r)
    return by_var


def render_chart(reports, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    variable = reports[0].sweep_variable
    with matplotlib.rc_context({"svg.hashsalt": "ddpredict", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for r in reports:
            ax.semilogy(r.xs(), [p.nmse_median for p in r.points], marker="o", label=r.method)
        ax.set_xlabel(_LABELS.get(variable, variable))
        ax.set_ylabel("NMSE (median over seeds)")
        ax.set_title(METRIC_NOTE, fontsize=9)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit_report(reports, out_dir, chart=True):
    """Write one CSV (and chart) per sweep variable; returns the written paths."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to emit")
    if any(not r.points for r in reports):
        raise ValueError("report with no points")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for variable, group in _group(reports).items():
        path = os.path.join(out_dir, csv_name(variable))
        with open(path, "w", newline="") as fh:
            fh.write(report_csv(group))
        written.append(path)
        if chart:
            svg = path[:-4] + ".svg"
            render_chart(group, svg)
            written.append(svg)
    return written


def chart_from_csv(csv_path, out_path=None):
    reports = read_report_csv(csv_path)
    if not reports:
        raise ValueError(f"{csv_path} holds no rows")
    out_path = out_path or os.path.splitext(csv_path)[0] + ".svg"
    written = []
    for variable, group in _group(reports).items():
        target = out_path if len(_group(reports)) == 1 else f"{os.path.splitext(out_path)[0]}_{variable}.svg"
        render_chart(group, target)
        written.append(target)
    return written
