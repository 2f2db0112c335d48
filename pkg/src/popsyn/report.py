"""Grid and interval tables, plot series files.

All numbers are formatted straight from an ``ExperimentReport``; nothing is
recomputed here.
"""
from __future__ import annotations

import csv
import io
import re
from pathlib import Path

from popsyn.errors import IncompleteReport
from popsyn.eval_stats import METRICS

MODEL_LABELS = {"gan": "GAN", "vae": "VAE"}


def fmt4(x):
    return f"{x:.4f}"


def fraction_label(f):
    return f"{f * 100:g}%"


def fraction_value(f):
    return f"{f:g}"


def safe_name(s):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(s))


def _check(report):
    for d in report.datasets:
        for m in report.models:
            for f in report.fractions:
                if (d, m, f) not in report.cells:
                    raise IncompleteReport(f"missing grid cell {(d, m, f)}")
            for metric in METRICS:
                if (d, m, metric) not in report.intervals:
                    raise IncompleteReport(f"missing interval {(d, m, metric)}")


def grid_rows(report, dataset):
    """Header plus one row per fraction; columns are model x metric."""
    header = ["train_data"] + [f"{m}_{metric}" for m in report.models for metric in METRICS]
    rows = [header]
    for f in report.fractions:
        row = [fraction_label(f)]
        for m in report.models:
            cell = report.cells[(dataset, m, f)]
            row.extend(fmt4(cell.get(metric)) for metric in METRICS)
        rows.append(row)
    return rows


def ci_rows(report, dataset):
    """Header plus one row per metric x model with mean, lower, upper."""
    rows = [["metric", "model", "mean", "lower", "upper"]]
    for metric in METRICS:
        for m in report.models:
            ci = report.intervals[(dataset, m, metric)]
            rows.append([metric, m, fmt4(ci.mean), fmt4(ci.lower), fmt4(ci.upper)])
    return rows


def render_csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\r\n").writerows(rows)
    return buf.getvalue()


def parse_csv(text):
    return [row for row in csv.reader(io.StringIO(text, newline=""))]


def render_markdown(rows, title=None):
    header, body = rows[0], rows[1:]
    lines = []
    if title:
        lines += [f"### {title}", ""]
    lines.append("| " + " | ".join(_md_header(h) for h in header) + " |")
    lines.append("|" + "|".join("---" for _ in header) + "|")
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def _md_header(h):
    if h == "train_data":
        return "Train data"
    if "_" in h and h.split("_", 1)[0] in MODEL_LABELS:
        m, metric = h.split("_", 1)
        return f"{MODEL_LABELS[m]} {metric.upper()}"
    return h.capitalize()


def emit_grid_report(report, formats, outdir):
    """Write ``grid_<dataset>`` and ``ci_<dataset>`` tables; returns the paths."""
    _check(report)
    if isinstance(formats, str):
        formats = (formats,)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for d in report.datasets:
        tables = {
            f"grid_{safe_name(d)}": (grid_rows(report, d), f"{d}: errors by training fraction"),
            f"ci_{safe_name(d)}": (ci_rows(report, d),
                                   f"{d}: {report.level * 100:g}% confidence interval for the mean"),
        }
        for stem, (rows, title) in tables.items():
            for fmt in formats:
                if fmt == "csv":
                    p = outdir / f"{stem}.csv"
                    p.write_text(render_csv(rows), newline="")
                elif fmt == "markdown":
                    p = outdir / f"{stem}.md"
                    p.write_text(render_markdown(rows, title))
                else:
                    raise ValueError(f"unknown report format {fmt!r}")
                paths.append(p)
    return paths


def emit_plot_data(report, outdir):
    """One two-column series ``fraction value`` per dataset x model x metric."""
    _check(report)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for d in report.datasets:
        for m in report.models:
            for metric in METRICS:
                lines = [f"# fraction {metric}"]
                for f in sorted(report.fractions):
                    lines.append(f"{fraction_value(f)} {fmt4(report.cells[(d, m, f)].get(metric))}")
                p = outdir / f"{safe_name(d)}_{m}_{metric}.txt"
                p.write_text("\n".join(lines) + "\n")
                paths.append(p)
    return paths
