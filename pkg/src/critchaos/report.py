"""Markdown summaries and self-rendered SVG line charts for a run directory.

Output depends only on the files in the directory, so re-running yields
identical bytes.
"""
from __future__ import annotations

import csv
import glob
import json
import math
import os
from collections import defaultdict

from .errors import ValidationError

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=170, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _series_from_csv(path):
    """Replicate means keyed by (family, parameter, q, set) -> [(value, mean)]."""
    acc = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if not row.get("value") or not row.get("raw"):
                continue
            k = (row["family"], row["parameter"], row["q"], row["set"])
            acc[(k, float(row["value"]))].append(float(row["raw"]))
    series = defaultdict(list)
    for (k, x), vals in acc.items():
        series[k].append((x, math.fsum(vals) / len(vals)))
    return {k: sorted(v) for k, v in series.items() if len(v) >= 2}


def _criteria_series(summary):
    pts = [(i + 1, abs(c["statistic"])) for i, c in enumerate(summary["criteria"])
           if isinstance(c["statistic"], (int, float))]
    return {("criteria", "index", "", ""): pts} if len(pts) >= 2 else {}


def _nice(v):
    return f"{v:.3g}"


def render_svg(title, series, log_x=True, log_y=True):
    """Line chart of several (x, y) series; log axes drop nonpositive points."""
    clean = {}
    for k, pts in series.items():
        keep = [(x, y) for x, y in pts if (x > 0 or not log_x) and (y > 0 or not log_y)]
        if len(keep) >= 2:
            clean[k] = keep
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}">',
             f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
             f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-family="sans-serif" '
             f'font-size="14">{_esc(title)}</text>']
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    lines.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>')
    if not clean:
        lines.append(f'<text x="{(x0 + x1) // 2}" y="{(y0 + y1) // 2}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">no plottable series</text>')
        lines.append("</svg>")
        return "\n".join(lines) + "\n"
    fx = math.log10 if log_x else (lambda v: v)
    fy = math.log10 if log_y else (lambda v: v)
    xs = [fx(x) for pts in clean.values() for x, _ in pts]
    ys = [fy(y) for pts in clean.values() for _, y in pts]
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = min(ys), max(ys)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0

    def px(v):
        return x0 + (fx(v) - xlo) / (xhi - xlo) * (x1 - x0)

    def py(v):
        return y0 - (fy(v) - ylo) / (yhi - ylo) * (y0 - y1)

    for frac in (0.0, 0.5, 1.0):
        xv, yv = xlo + frac * (xhi - xlo), ylo + frac * (yhi - ylo)
        xl = 10 ** xv if log_x else xv
        yl = 10 ** yv if log_y else yv
        xp = x0 + frac * (x1 - x0)
        yp = y0 - frac * (y0 - y1)
        lines.append(f'<text x="{xp:.1f}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{_nice(xl)}</text>')
        lines.append(f'<text x="{x0 - 6}" y="{yp + 3:.1f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{_nice(yl)}</text>')
    axis = ("log " if log_x else "") + "parameter", ("log " if log_y else "") + "mean"
    lines.append(f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" '
                 f'font-size="11">{axis[0]}</text>')
    for i, (k, pts) in enumerate(sorted(clean.items())):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        lines.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in pts:
            lines.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{color}"/>')
        label = " ".join(p for p in k if p)
        ly = y1 + 14 * (i + 1)
        lines.append(f'<text x="{x1 + 8}" y="{ly}" font-family="sans-serif" font-size="10" '
                     f'fill="{color}">{_esc(label[:28])}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_run(run_dir: str) -> list:
    """Write one SVG per experiment plus ``summary.md``; returns written paths."""
    if not os.path.isdir(run_dir):
        raise ValidationError(f"run directory not found: {run_dir}")
    verdicts = sorted(glob.glob(os.path.join(run_dir, "*_verdict.json")))
    if not verdicts:
        raise ValidationError(f"no experiment results in {run_dir}")
    written = []
    md = ["# Run summary", ""]
    for vpath in verdicts:
        with open(vpath) as fh:
            summary = json.load(fh)
        name = summary["experiment"]
        csv_path = os.path.join(run_dir, f"{name}.csv")
        series = _series_from_csv(csv_path) if os.path.exists(csv_path) else {}
        if not series:
            series = _criteria_series(summary)
        svg = render_svg(f"{name} ({summary['verdict']})", series)
        svg_path = os.path.join(run_dir, f"{name}.svg")
        with open(svg_path, "w") as fh:
            fh.write(svg)
        written.append(svg_path)
        md.append(f"## {name}: {summary['verdict']}")
        md.append("")
        md.append(f"replicates: {summary['replicates']}, manifest hash: `{summary['manifest_hash']}`")
        md.append("")
        md.append("| id | verdict | gated | statistic | target | se |")
        md.append("|---|---|---|---|---|---|")
        for c in summary["criteria"]:
            md.append(f"| {c['id']} | {c['verdict']} | {c['gated']} | {_cell(c['statistic'])} | "
                      f"{_cell(c['target'])} | {_cell(c['se'])} |")
        md.append("")
        md.append(f"![{name}]({name}.svg)")
        md.append("")
    md_path = os.path.join(run_dir, "summary.md")
    with open(md_path, "w") as fh:
        fh.write("\n".join(md))
    written.append(md_path)
    return written


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
