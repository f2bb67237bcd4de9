"""Text artifacts: records CSV, aggregate JSON, and dependency-free SVG
figures (line plots with confidence bands, heatmaps with a color bar).

All numeric output is printed with 9 significant digits so identical inputs
produce byte-identical artifacts, and emit -> parse -> emit is a fixed point.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregate import AggregateRecord, surface_matrix
from .errors import IncompleteGridError
from .grid import EvaluationRecord

CSV_HEADER = [
    "kind", "alpha1", "alpha2", "seed", "src_lang", "tgt_lang",
    "task", "eval_side", "metric", "value", "normalized",
]

# Fixed tick positions on mixing-coefficient axes.
AXIS_TICKS = (-0.5, 0.0, 0.5, 1.0, 1.5)

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

RAMP_LO = "#440154"
RAMP_HI = "#fde725"


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _round9(x: float) -> float:
    return float(_fmt(x))


def _escape(s: str) -> str:
    return (
        s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


# ---------------------------------------------------------------------------
# records CSV

def emit_records_csv(records: Sequence[EvaluationRecord]) -> str:
    """Render records as CSV, sorted by (kind, alpha1, alpha2, seed, eval_side)."""
    def key(r: EvaluationRecord):
        a2 = r.alpha2 if r.alpha2 is not None else -math.inf
        return (r.kind, r.alpha1, a2, r.seed, r.eval_side, r.pair, r.task, r.metric)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sorted(records, key=key):
        writer.writerow([
            r.kind,
            _fmt(r.alpha1),
            _fmt(r.alpha2) if r.alpha2 is not None else "",
            str(r.seed),
            r.pair[0],
            r.pair[1],
            r.task,
            r.eval_side,
            r.metric,
            _fmt(r.value),
            _fmt(r.normalized) if r.normalized is not None else "",
        ])
    return buf.getvalue()


def parse_records_csv(text: str) -> list[EvaluationRecord]:
    """Inverse of emit_records_csv."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"bad CSV header, expected {','.join(CSV_HEADER)}")
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"line {i}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        kind, a1, a2, seed, src, tgt, task, side, metric, value, norm = row
        records.append(
            EvaluationRecord(
                kind=kind,
                alpha1=float(a1),
                alpha2=float(a2) if a2 != "" else None,
                seed=int(seed),
                pair=(src, tgt),
                task=task,
                eval_side=side,
                metric=metric,
                value=float(value),
                normalized=float(norm) if norm != "" else None,
            )
        )
    return records


# ---------------------------------------------------------------------------
# aggregate JSON

def aggregates_to_doc(kind: str, scope: str, aggs: Sequence[AggregateRecord]) -> dict:
    """One serializable document for a (kind, scope) aggregate family."""
    points = []
    for a in aggs:
        points.append({
            "alpha1": _round9(a.alpha1),
            "alpha2": _round9(a.alpha2) if a.alpha2 is not None else None,
            "side": a.eval_side,
            "group": a.group,
            "n": a.n,
            "mean": _round9(a.mean_norm),
            "var": _round9(a.var_norm),
            "ci95": _round9(a.ci95_half_width),
        })
    return {"kind": kind, "scope": scope, "points": points}


def emit_aggregates_json(docs: Sequence[dict]) -> str:
    return json.dumps(list(docs), indent=2, sort_keys=True) + "\n"


def parse_aggregates_json(text: str) -> list[dict]:
    """Parse an aggregates file back into {"kind", "scope", "records"} entries."""
    docs = json.loads(text)
    if not isinstance(docs, list):
        raise ValueError("aggregates file must contain a JSON array")
    out = []
    for doc in docs:
        records = [
            AggregateRecord(
                kind=doc["kind"],
                alpha1=float(p["alpha1"]),
                alpha2=float(p["alpha2"]) if p["alpha2"] is not None else None,
                eval_side=p["side"],
                group=p["group"],
                n=int(p["n"]),
                mean_norm=float(p["mean"]),
                var_norm=float(p["var"]),
                ci95_half_width=float(p["ci95"]),
            )
            for p in doc["points"]
        ]
        out.append({"kind": doc["kind"], "scope": doc["scope"], "records": records})
    return out


# ---------------------------------------------------------------------------
# SVG line plot

@dataclass(frozen=True)
class LineSeries:
    label: str
    xs: tuple[float, ...]
    means: tuple[float, ...]
    ci_half_widths: tuple[float, ...]
    color_index: int = 0

    def __post_init__(self):
        if not (len(self.xs) == len(self.means) == len(self.ci_half_widths)):
            raise ValueError(f"series {self.label!r}: coordinate lists must align")
        if len(self.xs) == 0:
            raise ValueError(f"series {self.label!r} is empty")
        if any(self.xs[i] >= self.xs[i + 1] for i in range(len(self.xs) - 1)):
            raise ValueError(f"series {self.label!r}: x coordinates must be strictly ascending")


@dataclass(frozen=True)
class LinePlotSpec:
    title: str
    x_label: str
    y_label: str
    series: tuple[LineSeries, ...]

    def __post_init__(self):
        if len(self.series) == 0:
            raise ValueError("a line plot needs at least one series")


def emit_line_plot(spec: LinePlotSpec) -> str:
    """Standalone SVG: one class="series" polyline and one class="band"
    polygon (mean +/- ci95) per series, fixed ticks on the alpha axis."""
    width, height = 720, 480
    ml, mr, mt, mb = 70, 24, 46, 52
    pw, ph = width - ml - mr, height - mt - mb

    x_min = min(s.xs[0] for s in spec.series)
    x_max = max(s.xs[-1] for s in spec.series)
    if x_max == x_min:
        x_min, x_max = x_min - 0.5, x_max + 0.5
    lows = [m - c for s in spec.series for m, c in zip(s.means, s.ci_half_widths)]
    highs = [m + c for s in spec.series for m, c in zip(s.means, s.ci_half_widths)]
    y_min, y_max = min(lows), max(highs)
    if y_max == y_min:
        y_min, y_max = y_min - 0.5, y_max + 0.5
    pad = 0.05 * (y_max - y_min)
    y_min, y_max = y_min - pad, y_max + pad

    def x_px(v: float) -> float:
        return ml + (v - x_min) / (x_max - x_min) * pw

    def y_px(v: float) -> float:
        return mt + ph - (v - y_min) / (y_max - y_min) * ph

    def pt(x: float, y: float) -> str:
        return f"{x_px(x):.2f},{y_px(y):.2f}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{_escape(spec.title)}</text>',
    ]

    # CI bands underneath the curves.
    for s in spec.series:
        color = COLORS[s.color_index % len(COLORS)]
        upper = [pt(x, m + c) for x, m, c in zip(s.xs, s.means, s.ci_half_widths)]
        lower = [pt(x, m - c) for x, m, c in reversed(list(zip(s.xs, s.means, s.ci_half_widths)))]
        lines.append(
            f'<polygon class="band" points="{" ".join(upper + lower)}" '
            f'fill="{color}" fill-opacity="0.18" stroke="none"/>'
        )

    # Axes.
    x0, y0 = ml, mt + ph
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{ml + pw}" y2="{y0}" stroke="#333333"/>')
    lines.append(f'<line x1="{x0}" y1="{mt}" x2="{x0}" y2="{y0}" stroke="#333333"/>')
    for tick in AXIS_TICKS:
        if x_min - 1e-9 <= tick <= x_max + 1e-9:
            tx = x_px(tick)
            lines.append(f'<line x1="{tx:.2f}" y1="{y0}" x2="{tx:.2f}" y2="{y0 + 5}" stroke="#333333"/>')
            lines.append(
                f'<text x="{tx:.2f}" y="{y0 + 18}" text-anchor="middle" font-size="11" '
                f'font-family="sans-serif">{_fmt(tick)}</text>'
            )
    for tick in np.linspace(y_min, y_max, 5):
        ty = y_px(float(tick))
        lines.append(f'<line x1="{x0 - 5}" y1="{ty:.2f}" x2="{x0}" y2="{ty:.2f}" stroke="#333333"/>')
        lines.append(
            f'<text x="{x0 - 8}" y="{ty + 4:.2f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{float(tick):.3g}</text>'
        )
    lines.append(
        f'<text x="{ml + pw / 2:.0f}" y="{height - 14}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{_escape(spec.x_label)}</text>'
    )
    lines.append(
        f'<text x="18" y="{mt + ph / 2:.0f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 18 {mt + ph / 2:.0f})">'
        f"{_escape(spec.y_label)}</text>"
    )

    # Curves and legend.
    for s in spec.series:
        color = COLORS[s.color_index % len(COLORS)]
        pts = " ".join(pt(x, m) for x, m in zip(s.xs, s.means))
        lines.append(
            f'<polyline class="series" points="{pts}" fill="none" '
            f'stroke="{color}" stroke-width="1.8"/>'
        )
    for i, s in enumerate(spec.series):
        color = COLORS[s.color_index % len(COLORS)]
        ly = mt + 14 + 16 * i
        lx = ml + pw - 190
        lines.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        lines.append(
            f'<text x="{lx + 28}" y="{ly}" font-size="11" font-family="sans-serif">'
            f"{_escape(s.label)}</text>"
        )

    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# SVG heatmap

@dataclass(frozen=True)
class HeatmapSpec:
    title: str
    x_label: str
    y_label: str
    alpha1s: tuple[float, ...]  # x axis, ascending
    alpha2s: tuple[float, ...]  # y axis, ascending
    values: tuple[tuple[float, ...], ...]  # values[i][j] at (alpha1s[i], alpha2s[j])
    vmin: float | None = None
    vmax: float | None = None

    def __post_init__(self):
        if len(self.alpha1s) == 0 or len(self.alpha2s) == 0:
            raise IncompleteGridError("heatmap axes must be non-empty")
        if len(self.values) != len(self.alpha1s) or any(
            len(row) != len(self.alpha2s) for row in self.values
        ):
            raise IncompleteGridError(
                f"value grid must be {len(self.alpha1s)} x {len(self.alpha2s)}"
            )
        flat = [v for row in self.values for v in row]
        if not all(math.isfinite(v) for v in flat):
            raise ValueError("heatmap values must be finite")


def _ramp_color(t: float) -> str:
    """Linear two-color ramp; t=0 -> RAMP_LO, t=1 -> RAMP_HI."""
    t = min(1.0, max(0.0, t))
    lo = tuple(int(RAMP_LO[i : i + 2], 16) for i in (1, 3, 5))
    hi = tuple(int(RAMP_HI[i : i + 2], 16) for i in (1, 3, 5))
    rgb = tuple(round(a + t * (b - a)) for a, b in zip(lo, hi))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


_CORNER_MARKS = (((0.0, 0.0), "bilingual"), ((1.0, 0.0), "source"), ((0.0, 1.0), "target"))


def emit_heatmap(spec: HeatmapSpec) -> str:
    """Standalone SVG: one class="cell" rect per grid point, a gradient color
    bar, and corner annotations for the bilingual/source/target models."""
    n1, n2 = len(spec.alpha1s), len(spec.alpha2s)
    flat = [v for row in spec.values for v in row]
    vmin = spec.vmin if spec.vmin is not None else min(flat)
    vmax = spec.vmax if spec.vmax is not None else max(flat)
    if vmin == vmax:
        vmin, vmax = vmin - 0.5, vmax + 0.5
    if not (vmin < vmax):
        raise ValueError(f"need vmin < vmax, got {vmin} >= {vmax}")

    width, height = 640, 560
    ml, mr, mt, mb = 70, 110, 46, 56
    pw, ph = width - ml - mr, height - mt - mb
    cw, ch = pw / n1, ph / n2

    def cell_x(i: int) -> float:
        return ml + i * cw

    def cell_y(j: int) -> float:
        return mt + ph - (j + 1) * ch

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        "<defs>",
        '<linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">',
        f'<stop offset="0" stop-color="{RAMP_LO}"/>',
        f'<stop offset="1" stop-color="{RAMP_HI}"/>',
        "</linearGradient>",
        "</defs>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{_escape(spec.title)}</text>',
    ]

    for i in range(n1):
        for j in range(n2):
            t = (spec.values[i][j] - vmin) / (vmax - vmin)
            lines.append(
                f'<rect class="cell" x="{cell_x(i):.2f}" y="{cell_y(j):.2f}" '
                f'width="{cw + 0.01:.2f}" height="{ch + 0.01:.2f}" fill="{_ramp_color(t)}"/>'
            )

    # Axes and fixed ticks at matching cell centers.
    x0, y0 = ml, mt + ph
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{ml + pw}" y2="{y0}" stroke="#333333"/>')
    lines.append(f'<line x1="{x0}" y1="{mt}" x2="{x0}" y2="{y0}" stroke="#333333"/>')
    for tick in AXIS_TICKS:
        for i, a1 in enumerate(spec.alpha1s):
            if abs(a1 - tick) < 1e-9:
                tx = cell_x(i) + cw / 2
                lines.append(
                    f'<line x1="{tx:.2f}" y1="{y0}" x2="{tx:.2f}" y2="{y0 + 5}" stroke="#333333"/>'
                )
                lines.append(
                    f'<text x="{tx:.2f}" y="{y0 + 18}" text-anchor="middle" font-size="11" '
                    f'font-family="sans-serif">{_fmt(tick)}</text>'
                )
        for j, a2 in enumerate(spec.alpha2s):
            if abs(a2 - tick) < 1e-9:
                ty = cell_y(j) + ch / 2
                lines.append(
                    f'<line x1="{x0 - 5}" y1="{ty:.2f}" x2="{x0}" y2="{ty:.2f}" stroke="#333333"/>'
                )
                lines.append(
                    f'<text x="{x0 - 8}" y="{ty + 4:.2f}" text-anchor="end" font-size="11" '
                    f'font-family="sans-serif">{_fmt(tick)}</text>'
                )
    lines.append(
        f'<text x="{ml + pw / 2:.0f}" y="{height - 16}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{_escape(spec.x_label)}</text>'
    )
    lines.append(
        f'<text x="18" y="{mt + ph / 2:.0f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 18 {mt + ph / 2:.0f})">'
        f"{_escape(spec.y_label)}</text>"
    )

    # Corner annotations (only where the coordinate exists on the grid).
    for (a1, a2), label in _CORNER_MARKS:
        i = next((k for k, v in enumerate(spec.alpha1s) if abs(v - a1) < 1e-9), None)
        j = next((k for k, v in enumerate(spec.alpha2s) if abs(v - a2) < 1e-9), None)
        if i is None or j is None:
            continue
        cx, cy = cell_x(i) + cw / 2, cell_y(j) + ch / 2
        lines.append(
            f'<circle class="corner" cx="{cx:.2f}" cy="{cy:.2f}" r="3.5" '
            f'fill="none" stroke="#ff2222" stroke-width="1.5"/>'
        )
        lines.append(
            f'<text x="{cx + 6:.2f}" y="{cy - 6:.2f}" font-size="11" fill="#ff2222" '
            f'font-family="sans-serif">{_escape(label)}</text>'
        )

    # Color bar.
    bx, bw_, bh_ = ml + pw + 24, 18, ph * 0.8
    by = mt + (ph - bh_) / 2
    lines.append(
        f'<rect x="{bx:.2f}" y="{by:.2f}" width="{bw_}" height="{bh_:.2f}" '
        f'fill="url(#ramp)" stroke="#333333"/>'
    )
    lines.append(
        f'<text x="{bx + bw_ + 6:.2f}" y="{by + bh_:.2f}" font-size="11" '
        f'font-family="sans-serif">{vmin:.3g}</text>'
    )
    lines.append(
        f'<text x="{bx + bw_ + 6:.2f}" y="{by + 10:.2f}" font-size="11" '
        f'font-family="sans-serif">{vmax:.3g}</text>'
    )

    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# builders from aggregate records

def line_spec_from_aggregates(
    aggs: Sequence[AggregateRecord],
    title: str = "1D interpolation",
    x_label: str = "mixing coefficient",
    y_label: str = "normalized metric",
) -> LinePlotSpec:
    """One series per (group, eval side) out of 1D aggregate records."""
    by_series: dict[tuple[str, str], list[AggregateRecord]] = {}
    for a in aggs:
        if a.kind != "one_d":
            raise ValueError("line plots take one_d aggregates")
        by_series.setdefault((a.group, a.eval_side), []).append(a)
    series = []
    for idx, key in enumerate(sorted(by_series)):
        group, side = key
        rows = sorted(by_series[key], key=lambda a: a.alpha1)
        label = f"{side} ({group})" if group != "pooled" else side
        series.append(
            LineSeries(
                label=label,
                xs=tuple(a.alpha1 for a in rows),
                means=tuple(a.mean_norm for a in rows),
                ci_half_widths=tuple(a.ci95_half_width for a in rows),
                color_index=idx,
            )
        )
    return LinePlotSpec(title=title, x_label=x_label, y_label=y_label, series=tuple(series))


def heatmap_spec_from_aggregates(
    aggs: Sequence[AggregateRecord],
    eval_side: str,
    title: str = "2D interpolation surface",
    x_label: str = "alpha1 (toward source)",
    y_label: str = "alpha2 (toward target)",
) -> HeatmapSpec:
    """Heatmap of mean_norm for one eval side of 2D aggregate records."""
    subset = [a for a in aggs if a.eval_side == eval_side]
    if not subset:
        raise IncompleteGridError(f"no two_d aggregates with side {eval_side!r}")
    alpha1s, alpha2s, matrix = surface_matrix(subset)
    return HeatmapSpec(
        title=title,
        x_label=x_label,
        y_label=y_label,
        alpha1s=tuple(alpha1s),
        alpha2s=tuple(alpha2s),
        values=tuple(tuple(float(v) for v in row) for row in matrix),
    )
