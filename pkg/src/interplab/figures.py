"""Raster (PNG) versions of the report figures, rendered with matplotlib.

The SVG emitters in `report` stay the canonical byte-stable artifacts; these
PNGs are companions for quick viewing. Uses the Agg backend so rendering
works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .report import COLORS, HeatmapSpec, LinePlotSpec, _CORNER_MARKS


def render_line_png(spec: LinePlotSpec, path) -> None:
    fig, ax = plt.subplots(figsize=(7.2, 4.8), dpi=110)
    for s in spec.series:
        color = COLORS[s.color_index % len(COLORS)]
        xs = np.asarray(s.xs)
        means = np.asarray(s.means)
        cis = np.asarray(s.ci_half_widths)
        ax.plot(xs, means, color=color, label=s.label, linewidth=1.6)
        ax.fill_between(xs, means - cis, means + cis, color=color, alpha=0.18, linewidth=0)
    ax.set_title(spec.title)
    ax.set_xlabel(spec.x_label)
    ax.set_ylabel(spec.y_label)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_heatmap_png(spec: HeatmapSpec, path) -> None:
    values = np.asarray(spec.values, dtype=float)
    a1, a2 = np.asarray(spec.alpha1s), np.asarray(spec.alpha2s)
    fig, ax = plt.subplots(figsize=(6.4, 5.6), dpi=110)
    half1 = (a1[1] - a1[0]) / 2 if len(a1) > 1 else 0.5
    half2 = (a2[1] - a2[0]) / 2 if len(a2) > 1 else 0.5
    im = ax.imshow(
        values.T,
        origin="lower",
        aspect="auto",
        extent=(a1[0] - half1, a1[-1] + half1, a2[0] - half2, a2[-1] + half2),
        vmin=spec.vmin,
        vmax=spec.vmax,
        cmap="viridis",
    )
    for (x, y), label in _CORNER_MARKS:
        if a1[0] - half1 <= x <= a1[-1] + half1 and a2[0] - half2 <= y <= a2[-1] + half2:
            ax.plot([x], [y], marker="o", markersize=5, mfc="none", mec="red")
            ax.annotate(label, (x, y), textcoords="offset points", xytext=(6, 6),
                        color="red", fontsize=9)
    ax.set_title(spec.title)
    ax.set_xlabel(spec.x_label)
    ax.set_ylabel(spec.y_label)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
