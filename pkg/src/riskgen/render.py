"""Plain-text exports: heatmap SVG and CSV grids, and trace replay SVG."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from riskgen.metrics import Heatmap
from riskgen.sim import VehicleState

# a few viridis anchors, linearly interpolated
_VIRIDIS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)


def colour(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0) * (len(_VIRIDIS) - 1)
    i = min(int(t), len(_VIRIDIS) - 2)
    rgb = _VIRIDIS[i] + (t - i) * (_VIRIDIS[i + 1] - _VIRIDIS[i])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def write_grid_csv(field: Heatmap, path: str | Path) -> None:
    """1D: ``<block>,probability`` rows. 2D: one row per first-axis cell."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if field.probs.ndim == 1:
            w.writerow([field.blocks[0], "probability"])
            for c, p in zip(field.centers[0], field.probs):
                w.writerow([repr(float(c)), repr(float(p))])
        else:
            ci, cj = field.centers
            w.writerow([f"{field.blocks[0]}\\{field.blocks[1]}", *(repr(float(c)) for c in cj)])
            for c, row in zip(ci, field.probs):
                w.writerow([repr(float(c)), *(repr(float(p)) for p in row)])


def read_grid_csv(path: str | Path) -> np.ndarray:
    """Probability cells of a grid written by :func:`write_grid_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
    return body[:, 0] if rows[0][1] == "probability" else body


def _svg(width: float, height: float, parts: Sequence[str]) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif" font-size="12">\n'
        + "\n".join(parts) + "\n</svg>\n"
    )


def heatmap_svg(field: Heatmap, title: str = "") -> str:
    """Colour-mapped cells with physical axis labels."""
    left, top, plot_w, plot_h = 60.0, 30.0, 480.0, 320.0
    parts = [f'<rect width="100%" height="100%" fill="white"/>']
    peak = float(field.probs.max()) or 1.0
    e0 = field.edges[0]
    if field.probs.ndim == 1:
        cell = plot_w / len(field.probs)
        for i, p in enumerate(field.probs):
            h = plot_h * p / peak
            parts.append(
                f'<rect x="{left + i * cell:.2f}" y="{top + plot_h - h:.2f}" width="{cell:.2f}" '
                f'height="{h:.2f}" fill="{colour(p / peak)}"/>'
            )
        y_label = "probability"
        y_ticks = [(top + plot_h - plot_h * f, f"{f * peak:.3g}") for f in (0.0, 0.5, 1.0)]
    else:
        e1 = field.edges[1]
        nx, ny = field.probs.shape
        cw, ch = plot_w / nx, plot_h / ny
        for i in range(nx):
            for j in range(ny):
                parts.append(
                    f'<rect x="{left + i * cw:.2f}" y="{top + plot_h - (j + 1) * ch:.2f}" '
                    f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" '
                    f'fill="{colour(field.probs[i, j] / peak)}"/>'
                )
        y_label = f"{field.blocks[1]}"
        y_ticks = [
            (top + plot_h - plot_h * f, f"{e1[0] + f * (e1[-1] - e1[0]):.4g}") for f in (0.0, 0.5, 1.0)
        ]
    for f in (0.0, 0.5, 1.0):
        x = left + plot_w * f
        parts.append(f'<line x1="{x:.1f}" y1="{top + plot_h}" x2="{x:.1f}" y2="{top + plot_h + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{x:.1f}" y="{top + plot_h + 18}" text-anchor="middle">'
            f'{e0[0] + f * (e0[-1] - e0[0]):.4g}</text>'
        )
    for y, label in y_ticks:
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{label}</text>')
    parts.append(
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>'
    )
    parts.append(
        f'<text x="{left + plot_w / 2}" y="{top + plot_h + 36}" text-anchor="middle">{escape(field.blocks[0])}</text>'
    )
    parts.append(
        f'<text x="14" y="{top + plot_h / 2}" transform="rotate(-90 14 {top + plot_h / 2})" '
        f'text-anchor="middle">{escape(y_label)}</text>'
    )
    if title:
        parts.append(f'<text x="{left + plot_w / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    return _svg(left + plot_w + 20, top + plot_h + 50, parts)


def write_heatmap(field: Heatmap, svg_path: str | Path, csv_path: str | Path, title: str = "") -> None:
    Path(svg_path).write_text(heatmap_svg(field, title))
    write_grid_csv(field, csv_path)


def _box(state: VehicleState, dims: Sequence[float]) -> list[tuple[float, float]]:
    c, s = math.cos(state.heading), math.sin(state.heading)
    hl, hw = dims[0] / 2, dims[1] / 2
    return [
        (state.x + c * dx - s * dy, state.y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ]


def trace_svg(header: dict, trace: Sequence[tuple[VehicleState, VehicleState]], every: int = 10) -> str:
    """Top-down replay: route, both paths, and footprints every ``every`` steps."""
    route = np.asarray(header["route"], dtype=float)
    pts = [route] + [np.array([[e.x, e.y], [o.x, o.y]]) for e, o in trace]
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0) - 5.0, allp.max(axis=0) + 5.0
    scale = 600.0 / max(hi[0] - lo[0], hi[1] - lo[1])
    width, height = (hi - lo) * scale + 20

    def xy(x, y):
        # flip y so +y points up on screen
        return 10 + (x - lo[0]) * scale, 10 + (hi[1] - y) * scale

    def poly(points, **attrs):
        coords = " ".join("%.2f,%.2f" % xy(x, y) for x, y in points)
        extra = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        return f'<polyline points="{coords}" {extra}/>'

    parts = ['<rect width="100%" height="100%" fill="white"/>']
    parts.append(poly(route, fill="none", stroke="#999999", stroke_width=3, stroke_dasharray="6 4"))
    if trace:
        parts.append(poly([(e.x, e.y) for e, _ in trace], fill="none", stroke="#1f77b4", stroke_width=1.5))
        parts.append(poly([(o.x, o.y) for _, o in trace], fill="none", stroke="#d62728", stroke_width=1.5))
        frames = list(range(0, len(trace), max(1, every)))
        if frames[-1] != len(trace) - 1:
            frames.append(len(trace) - 1)
        for i in frames:
            ego, obs = trace[i]
            for st, dims, col in ((ego, header["ego_dims"], "#1f77b4"), (obs, header["obstacle_dims"], "#d62728")):
                box = _box(st, dims)
                parts.append(poly(box + box[:1], fill=col, fill_opacity=0.15, stroke=col))
    status = "collision" if header.get("collision") else "no collision"
    parts.append(
        f'<text x="12" y="22">{escape(header["graph"]["name"])}: {status}, '
        f'min separation {header["min_separation"]:.2f} m, {header["steps_executed"]} steps</text>'
    )
    return _svg(width, height + 20, parts)
