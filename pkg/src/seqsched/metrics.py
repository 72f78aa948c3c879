"""Cross-run reporting: baseline comparisons, CSV emitters, SVG sweep charts."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from .simulator import RunReport


class MetricsError(ValueError):
    """Invalid comparison or emission input."""


@dataclass(frozen=True)
class ComparisonRow:
    """One run summarized against a named baseline.

    Sample throughput is the headline number; token_throughput is a
    diagnostic secondary column.
    """

    label: str
    throughput: float
    improvement_pct: float
    avg_len: float
    redundancy: float
    failure_rate: float
    token_throughput: float


@dataclass(frozen=True)
class SweepPoint:
    """One sweep cell: the swept value and the resulting throughput."""

    x: float
    throughput: float
    redundancy: float
    failure_rate: float


def compare(reports: Sequence[RunReport], baseline_label: str) -> list[ComparisonRow]:
    """Rows in input order; improvement is percent over the named baseline."""
    baseline = next((r for r in reports if r.label == baseline_label), None)
    if baseline is None:
        raise MetricsError(f"baseline {baseline_label!r} not among reports")
    return [
        ComparisonRow(
            label=r.label,
            throughput=r.throughput,
            improvement_pct=(r.throughput / baseline.throughput - 1.0) * 100.0,
            avg_len=r.avg_batch_len,
            redundancy=r.redundancy,
            failure_rate=r.failure_rate,
            token_throughput=r.token_throughput,
        )
        for r in reports
    ]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def emit_csv(rows: Sequence[ComparisonRow] | Sequence[SweepPoint], path: str | Path) -> None:
    """Write comparison rows or sweep points with a field-name header row."""
    if not rows:
        raise MetricsError("nothing to emit")
    kind = type(rows[0])
    if any(type(r) is not kind for r in rows):
        raise MetricsError("mixed row types")
    names = [f.name for f in fields(kind)]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([_fmt(getattr(row, n)) for n in names])


def read_comparison_csv(path: str | Path) -> list[ComparisonRow]:
    """Parse emit_csv output back into rows (floats at emitted precision)."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            ComparisonRow(
                label=rec["label"],
                throughput=float(rec["throughput"]),
                improvement_pct=float(rec["improvement_pct"]),
                avg_len=float(rec["avg_len"]),
                redundancy=float(rec["redundancy"]),
                failure_rate=float(rec["failure_rate"]),
                token_throughput=float(rec["token_throughput"]),
            )
            for rec in reader
        ]


_SVG_W, _SVG_H = 640, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 24, 28, 48


def emit_svg(
    points: Sequence[SweepPoint],
    path: str | Path,
    *,
    x_label: str = "value",
    y_label: str = "throughput (samples/s)",
    title: str = "",
) -> None:
    """Render a standalone SVG line chart of throughput over the swept axis."""
    if not points:
        raise MetricsError("nothing to plot")
    xs = [p.x for p in points]
    ys = [p.throughput for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = 0.0, max(ys) * 1.08
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0
    plot_w = _SVG_W - _MARGIN_L - _MARGIN_R
    plot_h = _SVG_H - _MARGIN_T - _MARGIN_B

    def px(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / x_span * plot_w

    def py(y: float) -> float:
        return _MARGIN_T + plot_h - (y - y_lo) / y_span * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_SVG_W / 2:.1f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>'
        )
    axis_y = _MARGIN_T + plot_h
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{axis_y}" x2="{_SVG_W - _MARGIN_R}" '
        f'y2="{axis_y}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" '
        f'y2="{axis_y}" stroke="black"/>'
    )
    for i in range(5):
        y_val = y_lo + y_span * i / 4
        y_px = py(y_val)
        parts.append(
            f'<line x1="{_MARGIN_L - 4}" y1="{y_px:.1f}" x2="{_MARGIN_L}" '
            f'y2="{y_px:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{y_px + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{y_val:.3g}</text>'
        )
    for p in points:
        x_px = px(p.x)
        parts.append(
            f'<line x1="{x_px:.1f}" y1="{axis_y}" x2="{x_px:.1f}" '
            f'y2="{axis_y + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x_px:.1f}" y="{axis_y + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{p.x:g}</text>'
        )
    polyline = " ".join(f"{px(p.x):.1f},{py(p.throughput):.1f}" for p in points)
    parts.append(
        f'<polyline points="{polyline}" fill="none" stroke="#1f77b4" stroke-width="2"/>'
    )
    for p in points:
        parts.append(
            f'<circle cx="{px(p.x):.1f}" cy="{py(p.throughput):.1f}" r="3" fill="#1f77b4"/>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{_SVG_H - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.1f})">{y_label}</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
