"""Dependency-free SVG emission for loss curves and trajectory fans."""

from __future__ import annotations

import numpy as np

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"]


def _scale(values, lo, hi, size, margin):
    span = hi - lo if hi > lo else 1.0
    return margin + (np.asarray(values, dtype=float) - lo) / span * (size - 2 * margin)


def line_plot_svg(series: dict, path, title="", width=640, height=400,
                  x_label="", y_label=""):
    """Write named (x, y) series as SVG polylines with a shared frame."""
    margin = 50
    all_x = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    all_y = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {height / 2})">{y_label}</text>',
        f'<text x="{margin}" y="{height - margin + 16}" font-size="10">{x_lo:.3g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="end" '
        f'font-size="10">{x_hi:.3g}</text>',
        f'<text x="{margin - 4}" y="{height - margin}" text-anchor="end" font-size="10">{y_lo:.3g}</text>',
        f'<text x="{margin - 4}" y="{margin + 4}" text-anchor="end" font-size="10">{y_hi:.3g}</text>',
    ]
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        px = _scale(xs, x_lo, x_hi, width, margin)
        py = height - _scale(ys, y_lo, y_hi, height, margin)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        parts.append(f'<text x="{width - margin + 4}" y="{margin + 14 * i}" '
                     f'font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def trajectory_fan_svg(instance, samples, path, width=640, height=400):
    """Sampled answer trajectories per channel, observations overlaid."""
    times = np.array([q.t for q in instance.queries])
    channels = np.array([q.c for q in instance.queries])
    series = {}
    for c in sorted(set(channels)):
        sel = channels == c
        order = np.argsort(times[sel])
        for s in range(min(len(samples), 30)):
            series[f"c{c}/s{s}"] = (times[sel][order], samples[s][sel][order])
    obs_t = np.array([ob.t for ob in instance.observations])
    obs_v = np.array([ob.o for ob in instance.observations])
    series["observed"] = (obs_t, obs_v)
    labeled = {k: v for k, v in series.items() if "/s0" in k or k == "observed"}
    unlabeled = {k: v for k, v in series.items() if k not in labeled}
    line_plot_svg({**labeled, **unlabeled}, path,
                  title=f"sampled trajectories: {instance.series_id}",
                  x_label="time", y_label="value")
