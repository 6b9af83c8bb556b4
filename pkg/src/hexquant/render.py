"""Deterministic SVG 1.1 output for tessellations and particle snapshots."""
from __future__ import annotations

import numpy as np

from .discrete import VoronoiDiagram
from .lattice import to_cartesian

# a small perceptually ordered ramp (dark blue -> teal -> yellow)
_RAMP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=float)


def color(t: float) -> str:
    t = float(np.clip(t, 0.0, 1.0)) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    c = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def _domain_outline():
    return to_cartesian(np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]))


def diagram_svg(diagram: VoronoiDiagram, energies=None, out=None, size: int = 640, title: str | None = None,
                show_sites: bool = True) -> str:
    """Render cells (coloured by energy) inside the fundamental domain.

    Cells are drawn unwrapped around their sites, so they overhang the
    domain outline where they straddle it; the picture is clipped to a
    margin around Pi.
    """
    e = np.asarray(diagram.energies() if energies is None else energies, dtype=float)
    lo, hi = float(e.min()), float(e.max())
    span = hi - lo if hi > lo else 1.0
    outline = _domain_outline()
    xmin, ymin = outline.min(axis=0) - 0.1
    xmax, ymax = outline.max(axis=0) + 0.1
    scale = size / max(xmax - xmin, ymax - ymin)
    w = (xmax - xmin) * scale
    h = (ymax - ymin) * scale
    bar = 60

    def pt(p):
        return f"{_fmt((p[0] - xmin) * scale)},{_fmt((ymax - p[1]) * scale)}"

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_fmt(w + bar)}" height="{_fmt(h)}" '
        f'viewBox="0 0 {_fmt(w + bar)} {_fmt(h)}">',
    ]
    if title:
        lines.append(f"<title>{title}</title>")
    lines.append(f'<clipPath id="frame"><rect x="0" y="0" width="{_fmt(w)}" height="{_fmt(h)}"/></clipPath>')
    lines.append('<g clip-path="url(#frame)" stroke="#222" stroke-width="0.5">')
    for cell, val in zip(diagram.cells, e):
        poly = " ".join(pt(p) for p in cell.vertices)
        lines.append(f'<polygon points="{poly}" fill="{color((val - lo) / span)}"/>')
    lines.append("</g>")
    lines.append(f'<polygon points="{" ".join(pt(p) for p in outline)}" fill="none" stroke="#c00" stroke-width="1.5"/>')
    if show_sites:
        r = max(0.8, 0.15 * scale / np.sqrt(len(diagram)))
        lines.append('<g fill="#000">')
        for s in diagram.sites:
            x, y = pt(s).split(",")
            lines.append(f'<circle cx="{x}" cy="{y}" r="{_fmt(r)}"/>')
        lines.append("</g>")
    # colour bar
    steps = 32
    bh = h * 0.8 / steps
    for k in range(steps):
        t = 1 - k / (steps - 1)
        lines.append(f'<rect x="{_fmt(w + 15)}" y="{_fmt(0.1 * h + k * bh)}" width="15" '
                     f'height="{_fmt(bh + 0.5)}" fill="{color(t)}"/>')
    lines.append(f'<text x="{_fmt(w + 5)}" y="{_fmt(0.1 * h - 5)}" font-size="9">{hi:.3e}</text>')
    lines.append(f'<text x="{_fmt(w + 5)}" y="{_fmt(0.9 * h + 12)}" font-size="9">{lo:.3e}</text>')
    lines.append("</svg>")
    text = "\n".join(lines) + "\n"
    if out is not None:
        with open(out, "w") as fh:
            fh.write(text)
    return text


__all__ = ["color", "diagram_svg"]
