"""Minimal SVG rendering of a binscatter: dots, band polygon and center line."""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from .estimator import predict_level
from .partition import assign_bins

WIDTH, HEIGHT, MARGIN = 640, 480, 48


def _fmt(v: float) -> str:
    return repr(float(v))


def _points(xs, ys) -> str:
    return " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(xs, ys))


def render_svg(dots_x, dots_y, band=None, center=None, title: str = "") -> str:
    """SVG text. ``band`` is ``(grid, lower, upper)`` and ``center`` is ``(grid, values)``.

    The band polygon and center line are drawn in data coordinates inside a
    transformed group, so their point lists carry the exact band values.
    """
    dots_x = np.asarray(dots_x, dtype=float)
    dots_y = np.asarray(dots_y, dtype=float)
    xs, ys = [dots_x], [dots_y]
    if band is not None:
        xs.append(band[0])
        ys.extend([band[1], band[2]])
    if center is not None:
        xs.append(center[0])
        ys.append(center[1])
    allx = np.concatenate([np.ravel(a) for a in xs])
    ally = np.concatenate([np.ravel(a) for a in ys])
    allx, ally = allx[np.isfinite(allx)], ally[np.isfinite(ally)]
    x0, x1 = (allx.min(), allx.max()) if allx.size else (0.0, 1.0)
    y0, y1 = (ally.min(), ally.max()) if ally.size else (0.0, 1.0)
    if not x1 > x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if not y1 > y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = (WIDTH - 2 * MARGIN) / (x1 - x0)
    sy = (HEIGHT - 2 * MARGIN) / (y1 - y0)

    svg = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": str(WIDTH), "height": str(HEIGHT),
        "viewBox": f"0 0 {WIDTH} {HEIGHT}",
    })
    if title:
        ET.SubElement(svg, "title").text = title
    ET.SubElement(svg, "rect", {"width": str(WIDTH), "height": str(HEIGHT), "fill": "white"})
    transform = (
        f"translate({MARGIN},{HEIGHT - MARGIN}) scale({_fmt(sx)},{_fmt(-sy)}) "
        f"translate({_fmt(-x0)},{_fmt(-y0)})"
    )
    data_g = ET.SubElement(svg, "g", {"id": "data", "transform": transform})
    if band is not None:
        g, lo, up = (np.asarray(a, dtype=float) for a in band)
        px = np.concatenate((g, g[::-1]))
        py = np.concatenate((up, lo[::-1]))
        ET.SubElement(data_g, "polygon", {
            "id": "band", "points": _points(px, py), "fill": "#9ecae1", "fill-opacity": "0.5",
            "stroke": "#3182bd", "stroke-width": "1", "vector-effect": "non-scaling-stroke",
        })
    if center is not None:
        ET.SubElement(data_g, "polyline", {
            "id": "center", "points": _points(center[0], center[1]), "fill": "none",
            "stroke": "#08519c", "stroke-width": "1.5", "vector-effect": "non-scaling-stroke",
        })
    dots_g = ET.SubElement(svg, "g", {"id": "dots", "fill": "#de2d26"})
    for a, b in zip(dots_x, dots_y):
        if np.isfinite(a) and np.isfinite(b):
            ET.SubElement(dots_g, "circle", {
                "cx": _fmt(MARGIN + (a - x0) * sx),
                "cy": _fmt(HEIGHT - MARGIN - (b - y0) * sy), "r": "3",
            })
    axes = ET.SubElement(svg, "g", {"id": "axes", "stroke": "black", "font-size": "11"})
    ET.SubElement(axes, "line", {"x1": str(MARGIN), "y1": str(HEIGHT - MARGIN),
                                 "x2": str(WIDTH - MARGIN), "y2": str(HEIGHT - MARGIN)})
    ET.SubElement(axes, "line", {"x1": str(MARGIN), "y1": str(MARGIN),
                                 "x2": str(MARGIN), "y2": str(HEIGHT - MARGIN)})
    for text, x, y, anchor in (
        (f"{x0:.4g}", MARGIN, HEIGHT - MARGIN + 16, "start"),
        (f"{x1:.4g}", WIDTH - MARGIN, HEIGHT - MARGIN + 16, "end"),
        (f"{y0:.4g}", MARGIN - 4, HEIGHT - MARGIN, "end"),
        (f"{y1:.4g}", MARGIN - 4, MARGIN + 4, "end"),
    ):
        ET.SubElement(axes, "text", {"x": str(x), "y": str(y), "text-anchor": anchor,
                                     "stroke": "none"}).text = text
    return ET.tostring(svg, encoding="unicode", xml_declaration=False) + "\n"


def bin_dots(fit_res):
    """Within-bin mean of x and the fitted level there, one dot per bin."""
    part = fit_res.basis.partition
    x = fit_res.data.x
    idx = assign_bins(part, x)
    sums = np.bincount(idx, weights=x, minlength=part.nbins + 1)[1:]
    cnts = np.bincount(idx, minlength=part.nbins + 1)[1:]
    mx = sums / np.maximum(cnts, 1)
    return mx, np.asarray(predict_level(fit_res, mx), dtype=float)
