"""Standalone SVG rendering of defrosting profiles."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path

from .protocols import DefrostingProfile, optimal_depth

WIDTH, HEIGHT = 480, 320
MARGIN = {"left": 60, "right": 20, "top": 30, "bottom": 50}


def _star_points(cx, cy, r_outer=9.0, r_inner=4.0):
    pts = []
    for i in range(10):
        r = r_outer if i % 2 == 0 else r_inner
        a = -math.pi / 2 + i * math.pi / 5
        pts.append(f"{cx + r * math.cos(a):.3f},{cy + r * math.sin(a):.3f}")
    return " ".join(pts)


def _fmt(v):
    return f"{v:.3f}"


def profile_svg(profile: DefrostingProfile, title: str = "") -> str:
    """SVG text: cut on x, mean accuracy on y, +-std whiskers, red star at the optimum."""
    if not profile.entries:
        raise ValueError("cannot plot an empty profile")
    cuts = profile.cuts
    lo_y = min(e.mean_acc - e.std_acc for e in profile.entries)
    hi_y = max(e.mean_acc + e.std_acc for e in profile.entries)
    pad = max(0.02, 0.1 * (hi_y - lo_y))
    lo_y, hi_y = max(0.0, lo_y - pad), min(1.0, hi_y + pad)
    if hi_y <= lo_y:
        lo_y, hi_y = max(0.0, lo_y - 0.05), min(1.0, hi_y + 0.05)
    lo_x, hi_x = min(cuts), max(cuts)
    if hi_x == lo_x:
        lo_x, hi_x = lo_x - 1, hi_x + 1

    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(k):
        return x0 + (k - lo_x) / (hi_x - lo_x) * (x1 - x0)

    def sy(a):
        return y0 - (a - lo_y) / (hi_y - lo_y) * (y0 - y1)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(WIDTH), height=str(HEIGHT),
                     viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(WIDTH), height=str(HEIGHT), fill="white")
    if title:
        t = ET.SubElement(svg, "text", x=str(WIDTH / 2), y="18", **{"text-anchor": "middle", "font-size": "13"})
        t.text = title

    axes = ET.SubElement(svg, "g", stroke="black", **{"stroke-width": "1"})
    ET.SubElement(axes, "line", x1=_fmt(x0), y1=_fmt(y0), x2=_fmt(x1), y2=_fmt(y0))
    ET.SubElement(axes, "line", x1=_fmt(x0), y1=_fmt(y0), x2=_fmt(x0), y2=_fmt(y1))
    labels = ET.SubElement(svg, "g", **{"font-size": "11", "font-family": "sans-serif"})
    for k in cuts:
        tick = ET.SubElement(labels, "text", x=_fmt(sx(k)), y=_fmt(y0 + 16), **{"text-anchor": "middle"})
        tick.text = str(k)
    for i in range(5):
        a = lo_y + i * (hi_y - lo_y) / 4
        tick = ET.SubElement(labels, "text", x=_fmt(x0 - 6), y=_fmt(sy(a) + 4), **{"text-anchor": "end"})
        tick.text = f"{a:.2f}"
    xl = ET.SubElement(labels, "text", x=_fmt((x0 + x1) / 2), y=str(HEIGHT - 12), **{"text-anchor": "middle"})
    xl.text = "frozen layers k"
    yl = ET.SubElement(labels, "text", x="14", y=_fmt((y0 + y1) / 2), transform=f"rotate(-90 14 {(y0 + y1) / 2:.3f})",
                       **{"text-anchor": "middle"})
    yl.text = "test accuracy"

    if len(profile.entries) > 1:
        pts = " ".join(f"{_fmt(sx(e.cut))},{_fmt(sy(e.mean_acc))}" for e in profile.entries)
        ET.SubElement(svg, "polyline", points=pts, fill="none", stroke="#1f4e9c", **{"stroke-width": "1.5"})

    marks = ET.SubElement(svg, "g", id="points")
    for e in profile.entries:
        x = sx(e.cut)
        ET.SubElement(marks, "line", x1=_fmt(x), x2=_fmt(x), y1=_fmt(sy(e.mean_acc - e.std_acc)),
                      y2=_fmt(sy(e.mean_acc + e.std_acc)), stroke="#1f4e9c", **{"class": "whisker"})
        ET.SubElement(marks, "circle", cx=_fmt(x), cy=_fmt(sy(e.mean_acc)), r="3.5", fill="#1f4e9c",
                      **{"data-cut": str(e.cut)})

    best = profile.entry(optimal_depth(profile))
    ET.SubElement(svg, "polygon", id="optimum", points=_star_points(sx(best.cut), sy(best.mean_acc)), fill="red",
                  **{"data-cut": str(best.cut), "data-x": _fmt(sx(best.cut))})
    return ET.tostring(svg, encoding="unicode", xml_declaration=False)


def emit_profile_svg(profile: DefrostingProfile, path, title: str = "") -> Path:
    path = Path(path)
    path.write_text('<?xml version="1.0" encoding="UTF-8"?>\n' + profile_svg(profile, title) + "\n")
    return path
