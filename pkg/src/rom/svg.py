"""Side-by-side SVG overlays of predicted vs. ground-truth matches.

Legend: green line = correct predicted match, red = wrong predicted
match, yellow dashed = ground-truth match that was missed.
"""

from __future__ import annotations

PANEL_W = 480
PANEL_H = 360
GAP = 40


def _box_svg(bbox, ox, color):
    x = ox + bbox[0] * PANEL_W
    y = bbox[1] * PANEL_H
    w = (bbox[2] - bbox[0]) * PANEL_W
    h = (bbox[3] - bbox[1]) * PANEL_H
    return (f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" height="{h:.1f}" '
            f'fill="none" stroke="{color}" stroke-width="1.5"/>')


def _center(bbox, ox):
    return (ox + (bbox[0] + bbox[2]) / 2 * PANEL_W,
            (bbox[1] + bbox[3]) / 2 * PANEL_H)


def pair_overlay_svg(pair, predicted_matches) -> str:
    pred = set(map(tuple, predicted_matches))
    gt = set(map(tuple, pair.gt_matches))
    ox2 = PANEL_W + GAP
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{2 * PANEL_W + GAP}" height="{PANEL_H}">',
        f'<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" '
        f'fill="#f4f4f4" stroke="#999"/>',
        f'<rect x="{ox2}" y="0" width="{PANEL_W}" height="{PANEL_H}" '
        f'fill="#f4f4f4" stroke="#999"/>',
    ]
    for d in pair.det1:
        parts.append(_box_svg(d.bbox, 0, "#555"))
    for d in pair.det2:
        parts.append(_box_svg(d.bbox, ox2, "#555"))

    def line(i, j, color, dashed=False):
        x1, y1 = _center(pair.det1[i].bbox, 0)
        x2, y2 = _center(pair.det2[j].bbox, ox2)
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        parts.append(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" '
                     f'y2="{y2:.1f}" stroke="{color}" stroke-width="1.5"{dash}/>')

    for i, j in sorted(pred & gt):
        line(i, j, "#1a9e1a")
    for i, j in sorted(pred - gt):
        line(i, j, "#d42020")
    for i, j in sorted(gt - pred):
        line(i, j, "#d4b520", dashed=True)
    parts.append("</svg>")
    return "\n".join(parts)


def write_overlay(path, pair, predicted_matches) -> None:
    with open(path, "w") as fh:
        fh.write(pair_overlay_svg(pair, predicted_matches))
