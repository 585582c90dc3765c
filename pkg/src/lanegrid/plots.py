"""Self-contained SVG renderings of scenes and predictions (no plot deps)."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .scenario import Scenario


class _Canvas:
    def __init__(self, x0, y0, x1, y1, px=720):
        self.x0, self.y0, self.x1, self.y1 = x0, y0, x1, y1
        span = max(x1 - x0, y1 - y0, 1e-6)
        self.scale = px / span
        self.w = (x1 - x0) * self.scale
        self.h = (y1 - y0) * self.scale
        self.parts: list[str] = []

    def pt(self, p):
        # svg y grows downward
        return (
            (p[0] - self.x0) * self.scale,
            (self.y1 - p[1]) * self.scale,
        )

    def poly(self, pts, fill, stroke="none", opacity=1.0, width=1.0, close=True):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(self.pt, pts))
        tag = "polygon" if close else "polyline"
        self.parts.append(
            f'<{tag} points="{coords}" fill="{fill}" stroke="{stroke}" '
            f'stroke-width="{width}" opacity="{opacity:.3f}" />'
        )

    def line(self, pts, stroke, width=1.5, opacity=1.0, dash=None):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(self.pt, pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}" opacity="{opacity:.3f}"{extra} />'
        )

    def dot(self, p, r, fill, opacity=1.0):
        x, y = self.pt(p)
        self.parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" fill="{fill}" '
            f'opacity="{opacity:.3f}" />'
        )

    def cross(self, p, size, stroke, width=2.0):
        x, y = self.pt(p)
        s = size
        self.parts.append(
            f'<path d="M {x - s:.2f} {y - s:.2f} L {x + s:.2f} {y + s:.2f} '
            f'M {x - s:.2f} {y + s:.2f} L {x + s:.2f} {y - s:.2f}" '
            f'stroke="{stroke}" stroke-width="{width}" fill="none" />'
        )

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w:.0f}" '
            f'height="{self.h:.0f}" viewBox="0 0 {self.w:.2f} {self.h:.2f}">\n'
            f'<rect width="100%" height="100%" fill="white" />\n{body}\n</svg>\n'
        )


def render_scene(s: Scenario, prediction: Optional[dict] = None,
                 extent: float = 70.0) -> str:
    """Scene overlay: map, occupancy-relevant agents, heatmap and forecasts.

    prediction is the dict form of a PredictionSet (read_prediction output).
    """
    c = _Canvas(-extent, -extent, extent, extent)
    for poly in s.drivable_polygons:
        c.poly(poly, fill="#e8e8e8")
    for poly in s.obstacle_polygons:
        c.poly(poly, fill="#5a5a5a")
    for lane in s.lanes:
        c.line(lane.centerline, stroke="#b9b9c8", width=1.0)

    if prediction is not None:
        pos = np.asarray(prediction["heatmap"]["node_positions"])
        sc = np.asarray(prediction["heatmap"]["scores"])
        top = max(float(sc.max()), 1e-9)
        for p, v in zip(pos, sc):
            if v > 0.02 * top:
                c.dot(p, 2.2, fill="#7b2d8b", opacity=min(1.0, 0.15 + 0.85 * v / top))

    for tr in s.tracks:
        keep = ~tr.pad_flags()
        color = "#d62728" if tr.is_target else "#ff9a3c"
        c.line(tr.positions()[keep], stroke=color, width=2.0)
        if tr.is_target and tr.gt_future is not None:
            c.line(tr.gt_future, stroke="#d633c8", width=2.0)

    if prediction is not None:
        for traj in prediction["trajectories"]:
            c.line(np.asarray(traj), stroke="#1f9e46", width=1.6, opacity=0.9)
        for goal in prediction["goals"]:
            c.cross(goal, size=5.0, stroke="#1f9e46")
    return c.render()


def save_scene_svg(path: str, s: Scenario, prediction: Optional[dict] = None,
                   extent: float = 70.0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_scene(s, prediction, extent))
