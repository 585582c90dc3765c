"""Synthetic scenario generation on parametric road templates.

Three map templates: a two-lane one-way straight road, a T-intersection
and a four-way intersection. Agents follow lane routes with a constant
acceleration whose speed is clamped to the spec range, so a degenerate
range (lo == hi) yields exact constant-speed motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSpec
from .scenario import (
    AgentTrack,
    Horizon,
    LaneFlags,
    LanePolyline,
    Scenario,
    validate_scenario,
)

TEMPLATES = ("straight", "t-intersection", "four-way")

LANE_WIDTH = 3.5
ARM_REACH = 70.0          # arm length from map center, meters
BOX_HALF = 6.0            # intersection half-size, meters
ARC_STEP = 2.0            # sampling step along turn arcs, meters
ACCEL_MAX = 0.8           # |a| bound for sampled longitudinal acceleration


@dataclass
class SynthSpec:
    template: str = "four-way"
    n_agents: int = 3                      # including the target
    speed_range: tuple[float, float] = (4.0, 9.0)
    n_obstacles: int = 0
    margin: float = 2.0                    # drivable margin beyond lane edges

    def check(self) -> None:
        if self.template not in TEMPLATES:
            raise InfeasibleSpec(f"unknown template '{self.template}'")
        if not 1 <= self.n_agents <= 8:
            raise InfeasibleSpec(f"n_agents={self.n_agents} outside [1, 8]")
        lo, hi = self.speed_range
        if not (0.0 < lo <= hi):
            raise InfeasibleSpec(f"invalid speed range {self.speed_range}")
        if self.n_obstacles < 0:
            raise InfeasibleSpec("n_obstacles must be >= 0")


# ---------------------------------------------------------------------------
# Map construction
# ---------------------------------------------------------------------------


def _rot90(pts: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate points CCW by 90 degrees x quarter_turns (exact, no trig)."""
    q = quarter_turns % 4
    x, y = pts[:, 0], pts[:, 1]
    if q == 0:
        return pts.copy()
    if q == 1:
        return np.column_stack([-y, x])
    if q == 2:
        return np.column_stack([-x, -y])
    return np.column_stack([y, -x])


def _arc(center, radius, a0, a1) -> np.ndarray:
    n = max(3, int(abs(a1 - a0) * radius / ARC_STEP) + 1)
    ang = np.linspace(a0, a1, n)
    return np.column_stack(
        [center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)]
    )


def _line(p0, p1, step=4.0) -> np.ndarray:
    n = max(2, int(math.dist(p0, p1) / step) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(p0) + t * (np.asarray(p1) - np.asarray(p0))


_ARM_QUARTER = {"W": 0, "S": 1, "E": 2, "N": 3}
_LEFT_OF = {"W": "N", "S": "W", "E": "S", "N": "E"}   # left-turn destination
_RIGHT_OF = {"W": "S", "S": "E", "E": "N", "N": "W"}
_ACROSS = {"W": "E", "S": "N", "E": "W", "N": "S"}


def _intersection_map(arms: list[str], signalized: bool) -> list[LanePolyline]:
    """Arms plus turn connectors; geometry built for W and rotated into place."""
    half = LANE_WIDTH / 2.0
    b = BOX_HALF
    lanes: list[LanePolyline] = []

    base_in = _line((-ARM_REACH, -half), (-b, -half))
    base_out = _line((-b, half), (-ARM_REACH, half))
    base_straight = _line((-b, -half), (b, -half), step=2.0)
    r_left = b + half
    base_left = _arc((-b, b), r_left, -math.pi / 2.0, 0.0)
    r_right = b - half
    base_right = _arc((-b, -b), r_right, math.pi / 2.0, 0.0)

    for arm in arms:
        q = _ARM_QUARTER[arm]
        lanes.append(
            LanePolyline(
                id=f"{arm}_in",
                centerline=_rot90(base_in, q),
                flags=LaneFlags(traffic_control=signalized),
            )
        )
        lanes.append(LanePolyline(id=f"{arm}_out", centerline=_rot90(base_out, q)))
        if _ACROSS[arm] in arms:
            lanes.append(
                LanePolyline(
                    id=f"{arm}_straight",
                    centerline=_rot90(base_straight, q),
                    flags=LaneFlags(is_intersection=True),
                )
            )
        if _LEFT_OF[arm] in arms:
            lanes.append(
                LanePolyline(
                    id=f"{arm}_left",
                    centerline=_rot90(base_left, q),
                    flags=LaneFlags(turn_left=True, is_intersection=True),
                )
            )
        if _RIGHT_OF[arm] in arms:
            lanes.append(
                LanePolyline(
                    id=f"{arm}_right",
                    centerline=_rot90(base_right, q),
                    flags=LaneFlags(turn_right=True, is_intersection=True),
                )
            )

    for arm in arms:
        for kind, dest in (
            ("straight", _ACROSS[arm]),
            ("left", _LEFT_OF[arm]),
            ("right", _RIGHT_OF[arm]),
        ):
            conn = f"{arm}_{kind}"
            if dest not in arms or all(ln.id != conn for ln in lanes):
                continue
            _lane(lanes, f"{arm}_in").successors.append(conn)
            _lane(lanes, conn).predecessors.append(f"{arm}_in")
            _lane(lanes, conn).successors.append(f"{dest}_out")
            _lane(lanes, f"{dest}_out").predecessors.append(conn)
    return lanes


def _lane(lanes: list[LanePolyline], lane_id: str) -> LanePolyline:
    for ln in lanes:
        if ln.id == lane_id:
            return ln
    raise KeyError(lane_id)


def _straight_map() -> list[LanePolyline]:
    half = LANE_WIDTH / 2.0
    right = LanePolyline(id="lane_r", centerline=_line((-ARM_REACH, -half), (ARM_REACH, -half)))
    left = LanePolyline(id="lane_l", centerline=_line((-ARM_REACH, half), (ARM_REACH, half)))
    right.left_neighbor.append("lane_l")
    left.right_neighbor.append("lane_r")
    return [right, left]


def _rect(x0, y0, x1, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def _drivable(template: str, arms: list[str], margin: float) -> list[np.ndarray]:
    road_half = LANE_WIDTH + margin
    if template == "straight":
        return [_rect(-ARM_REACH, -road_half, ARM_REACH, road_half)]
    polys = [_rect(-BOX_HALF - margin, -BOX_HALF - margin, BOX_HALF + margin, BOX_HALF + margin)]
    base = _rect(-ARM_REACH, -road_half, -BOX_HALF, road_half)
    for arm in arms:
        polys.append(_rot90(base, _ARM_QUARTER[arm]))
    return polys


def routes_for_template(lanes: list[LanePolyline]) -> list[list[str]]:
    """All maximal lane-id chains starting from lanes without predecessors."""
    by_id = {ln.id: ln for ln in lanes}
    roots = [ln.id for ln in lanes if not ln.predecessors]
    routes: list[list[str]] = []

    def walk(chain: list[str]) -> None:
        sucs = by_id[chain[-1]].successors
        if not sucs:
            routes.append(chain)
            return
        for nxt in sucs:
            walk(chain + [nxt])

    for root in sorted(roots):
        walk([root])
    return routes


# ---------------------------------------------------------------------------
# Motion along routes
# ---------------------------------------------------------------------------


class _Path:
    """Arc-length parameterized polyline with position/tangent lookup."""

    def __init__(self, pts: np.ndarray):
        self.pts = pts
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.total = float(self.cum[-1])

    def at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        s = min(max(s, 0.0), self.total)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.pts) - 2)
        seg = self.pts[i + 1] - self.pts[i]
        seg_len = math.hypot(seg[0], seg[1])
        frac = 0.0 if seg_len == 0.0 else (s - self.cum[i]) / seg_len
        pos = self.pts[i] + frac * seg
        tang = seg / seg_len if seg_len > 0 else np.array([1.0, 0.0])
        return pos, tang


def _route_path(lanes: list[LanePolyline], route: list[str]) -> _Path:
    by_id = {ln.id: ln for ln in lanes}
    pts = [by_id[route[0]].centerline]
    for lane_id in route[1:]:
        cl = by_id[lane_id].centerline
        # lane chains are built to share the joint point exactly
        pts.append(cl[1:] if np.allclose(cl[0], pts[-1][-1], atol=1e-6) else cl)
    return _Path(np.vstack(pts))


def _arc_positions(path: _Path, s0: float, v0: float, accel: float,
                   lo: float, hi: float, hz: Horizon) -> tuple[np.ndarray, np.ndarray]:
    """Arc positions for the T observed and H future steps (oldest first)."""
    # forward from t=0
    fwd = [s0]
    v = v0
    for _ in range(hz.H):
        v = min(max(v + accel * hz.dt, lo), hi)
        fwd.append(fwd[-1] + v * hz.dt)
    # backward from t=0
    bwd = [s0]
    v = v0
    for _ in range(hz.T - 1):
        v = min(max(v - accel * hz.dt, lo), hi)
        bwd.append(bwd[-1] - v * hz.dt)
    hist = np.array(bwd[::-1])
    fut = np.array(fwd[1:])
    return hist, fut


def _track_from_path(path: _Path, arcs: np.ndarray, hz: Horizon) -> np.ndarray:
    states = np.zeros((hz.T, 5))
    for t, s in enumerate(arcs):
        pos, tang = path.at(float(s))
        states[t, 0:2] = pos
        states[t, 2:4] = tang
    return states


def synth_scenario(spec: SynthSpec, seed: int) -> Scenario:
    """Deterministic scenario for (spec, seed); all invariants validated."""
    spec.check()
    rng = np.random.default_rng(seed)
    hz = Horizon()
    lo, hi = spec.speed_range

    if spec.template == "straight":
        lanes = _straight_map()
        arms: list[str] = []
    else:
        arms = ["W", "E", "S"] if spec.template == "t-intersection" else ["W", "E", "S", "N"]
        lanes = _intersection_map(arms, signalized=True)
    drivable = _drivable(spec.template, arms, spec.margin)

    routes = routes_for_template(lanes)
    paths = [_route_path(lanes, r) for r in routes]

    hist_need = hi * hz.T * hz.dt + 2.0
    fut_need = hi * hz.H * hz.dt + 2.0

    tracks: list[AgentTrack] = []
    for a in range(spec.n_agents):
        is_target = a == 0
        ri = int(rng.integers(0, len(routes)))
        path = paths[ri]
        v0 = float(rng.uniform(lo, hi))
        accel = float(rng.uniform(-ACCEL_MAX, ACCEL_MAX))
        s_lo, s_hi = hist_need, path.total - (fut_need if is_target else 0.5)
        if is_target and spec.template != "straight":
            # keep the target on the approach so several maneuvers remain open
            first_len = _Path(
                _lane(lanes, routes[ri][0]).centerline
            ).total
            s_hi = min(s_hi, first_len - 0.5)
        if s_hi <= s_lo:
            raise InfeasibleSpec(
                f"route too short for horizon: {path.total:.1f} m available"
            )
        s0 = float(rng.uniform(s_lo, s_hi))
        hist, fut = _arc_positions(path, s0, v0, accel, lo, hi, hz)
        states = _track_from_path(path, hist, hz)
        if not is_target and rng.random() < 0.3:
            n_pad = int(rng.integers(1, 6))
            states[:n_pad, 0:4] = states[n_pad, 0:4]
            states[:n_pad, 4] = 1.0
        gt_future = None
        if is_target:
            gt_future = np.array([path.at(float(s))[0] for s in fut])
        tracks.append(
            AgentTrack(
                id="target" if is_target else f"agent_{a:02d}",
                states=states,
                is_target=is_target,
                gt_future=gt_future,
            )
        )

    obstacles = _place_obstacles(spec, arms, rng)
    s = Scenario(
        tracks=tracks,
        lanes=lanes,
        drivable_polygons=drivable,
        obstacle_polygons=obstacles,
        horizon=hz,
    )
    validate_scenario(s)
    return s


def _place_obstacles(spec: SynthSpec, arms: list[str], rng: np.random.Generator) -> list[np.ndarray]:
    """Small squares on the drivable margin, clear of every lane corridor."""
    if spec.n_obstacles == 0:
        return []
    side = 1.2
    lat = LANE_WIDTH + spec.margin / 2.0   # strip between lane edge and boundary
    out = []
    for _ in range(spec.n_obstacles):
        if spec.template == "straight":
            quarter = 0
        else:
            quarter = _ARM_QUARTER[arms[int(rng.integers(0, len(arms)))]]
        along = float(rng.uniform(BOX_HALF + 6.0, ARM_REACH - 6.0))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        center = _rot90(np.array([[-along, sign * lat]]), quarter)[0]
        h = side / 2.0
        out.append(
            np.array(
                [
                    [center[0] - h, center[1] - h],
                    [center[0] + h, center[1] - h],
                    [center[0] + h, center[1] + h],
                    [center[0] - h, center[1] + h],
                ]
            )
        )
    return out
