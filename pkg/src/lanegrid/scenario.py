"""Scenario data model: agent tracks, vectorized map, frames and file IO.

A scenario is immutable after construction; every transform returns a new
one. Coordinates are meters. Track states run oldest to newest, so
states[-1] is the present (t = 0) and gt_future starts one step after it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateHeading, NoTarget, ParseError, SchemaVersionMismatch

SCHEMA_VERSION = 1


@dataclass
class Horizon:
    T: int = 20     # observed steps
    H: int = 30     # future steps
    dt: float = 0.1


@dataclass
class LaneFlags:
    turn_left: bool = False
    turn_right: bool = False
    traffic_control: bool = False
    is_intersection: bool = False

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.turn_left, self.turn_right, self.traffic_control, self.is_intersection],
            dtype=np.float64,
        )


@dataclass
class AgentTrack:
    """One agent: (T, 5) state rows [x, y, dx, dy, pad] plus optional future."""

    id: str
    states: np.ndarray
    is_target: bool = False
    gt_future: Optional[np.ndarray] = None  # (H, 2)

    def positions(self) -> np.ndarray:
        return self.states[:, 0:2]

    def tangents(self) -> np.ndarray:
        return self.states[:, 2:4]

    def pad_flags(self) -> np.ndarray:
        return self.states[:, 4] > 0.5


@dataclass
class LanePolyline:
    id: str
    centerline: np.ndarray  # (P, 2), P >= 2
    predecessors: list[str] = field(default_factory=list)
    successors: list[str] = field(default_factory=list)
    left_neighbor: list[str] = field(default_factory=list)
    right_neighbor: list[str] = field(default_factory=list)
    flags: LaneFlags = field(default_factory=LaneFlags)


@dataclass
class FrameTransform:
    """Rigid map world -> frame: p' = R(-heading) @ (p - origin)."""

    origin: np.ndarray   # (2,)
    cos_h: float
    sin_h: float

    @classmethod
    def identity(cls) -> "FrameTransform":
        return cls(origin=np.zeros(2), cos_h=1.0, sin_h=0.0)

    def rotation(self) -> np.ndarray:
        # R(-heading): rows are the target's forward/left axes in world frame
        return np.array([[self.cos_h, self.sin_h], [-self.sin_h, self.cos_h]])

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.origin) @ self.rotation().T

    def apply_dirs(self, dirs: np.ndarray) -> np.ndarray:
        return dirs @ self.rotation().T

    def invert_points(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation() + self.origin


@dataclass
class Scenario:
    tracks: list[AgentTrack]
    lanes: list[LanePolyline]
    drivable_polygons: list[np.ndarray]   # open rings (P, 2)
    obstacle_polygons: list[np.ndarray]
    horizon: Horizon = field(default_factory=Horizon)
    # Runtime metadata only (not serialized): world -> current frame.
    frame_transform: Optional[FrameTransform] = None

    def target_index(self) -> int:
        idx = [i for i, t in enumerate(self.tracks) if t.is_target]
        if len(idx) != 1:
            raise NoTarget(f"expected exactly one target track, found {len(idx)}")
        return idx[0]

    def target(self) -> AgentTrack:
        return self.tracks[self.target_index()]


def validate_scenario(s: Scenario) -> None:
    """Check every structural invariant; raise ParseError on the first hit."""
    hz = s.horizon
    n_targets = 0
    for tr in s.tracks:
        if tr.states.shape != (hz.T, 5):
            raise ParseError(
                f"track '{tr.id}': expected {hz.T} states of width 5, "
                f"got shape {tr.states.shape}"
            )
        if not np.all(np.isfinite(tr.states)):
            raise ParseError(f"track '{tr.id}': non-finite state entry")
        pad = tr.pad_flags()
        tang = tr.tangents()[~pad]
        if tang.size:
            norms = np.hypot(tang[:, 0], tang[:, 1])
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ParseError(f"track '{tr.id}': non-unit tangent on unpadded state")
        if tr.gt_future is not None:
            if tr.gt_future.shape != (hz.H, 2):
                raise ParseError(
                    f"track '{tr.id}': gt_future shape {tr.gt_future.shape}, "
                    f"expected ({hz.H}, 2)"
                )
            if not np.all(np.isfinite(tr.gt_future)):
                raise ParseError(f"track '{tr.id}': non-finite gt_future entry")
        n_targets += tr.is_target
    if n_targets != 1:
        raise ParseError(f"expected exactly one target track, found {n_targets}")

    lane_ids = {ln.id for ln in s.lanes}
    if len(lane_ids) != len(s.lanes):
        raise ParseError("duplicate lane ids")
    by_id = {ln.id: ln for ln in s.lanes}
    for ln in s.lanes:
        if ln.centerline.ndim != 2 or ln.centerline.shape[0] < 2 or ln.centerline.shape[1] != 2:
            raise ParseError(f"lane '{ln.id}': centerline needs >= 2 points")
        if not np.all(np.isfinite(ln.centerline)):
            raise ParseError(f"lane '{ln.id}': non-finite centerline")
        for rel in ("predecessors", "successors", "left_neighbor", "right_neighbor"):
            for ref in getattr(ln, rel):
                if ref not in lane_ids:
                    raise ParseError(f"lane '{ln.id}': {rel} reference '{ref}' unresolved")
        for suc in ln.successors:
            if ln.id not in by_id[suc].predecessors:
                raise ParseError(
                    f"lane '{ln.id}': successor '{suc}' lacks reciprocal predecessor"
                )
        for pre in ln.predecessors:
            if ln.id not in by_id[pre].successors:
                raise ParseError(
                    f"lane '{ln.id}': predecessor '{pre}' lacks reciprocal successor"
                )

    for name, polys in (
        ("drivable_polygons", s.drivable_polygons),
        ("obstacle_polygons", s.obstacle_polygons),
    ):
        for i, poly in enumerate(polys):
            if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
                raise ParseError(f"{name}[{i}]: polygon needs >= 3 vertices")
            if not np.all(np.isfinite(poly)):
                raise ParseError(f"{name}[{i}]: non-finite vertex")


# ---------------------------------------------------------------------------
# Frame operations
# ---------------------------------------------------------------------------


def _transform_scenario(s: Scenario, tf: FrameTransform) -> Scenario:
    tracks = []
    for tr in s.tracks:
        states = tr.states.copy()
        states[:, 0:2] = tf.apply_points(tr.states[:, 0:2])
        states[:, 2:4] = tf.apply_dirs(tr.states[:, 2:4])
        fut = None if tr.gt_future is None else tf.apply_points(tr.gt_future)
        tracks.append(replace(tr, states=states, gt_future=fut))
    lanes = [replace(ln, centerline=tf.apply_points(ln.centerline)) for ln in s.lanes]
    driv = [tf.apply_points(p) for p in s.drivable_polygons]
    obst = [tf.apply_points(p) for p in s.obstacle_polygons]
    return replace(
        s, tracks=tracks, lanes=lanes, drivable_polygons=driv, obstacle_polygons=obst
    )


def normalize_to_target(s: Scenario) -> Scenario:
    """Move to the target-centric frame: target at origin, heading along +x.

    The applied transform is kept on the result as frame_transform so
    predictions can be mapped back to the input frame.
    """
    tgt = s.target()
    if tgt.pad_flags()[-1]:
        raise DegenerateHeading("target state at t=0 is padded")
    p0 = tgt.positions()[-1]
    d0 = tgt.tangents()[-1]
    norm = math.hypot(d0[0], d0[1])
    if norm < 1e-9:
        raise DegenerateHeading("target tangent at t=0 has zero length")
    tf = FrameTransform(origin=p0.copy(), cos_h=d0[0] / norm, sin_h=d0[1] / norm)
    out = _transform_scenario(s, tf)
    out.frame_transform = tf
    return out


def rotate_scenario(s: Scenario, angle: float) -> Scenario:
    """Rotate every geometric field by angle (radians) about the origin."""
    tf = FrameTransform(origin=np.zeros(2), cos_h=math.cos(-angle), sin_h=math.sin(-angle))
    out = _transform_scenario(s, tf)
    out.frame_transform = s.frame_transform
    return out


def mirror_scenario(s: Scenario) -> Scenario:
    """Mirror every geometric field across the x-axis (involution)."""
    tracks = []
    for tr in s.tracks:
        states = tr.states.copy()
        states[:, 1] = -states[:, 1]
        states[:, 3] = -states[:, 3]
        fut = None
        if tr.gt_future is not None:
            fut = tr.gt_future.copy()
            fut[:, 1] = -fut[:, 1]
        tracks.append(replace(tr, states=states, gt_future=fut))

    def flip(pts: np.ndarray) -> np.ndarray:
        out = pts.copy()
        out[:, 1] = -out[:, 1]
        return out

    lanes = [replace(ln, centerline=flip(ln.centerline)) for ln in s.lanes]
    return replace(
        s,
        tracks=tracks,
        lanes=lanes,
        drivable_polygons=[flip(p) for p in s.drivable_polygons],
        obstacle_polygons=[flip(p) for p in s.obstacle_polygons],
    )


def augment(s: Scenario, seed: int) -> Scenario:
    """Training-time augmentation: random rotation, then a coin-flip mirror."""
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-math.pi, math.pi)
    do_mirror = rng.random() < 0.5
    out = rotate_scenario(s, angle)
    if do_mirror:
        out = mirror_scenario(out)
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _ring_closed(poly: np.ndarray) -> list:
    ring = np.vstack([poly, poly[0:1]])
    return [[float(x), float(y)] for x, y in ring]


def scenario_to_dict(s: Scenario) -> dict:
    tracks = []
    for tr in s.tracks:
        rec = {
            "id": tr.id,
            "is_target": bool(tr.is_target),
            "states": [[float(v) for v in row] for row in tr.states],
        }
        if tr.gt_future is not None:
            rec["gt_future"] = [[float(x), float(y)] for x, y in tr.gt_future]
        tracks.append(rec)
    lanes = []
    for ln in s.lanes:
        lanes.append(
            {
                "id": ln.id,
                "centerline": [[float(x), float(y)] for x, y in ln.centerline],
                "predecessors": list(ln.predecessors),
                "successors": list(ln.successors),
                "left_neighbor": list(ln.left_neighbor),
                "right_neighbor": list(ln.right_neighbor),
                "flags": {
                    "turn_left": ln.flags.turn_left,
                    "turn_right": ln.flags.turn_right,
                    "traffic_control": ln.flags.traffic_control,
                    "is_intersection": ln.flags.is_intersection,
                },
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "horizon": {"T": s.horizon.T, "H": s.horizon.H, "dt": s.horizon.dt},
        "tracks": tracks,
        "lanes": lanes,
        "drivable_polygons": [_ring_closed(p) for p in s.drivable_polygons],
        "obstacle_polygons": [_ring_closed(p) for p in s.obstacle_polygons],
    }


def write_scenario(s: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=1)
        fh.write("\n")


def _parse_ring(raw, where: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 4:
        raise ParseError(f"{where}: expected a closed ring of [x, y] points")
    if not np.allclose(arr[0], arr[-1], atol=1e-12):
        raise ParseError(f"{where}: ring is not closed (first != last point)")
    return arr[:-1].copy()


def scenario_from_dict(data: dict) -> Scenario:
    """Parse and fully validate; unknown keys are ignored for forward compat."""
    if not isinstance(data, dict):
        raise ParseError("scenario document must be an object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema_version {version!r}, expected {SCHEMA_VERSION}")
    hz_raw = data.get("horizon", {})
    try:
        hz = Horizon(T=int(hz_raw["T"]), H=int(hz_raw["H"]), dt=float(hz_raw["dt"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"horizon: {exc}") from exc

    tracks = []
    for i, rec in enumerate(data.get("tracks", [])):
        where = f"tracks[{i}]"
        try:
            states = np.asarray(rec["states"], dtype=np.float64)
            fut = rec.get("gt_future")
            tracks.append(
                AgentTrack(
                    id=str(rec["id"]),
                    states=states,
                    is_target=bool(rec.get("is_target", False)),
                    gt_future=None if fut is None else np.asarray(fut, dtype=np.float64),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: {exc}") from exc

    lanes = []
    for i, rec in enumerate(data.get("lanes", [])):
        where = f"lanes[{i}]"
        try:
            fl = rec.get("flags", {})
            lanes.append(
                LanePolyline(
                    id=str(rec["id"]),
                    centerline=np.asarray(rec["centerline"], dtype=np.float64),
                    predecessors=[str(x) for x in rec.get("predecessors", [])],
                    successors=[str(x) for x in rec.get("successors", [])],
                    left_neighbor=[str(x) for x in rec.get("left_neighbor", [])],
                    right_neighbor=[str(x) for x in rec.get("right_neighbor", [])],
                    flags=LaneFlags(
                        turn_left=bool(fl.get("turn_left", False)),
                        turn_right=bool(fl.get("turn_right", False)),
                        traffic_control=bool(fl.get("traffic_control", False)),
                        is_intersection=bool(fl.get("is_intersection", False)),
                    ),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: {exc}") from exc

    driv = [
        _parse_ring(p, f"drivable_polygons[{i}]")
        for i, p in enumerate(data.get("drivable_polygons", []))
    ]
    obst = [
        _parse_ring(p, f"obstacle_polygons[{i}]")
        for i, p in enumerate(data.get("obstacle_polygons", []))
    ]
    s = Scenario(
        tracks=tracks,
        lanes=lanes,
        drivable_polygons=driv,
        obstacle_polygons=obst,
        horizon=hz,
    )
    validate_scenario(s)
    return s


def read_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def scenarios_equal(a: Scenario, b: Scenario, atol: float = 0.0) -> bool:
    """Structural equality on every serialized field."""
    if a.horizon != b.horizon:
        return False
    if len(a.tracks) != len(b.tracks) or len(a.lanes) != len(b.lanes):
        return False
    if len(a.drivable_polygons) != len(b.drivable_polygons):
        return False
    if len(a.obstacle_polygons) != len(b.obstacle_polygons):
        return False

    def close(x, y):
        return np.allclose(x, y, rtol=0.0, atol=atol) if atol else np.array_equal(x, y)

    for ta, tb in zip(a.tracks, b.tracks):
        if ta.id != tb.id or ta.is_target != tb.is_target:
            return False
        if not close(ta.states, tb.states):
            return False
        if (ta.gt_future is None) != (tb.gt_future is None):
            return False
        if ta.gt_future is not None and not close(ta.gt_future, tb.gt_future):
            return False
    for la, lb in zip(a.lanes, b.lanes):
        if (la.id, la.predecessors, la.successors, la.left_neighbor, la.right_neighbor) != (
            lb.id,
            lb.predecessors,
            lb.successors,
            lb.left_neighbor,
            lb.right_neighbor,
        ):
            return False
        if la.flags != lb.flags or not close(la.centerline, lb.centerline):
            return False
    for pa, pb in zip(a.drivable_polygons, b.drivable_polygons):
        if not close(pa, pb):
            return False
    for pa, pb in zip(a.obstacle_polygons, b.obstacle_polygons):
        if not close(pa, pb):
            return False
    return True
