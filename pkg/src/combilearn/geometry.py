"""Convex polygon helpers and the penalty contact model.

The moving part is a union of convex pieces given in its own frame; the
fixed part is a union of convex pieces in the world frame. For every
overlapping (moving, fixed) pair the penetration direction is the
separating-axis minimum, the depth is the overlap area divided by the
overlap's width along the contact tangent, and the spring-damper force acts
at the overlap centroid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .domain import Pose

DEFAULT_STIFFNESS = 1.0e4  # N/m
DEFAULT_DAMPING = 50.0  # N*s/m
_EPS_AREA = 1e-14


class ContactError(RuntimeError):
    """Raised when the contact computation meets degenerate geometry."""


def signed_area(poly) -> float:
    a = 0.0
    n = len(poly)
    for i in range(n):
        x0, z0 = poly[i]
        x1, z1 = poly[(i + 1) % n]
        a += x0 * z1 - x1 * z0
    return 0.5 * a


def check_convex(poly) -> list[tuple[float, float]]:
    """Return ``poly`` as CCW float tuples, rejecting degenerate input."""
    pts = [(float(x), float(z)) for x, z in poly]
    if len(pts) < 3:
        raise ContactError(f"polygon needs >= 3 vertices, got {len(pts)}")
    if not all(math.isfinite(c) for p in pts for c in p):
        raise ContactError("polygon vertices must be finite")
    area = signed_area(pts)
    if abs(area) < 1e-12:
        raise ContactError("degenerate (zero-area) polygon")
    if area < 0:
        pts.reverse()
    n = len(pts)
    for i in range(n):
        ax, az = pts[i]
        bx, bz = pts[(i + 1) % n]
        cx, cz = pts[(i + 2) % n]
        if (bx - ax) * (cz - bz) - (bz - az) * (cx - bx) < -1e-15:
            raise ContactError("polygon is not convex")
    return pts


def transform(poly, x: float, z: float, theta: float):
    c, s = math.cos(theta), math.sin(theta)
    return [(x + c * px - s * pz, z + s * px + c * pz) for px, pz in poly]


def _edge_normals(poly):
    out = []
    n = len(poly)
    for i in range(n):
        ax, az = poly[i]
        bx, bz = poly[(i + 1) % n]
        ex, ez = bx - ax, bz - az
        ln = math.hypot(ex, ez)
        if ln > 0.0:
            # outward normal of a CCW polygon
            out.append((ez / ln, -ex / ln))
    return out


def _project(poly, nx, nz):
    lo = hi = poly[0][0] * nx + poly[0][1] * nz
    for px, pz in poly[1:]:
        d = px * nx + pz * nz
        if d < lo:
            lo = d
        elif d > hi:
            hi = d
    return lo, hi


def sat_normal(moving, fixed):
    """Minimum-overlap axis, oriented to push ``moving`` out of ``fixed``.

    Returns ``(overlap, nx, nz)`` or ``None`` when the polygons are separated
    (touching counts as separated).
    """
    best = None
    for nx, nz in _edge_normals(moving) + _edge_normals(fixed):
        mlo, mhi = _project(moving, nx, nz)
        flo, fhi = _project(fixed, nx, nz)
        push_pos = fhi - mlo  # translate moving along +n by this much
        push_neg = mhi - flo  # ... or along -n by this much
        if push_pos <= 0.0 or push_neg <= 0.0:
            return None
        if push_pos <= push_neg:
            cand = (push_pos, nx, nz)
        else:
            cand = (push_neg, -nx, -nz)
        if best is None or cand[0] < best[0]:
            best = cand
    return best


def clip_convex(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by convex CCW ``clipper``."""
    out = list(subject)
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, az = clipper[i]
        bx, bz = clipper[(i + 1) % n]
        ex, ez = bx - ax, bz - az
        inp = out
        out = []
        m = len(inp)
        for j in range(m):
            px, pz = inp[j]
            qx, qz = inp[(j + 1) % m]
            dp = ex * (pz - az) - ez * (px - ax)
            dq = ex * (qz - az) - ez * (qx - ax)
            if dp >= 0.0:
                out.append((px, pz))
                if dq < 0.0:
                    t = dp / (dp - dq)
                    out.append((px + t * (qx - px), pz + t * (qz - pz)))
            elif dq >= 0.0:
                t = dp / (dp - dq)
                out.append((px + t * (qx - px), pz + t * (qz - pz)))
    return out


def area_centroid(poly):
    a = cx = cz = 0.0
    n = len(poly)
    for i in range(n):
        x0, z0 = poly[i]
        x1, z1 = poly[(i + 1) % n]
        cr = x0 * z1 - x1 * z0
        a += cr
        cx += (x0 + x1) * cr
        cz += (z0 + z1) * cr
    a *= 0.5
    if abs(a) < _EPS_AREA:
        return a, 0.0, 0.0
    return a, cx / (6.0 * a), cz / (6.0 * a)


@dataclass
class FixedPiece:
    polygon: list
    stiffness: float | None = None  # None -> geometry default
    compliant: bool = False  # compliant pads may be preloaded at the goal

    def __post_init__(self):
        self.polygon = check_convex(self.polygon)
        xs = [p[0] for p in self.polygon]
        zs = [p[1] for p in self.polygon]
        self.bbox = (min(xs), max(xs), min(zs), max(zs))


@dataclass
class Contact:
    nx: float
    nz: float
    cx: float
    cz: float
    depth: float
    force: float  # normal magnitude on the part, N (>= 0)


@dataclass
class TaskGeometry:
    """Moving part, fixed part and task poses of one insertion task."""

    name: str
    moving: list
    fixed: list
    clearance: float
    goal: Pose
    start: Pose
    friction: float = 0.0
    stiffness: float = DEFAULT_STIFFNESS
    damping: float = DEFAULT_DAMPING
    workspace: list = field(default_factory=lambda: [[-0.06, 0.08], [-0.01, 0.10], [-0.6, 0.6]])
    insertion_axis: int = 1

    def __post_init__(self):
        self.moving = [check_convex(p) for p in self.moving]
        self.fixed = [f if isinstance(f, FixedPiece) else FixedPiece(**f) if isinstance(f, dict)
                      else FixedPiece(f) for f in self.fixed]
        if not self.clearance > 0:
            raise ValueError("clearance must be positive")
        if not 0.0 <= self.friction:
            raise ValueError("friction must be non-negative")
        self.goal = Pose.make(*self.goal)
        self.start = Pose.make(*self.start)
        r = 0.0
        for poly in self.moving:
            for px, pz in poly:
                r = max(r, math.hypot(px, pz))
        self._radius = r
        if contacts(self, self.goal, rigid_only=True):
            raise ValueError(f"{self.name}: the goal pose penetrates rigid geometry")

    # ---- file format -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "moving": [[list(p) for p in poly] for poly in self.moving],
            "fixed": [{"polygon": [list(p) for p in f.polygon], "stiffness": f.stiffness,
                       "compliant": f.compliant} for f in self.fixed],
            "clearance": self.clearance,
            "goal": list(self.goal),
            "start": list(self.start),
            "friction": self.friction,
            "stiffness": self.stiffness,
            "damping": self.damping,
            "workspace": self.workspace,
            "insertion_axis": self.insertion_axis,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskGeometry":
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TaskGeometry":
        return cls.from_dict(json.loads(Path(path).read_text()))


def bundled_geometry(name: str) -> TaskGeometry:
    """Load one of the packaged geometries (``l-insertion``, ``friction-channel``)."""
    fname = f"{name}.json"
    try:
        text = resources.files("combilearn.data").joinpath(fname).read_text()
    except FileNotFoundError:
        raise ValueError(f"no bundled geometry named {name!r}") from None
    return TaskGeometry.from_dict(json.loads(text))


def contacts(geometry: TaskGeometry, pose, twist=(0.0, 0.0, 0.0), rigid_only=False) -> list[Contact]:
    """All active contact patches at ``pose``; forces are on the moving part."""
    x, z, th = float(pose[0]), float(pose[1]), float(pose[2])
    if not (math.isfinite(x) and math.isfinite(z) and math.isfinite(th)):
        raise ValueError("pose must be finite")
    r = geometry._radius
    vx, vz, om = float(twist[0]), float(twist[1]), float(twist[2])
    out = []
    world = None
    for piece in geometry.fixed:
        if rigid_only and piece.compliant:
            continue
        bx0, bx1, bz0, bz1 = piece.bbox
        if x + r <= bx0 or x - r >= bx1 or z + r <= bz0 or z - r >= bz1:
            continue
        if world is None:
            world = [transform(p, x, z, th) for p in geometry.moving]
        k = piece.stiffness if piece.stiffness is not None else geometry.stiffness
        for mpoly in world:
            sat = sat_normal(mpoly, piece.polygon)
            if sat is None:
                continue
            _, nx, nz = sat
            region = clip_convex(mpoly, piece.polygon)
            if len(region) < 3:
                continue
            area, cx, cz = area_centroid(region)
            if not math.isfinite(area):
                raise ContactError("non-finite overlap area")
            if area <= _EPS_AREA:
                continue
            tx, tz = -nz, nx
            lo, hi = _project(region, tx, tz)
            width = hi - lo
            if width <= 0.0:
                raise ContactError("overlap region has zero width along the tangent")
            depth = area / width
            # velocity of the material point at the centroid
            rx, rz = cx - x, cz - z
            pvx = vx - om * rz
            pvz = vz + om * rx
            approach = -(pvx * nx + pvz * nz)
            fn = k * depth + geometry.damping * approach
            if fn < 0.0:
                fn = 0.0
            out.append(Contact(nx, nz, cx, cz, depth, fn))
    return out


def sum_contacts(cs, x: float, z: float) -> tuple[float, float, float]:
    """Generalised force (fx, fz, torque about the part origin) on the part."""
    fx = fz = tq = 0.0
    for c in cs:
        px, pz = c.force * c.nx, c.force * c.nz
        fx += px
        fz += pz
        tq += (c.cx - x) * pz - (c.cz - z) * px
    return fx, fz, tq


def contact_wrench(geometry: TaskGeometry, pose, twist=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Wrench the part applies to the environment (sensor convention).

    Pushing the part up into a ceiling with depth ``d`` reads ``fz = k*d``;
    pressing down onto a floor reads ``fz = -k*d``. Friction is not part of
    this static evaluation; the simulator adds it during stepping.
    """
    cs = contacts(geometry, pose, twist)
    fx, fz, tq = sum_contacts(cs, float(pose[0]), float(pose[1]))
    return -np.array([fx, fz, tq])


def penetrates(geometry: TaskGeometry, pose, tolerance: float = 0.0, rigid_only: bool = True) -> bool:
    """True if any rigid overlap is deeper than ``tolerance``."""
    return any(c.depth > tolerance for c in contacts(geometry, pose, rigid_only=rigid_only))
