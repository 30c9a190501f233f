"""Shared geometric types, angle arithmetic, and obstacle primitives.

Conventions used throughout the package:

* World frame is right-handed with z up; the ground plane is z = 0.
* Yaw 0 points along +y and increases clockwise when viewed from above,
  so the heading unit vector is (sin(yaw), cos(yaw)) and the bearing to a
  target is atan2(dx, dy). Yaw values are wrapped into (-pi, pi].
* All obstacles stand on the ground plane; distances are full 3D to the
  obstacle surface, so flying over a short obstacle is possible.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

INF = float("inf")


class DegenerateHeading(ValueError):
    """Raised when the drone sits horizontally on top of the goal."""


@dataclass(frozen=True, slots=True)
class Vec3:
    """3D point or velocity in meters / meters per second."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def horizontal_distance(self, other: "Vec3") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True, slots=True)
class DroneState:
    """Full kinematic state of one simulated drone.

    body_rates holds (roll rate, pitch rate, yaw rate) in rad/s; yaw is the
    heading angle in (-pi, pi], distinct from the yaw *rate* stored in
    body_rates.z.
    """

    position: Vec3
    velocity: Vec3
    yaw: float
    body_rates: Vec3
    time_step: int = 0


@dataclass(frozen=True, slots=True)
class Action:
    """Velocity command triple: forward speed, vertical speed, yaw rate."""

    v_x: float
    v_z: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.v_z, self.omega], dtype=np.float64)


@dataclass(frozen=True, slots=True)
class SpeedLimits:
    v_x_max: float = 3.0
    v_z_max: float = 1.0
    omega_max: float = 1.0

    def __post_init__(self):
        if self.v_x_max <= 0 or self.v_z_max <= 0 or self.omega_max <= 0:
            raise ValueError("speed limits must be strictly positive")


# ---------------------------------------------------------------------------
# Obstacle primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Pillar:
    """Vertical cylinder standing on the ground."""

    center_x: float
    center_y: float
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("pillar radius/height must be positive")


@dataclass(frozen=True, slots=True)
class Panel:
    """Thin vertical slab with an arbitrary yaw, standing on the ground."""

    center_x: float
    center_y: float
    length: float
    height: float
    yaw: float
    thickness: float = 0.3

    def __post_init__(self):
        if min(self.length, self.height, self.thickness) <= 0:
            raise ValueError("panel dimensions must be positive")


@dataclass(frozen=True, slots=True)
class Wall:
    """Axis-aligned vertical slab (length runs along +x), on the ground."""

    center_x: float
    center_y: float
    length: float
    height: float
    thickness: float = 0.3

    def __post_init__(self):
        if min(self.length, self.height, self.thickness) <= 0:
            raise ValueError("wall dimensions must be positive")


Obstacle = Union[Pillar, Panel, Wall]


def _box_distance(px, py, pz, cx, cy, half_l, half_t, height, yaw):
    """Distance from point(s) to a vertical box footprint rotated by yaw.

    Works on scalars or numpy arrays for px/py/pz.
    """
    dx = px - cx
    dy = py - cy
    c, s = math.cos(yaw), math.sin(yaw)
    # box frame: u along the length axis, v across the thickness
    u = dx * c + dy * s
    v = -dx * s + dy * c
    du = np.maximum(np.abs(u) - half_l, 0.0)
    dv = np.maximum(np.abs(v) - half_t, 0.0)
    dz = np.maximum(np.maximum(pz - height, -pz), 0.0)
    return np.sqrt(du * du + dv * dv + dz * dz)


def obstacle_distance(p: Vec3, o: Obstacle) -> float:
    """Euclidean distance from p to the obstacle's closest surface point.

    Returns 0 when p is inside the obstacle.
    """
    if isinstance(o, Pillar):
        rd = max(math.hypot(p.x - o.center_x, p.y - o.center_y) - o.radius, 0.0)
        zd = max(p.z - o.height, -p.z, 0.0)
        return math.hypot(rd, zd)
    if isinstance(o, Panel):
        return float(
            _box_distance(p.x, p.y, p.z, o.center_x, o.center_y,
                          o.length / 2, o.thickness / 2, o.height, o.yaw)
        )
    if isinstance(o, Wall):
        return float(
            _box_distance(p.x, p.y, p.z, o.center_x, o.center_y,
                          o.length / 2, o.thickness / 2, o.height, 0.0)
        )
    raise TypeError(f"unknown obstacle kind: {type(o)!r}")


def obstacle_distance_batch(points: np.ndarray, o: Obstacle) -> np.ndarray:
    """Vectorized obstacle_distance for an (N, 3) array of points."""
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    if isinstance(o, Pillar):
        rd = np.maximum(np.hypot(px - o.center_x, py - o.center_y) - o.radius, 0.0)
        zd = np.maximum(np.maximum(pz - o.height, -pz), 0.0)
        return np.hypot(rd, zd)
    if isinstance(o, Panel):
        return _box_distance(px, py, pz, o.center_x, o.center_y,
                             o.length / 2, o.thickness / 2, o.height, o.yaw)
    if isinstance(o, Wall):
        return _box_distance(px, py, pz, o.center_x, o.center_y,
                             o.length / 2, o.thickness / 2, o.height, 0.0)
    raise TypeError(f"unknown obstacle kind: {type(o)!r}")


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass
class Environment:
    """Obstacle set plus a start/goal pair.

    The out-of-bounds box extends bounds_margin meters beyond the range
    spanned by start and goal on each horizontal axis (closed interval:
    sitting exactly on the boundary is still in-bounds).
    """

    obstacles: list
    start: Vec3
    goal: Vec3
    bounds_margin: float = 8.0
    _cache: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.start == self.goal:
            raise ValueError("start and goal must differ")

    def _arrays(self):
        """Group obstacles by kind into flat arrays for vectorized queries."""
        if self._cache is None:
            pillars = [o for o in self.obstacles if isinstance(o, Pillar)]
            boxes = [o for o in self.obstacles if isinstance(o, (Panel, Wall))]
            cache = {}
            if pillars:
                cache["pillar"] = (
                    np.array([[o.center_x, o.center_y] for o in pillars]),
                    np.array([o.radius for o in pillars]),
                    np.array([o.height for o in pillars]),
                )
            if boxes:
                yaws = [o.yaw if isinstance(o, Panel) else 0.0 for o in boxes]
                cache["box"] = (
                    np.array([[o.center_x, o.center_y] for o in boxes]),
                    np.array([[o.length / 2, o.thickness / 2] for o in boxes]),
                    np.array([o.height for o in boxes]),
                    np.cos(yaws),
                    np.sin(yaws),
                )
            self._cache = cache
        return self._cache

    def min_distance(self, x: float, y: float, z: float) -> float:
        """min over obstacles of the 3D surface distance; +inf when empty."""
        cache = self._arrays()
        best = INF
        if "pillar" in cache:
            centers, radii, heights = cache["pillar"]
            rd = np.maximum(np.hypot(x - centers[:, 0], y - centers[:, 1]) - radii, 0.0)
            zd = np.maximum(np.maximum(z - heights, -z), 0.0)
            best = min(best, float(np.min(np.hypot(rd, zd))))
        if "box" in cache:
            centers, halves, heights, cos_y, sin_y = cache["box"]
            dx = x - centers[:, 0]
            dy = y - centers[:, 1]
            u = dx * cos_y + dy * sin_y
            v = -dx * sin_y + dy * cos_y
            du = np.maximum(np.abs(u) - halves[:, 0], 0.0)
            dv = np.maximum(np.abs(v) - halves[:, 1], 0.0)
            dz = np.maximum(np.maximum(z - heights, -z), 0.0)
            best = min(best, float(np.min(np.sqrt(du * du + dv * dv + dz * dz))))
        return best

    def world_extent(self):
        """((xmin, xmax), (ymin, ymax)) covering bounds box and obstacles."""
        xs = [self.start.x, self.goal.x]
        ys = [self.start.y, self.goal.y]
        xmin = min(xs) - self.bounds_margin
        xmax = max(xs) + self.bounds_margin
        ymin = min(ys) - self.bounds_margin
        ymax = max(ys) + self.bounds_margin
        for o in self.obstacles:
            r = o.radius if isinstance(o, Pillar) else math.hypot(o.length, o.thickness) / 2
            xmin = min(xmin, o.center_x - r)
            xmax = max(xmax, o.center_x + r)
            ymin = min(ymin, o.center_y - r)
            ymax = max(ymax, o.center_y + r)
        return (xmin, xmax), (ymin, ymax)

    def max_obstacle_height(self) -> float:
        return max((o.height for o in self.obstacles), default=0.0)


# ---------------------------------------------------------------------------
# Angle arithmetic and tests used by the reward function
# ---------------------------------------------------------------------------


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def wrap_angle_diff(a1: float, a2: float) -> float:
    """Magnitude of the phase-unwrapped difference between two yaw angles.

    Result lies in [0, pi].
    """
    return abs(wrap_angle(a1 - a2))


def desired_heading(p: Vec3, g: Vec3) -> float:
    """Bearing from p toward g: atan2(dx, dy), 0 = +y, clockwise positive.

    Raises DegenerateHeading when p is horizontally on top of g; the caller
    is expected to reuse its previous bearing in that case.
    """
    dx = g.x - p.x
    dy = g.y - p.y
    if math.hypot(dx, dy) <= 1e-9:
        raise DegenerateHeading("drone is horizontally at the goal")
    return math.atan2(dx, dy)


def min_obstacle_distance(p: Vec3, env: Environment) -> float:
    """Minimum 3D distance from p to any obstacle surface; +inf when empty."""
    return env.min_distance(p.x, p.y, p.z)


def is_out_of_bounds(p: Vec3, env: Environment) -> bool:
    """True iff p.x or p.y lies strictly outside the start/goal range +- margin."""
    m = env.bounds_margin
    sx, gx = env.start.x, env.goal.x
    sy, gy = env.start.y, env.goal.y
    if p.x < min(sx, gx) - m or p.x > max(sx, gx) + m:
        return True
    if p.y < min(sy, gy) - m or p.y > max(sy, gy) + m:
        return True
    return False


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def obstacle_to_dict(o: Obstacle) -> dict:
    if isinstance(o, Pillar):
        return {"kind": "pillar", "center": [o.center_x, o.center_y],
                "radius": o.radius, "height": o.height}
    if isinstance(o, Panel):
        return {"kind": "panel", "center": [o.center_x, o.center_y],
                "length": o.length, "height": o.height,
                "yaw": o.yaw, "thickness": o.thickness}
    if isinstance(o, Wall):
        return {"kind": "wall", "center": [o.center_x, o.center_y],
                "length": o.length, "height": o.height, "thickness": o.thickness}
    raise TypeError(f"unknown obstacle kind: {type(o)!r}")


def obstacle_from_dict(d: dict) -> Obstacle:
    kind = d["kind"]
    cx, cy = d["center"]
    if kind == "pillar":
        return Pillar(cx, cy, d["radius"], d["height"])
    if kind == "panel":
        return Panel(cx, cy, d["length"], d["height"], d["yaw"], d["thickness"])
    if kind == "wall":
        return Wall(cx, cy, d["length"], d["height"], d["thickness"])
    raise ValueError(f"unknown obstacle kind: {kind!r}")


def environment_to_dict(env: Environment) -> dict:
    return {
        "obstacles": [obstacle_to_dict(o) for o in env.obstacles],
        "start": [env.start.x, env.start.y, env.start.z],
        "goal": [env.goal.x, env.goal.y, env.goal.z],
        "bounds_margin": env.bounds_margin,
    }


def environment_from_dict(d: dict) -> Environment:
    return Environment(
        obstacles=[obstacle_from_dict(o) for o in d["obstacles"]],
        start=Vec3(*d["start"]),
        goal=Vec3(*d["goal"]),
        bounds_margin=d.get("bounds_margin", 8.0),
    )


def save_environment(env: Environment, path) -> None:
    with open(path, "w") as f:
        json.dump(environment_to_dict(env), f, indent=2)


def load_environment(path) -> Environment:
    with open(path) as f:
        return environment_from_dict(json.load(f))


def environment_hash(env: Environment) -> str:
    """Stable content hash (canonical JSON, repr-exact floats)."""
    blob = json.dumps(environment_to_dict(env), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
