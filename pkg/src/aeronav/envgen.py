"""Procedural environment generation: privileged pillars, curriculum regions.

All numeric ranges (counts, radii, circle radii, panel/wall lengths, area
sizes) are config-exposed defaults chosen for desk-scale training. Every
generator rejects layouts until the start and goal are connected by a
collision-free corridor at the crash clearance, checked on a coarse 2D
occupancy slice (obstacles here are full-height, so the slice is exact for
lateral passages).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .core import Environment, Panel, Pillar, Vec3, Wall

CRASH_CLEARANCE = 1.25
START_GOAL_CLEARANCE = 2.5   # generators keep spawn/goal this far from obstacles
MAX_ATTEMPTS = 1000

REGION_PILLAR_CLUSTERS = "pillar_clusters"
REGION_PANELS = "panels"
REGION_WALLS = "walls"


class GenerationFailed(RuntimeError):
    """Rejection sampling exhausted its attempt budget."""


@dataclass(frozen=True)
class RegionSpec:
    kind: str
    area: tuple = (40.0, 40.0)
    spacing_min: float = 5.0
    count_range: tuple = (8, 20)
    size_range: tuple = (0.3, 0.8)   # pillar radius or panel/wall length
    height: float = 6.0
    separation_range: tuple = (20.0, 35.0)
    altitude_range: tuple = (1.5, 2.5)
    # region 1 only: cluster inner circle and start/goal outer circle radii
    inner_radius: float = 4.0
    outer_radius_range: tuple = (10.0, 14.0)

    def __post_init__(self):
        if self.spacing_min <= 0:
            raise ValueError("spacing_min must be positive")
        if self.count_range[0] > self.count_range[1] or self.count_range[0] < 1:
            raise ValueError("bad count_range")


def privileged_spec() -> RegionSpec:
    """Spaced-out random pillars for the privileged-learning stage."""
    return RegionSpec(kind=REGION_PILLAR_CLUSTERS, area=(40.0, 40.0),
                      spacing_min=5.0, count_range=(8, 20),
                      size_range=(0.3, 0.8), separation_range=(20.0, 35.0))


def region1_spec() -> RegionSpec:
    return RegionSpec(kind=REGION_PILLAR_CLUSTERS, area=(30.0, 30.0),
                      spacing_min=3.0, count_range=(2, 5),
                      size_range=(0.3, 0.8))


def region2_spec() -> RegionSpec:
    return RegionSpec(kind=REGION_PANELS, area=(30.0, 30.0),
                      spacing_min=5.0, count_range=(4, 8),
                      size_range=(2.0, 6.0), separation_range=(16.0, 30.0))


def region3_spec() -> RegionSpec:
    return RegionSpec(kind=REGION_WALLS, area=(20.0, 26.0),
                      spacing_min=5.0, count_range=(1, 3),
                      size_range=(4.0, 10.0))


def densify(env_spec: RegionSpec, density: float) -> RegionSpec:
    """Density d shrinks the minimum obstacle spacing by 1/d."""
    if density < 1.0:
        raise ValueError("density must be >= 1")
    return replace(env_spec, spacing_min=env_spec.spacing_min / density)


# ---------------------------------------------------------------------------
# Solvability check: 2D free-space connectivity at the crash clearance
# ---------------------------------------------------------------------------


def is_solvable(env: Environment, clearance: float = CRASH_CLEARANCE,
                resolution: float = 0.2) -> bool:
    """True when start and goal share a connected free component.

    The check runs on a horizontal slice, valid here because all generated
    obstacles span the full flight band.
    """
    (xmin, xmax), (ymin, ymax) = env.world_extent()
    nx = int(math.ceil((xmax - xmin) / resolution)) + 1
    ny = int(math.ceil((ymax - ymin) / resolution)) + 1
    xs = xmin + (np.arange(nx) + 0.5) * resolution
    ys = ymin + (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    occupied = np.zeros((nx, ny), dtype=bool)
    z_probe = (env.start.z + env.goal.z) / 2.0
    for o in env.obstacles:
        if isinstance(o, Pillar):
            d = np.hypot(gx - o.center_x, gy - o.center_y) - o.radius
        else:
            yaw = o.yaw if isinstance(o, Panel) else 0.0
            c, s = math.cos(yaw), math.sin(yaw)
            u = (gx - o.center_x) * c + (gy - o.center_y) * s
            v = -(gx - o.center_x) * s + (gy - o.center_y) * c
            du = np.maximum(np.abs(u) - o.length / 2.0, 0.0)
            dv = np.maximum(np.abs(v) - o.thickness / 2.0, 0.0)
            d = np.hypot(du, dv)
        occupied |= d <= clearance
    labels, _ = ndimage.label(~occupied)

    def cell(p):
        i = int(np.clip((p.x - xmin) / resolution, 0, nx - 1))
        j = int(np.clip((p.y - ymin) / resolution, 0, ny - 1))
        return i, j

    si, sj = cell(env.start)
    gi, gj = cell(env.goal)
    if z_probe > env.max_obstacle_height():
        return True  # flying above everything
    return labels[si, sj] != 0 and labels[si, sj] == labels[gi, gj]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _place_pillars(rng, n, half_x, half_y, r_range, height, spacing, max_tries=400):
    pillars = []
    tries = 0
    while len(pillars) < n and tries < max_tries:
        tries += 1
        r = rng.uniform(*r_range)
        x = rng.uniform(-half_x, half_x)
        y = rng.uniform(-half_y, half_y)
        if all(math.hypot(x - p.center_x, y - p.center_y) - r - p.radius >= spacing
               for p in pillars):
            pillars.append(Pillar(x, y, r, height))
    return pillars if len(pillars) == n else None


def _clear_of(obstacles, x, y, z, margin):
    env_probe = Environment(obstacles, Vec3(1e6, 1e6, 1.0), Vec3(1e6, 1e6, 2.0))
    return env_probe.min_distance(x, y, z) >= margin if obstacles else True


def gen_privileged_env(rng, spec: RegionSpec | None = None) -> Environment:
    """Randomly placed pillars with a randomized start/goal pair."""
    spec = spec or privileged_spec()
    half_x, half_y = spec.area[0] / 2.0, spec.area[1] / 2.0
    for _ in range(MAX_ATTEMPTS):
        n = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
        pillars = _place_pillars(rng, n, half_x, half_y, spec.size_range,
                                 spec.height, spec.spacing_min)
        if pillars is None:
            continue
        sep_lo, sep_hi = spec.separation_range
        for _ in range(50):
            sx = rng.uniform(-half_x, half_x)
            sy = rng.uniform(-half_y, half_y)
            gx = rng.uniform(-half_x, half_x)
            gy = rng.uniform(-half_y, half_y)
            sep = math.hypot(gx - sx, gy - sy)
            if not (sep_lo <= sep <= sep_hi):
                continue
            sz = rng.uniform(*spec.altitude_range)
            gz = rng.uniform(*spec.altitude_range)
            if not _clear_of(pillars, sx, sy, sz, START_GOAL_CLEARANCE):
                continue
            if not _clear_of(pillars, gx, gy, gz, START_GOAL_CLEARANCE):
                continue
            env = Environment(pillars, Vec3(sx, sy, sz), Vec3(gx, gy, gz))
            if is_solvable(env):
                return env
    raise GenerationFailed("privileged environment rejection sampling exhausted")


def _gen_region1(rng, spec: RegionSpec) -> Environment:
    """Pillar cluster in an inner circle, start/goal on an outer circle."""
    for _ in range(MAX_ATTEMPTS):
        n = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
        pillars = []
        tries = 0
        while len(pillars) < n and tries < 200:
            tries += 1
            r = rng.uniform(*spec.size_range)
            rho = spec.inner_radius * math.sqrt(rng.uniform())
            phi = rng.uniform(0.0, 2.0 * math.pi)
            x, y = rho * math.cos(phi), rho * math.sin(phi)
            if all(math.hypot(x - p.center_x, y - p.center_y) - r - p.radius
                   >= spec.spacing_min for p in pillars):
                pillars.append(Pillar(x, y, r, spec.height))
        if len(pillars) < n:
            continue
        theta = rng.uniform(0.0, 2.0 * math.pi)
        jitter = rng.uniform(-math.pi / 6.0, math.pi / 6.0)
        r_s = rng.uniform(*spec.outer_radius_range)
        r_g = rng.uniform(*spec.outer_radius_range)
        sx, sy = r_s * math.cos(theta), r_s * math.sin(theta)
        phi_g = theta + math.pi + jitter
        gx, gy = r_g * math.cos(phi_g), r_g * math.sin(phi_g)
        sz = rng.uniform(*spec.altitude_range)
        gz = rng.uniform(*spec.altitude_range)
        env = Environment(pillars, Vec3(sx, sy, sz), Vec3(gx, gy, gz))
        if is_solvable(env):
            return env
    raise GenerationFailed("region 1 rejection sampling exhausted")


def _gen_region2(rng, spec: RegionSpec) -> Environment:
    """Variable-length panels at random yaw; start/goal anywhere."""
    half_x, half_y = spec.area[0] / 2.0, spec.area[1] / 2.0
    for _ in range(MAX_ATTEMPTS):
        n = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
        panels = []
        tries = 0
        while len(panels) < n and tries < 300:
            tries += 1
            length = rng.uniform(*spec.size_range)
            x = rng.uniform(-half_x, half_x)
            y = rng.uniform(-half_y, half_y)
            yaw = rng.uniform(0.0, math.pi)
            ok = True
            for p in panels:
                min_center = spec.spacing_min + (length + p.length) / 2.0
                if math.hypot(x - p.center_x, y - p.center_y) < min_center:
                    ok = False
                    break
            if ok:
                panels.append(Panel(x, y, length, spec.height, yaw))
        if len(panels) < n:
            continue
        sep_lo, sep_hi = spec.separation_range
        for _ in range(50):
            sx = rng.uniform(-half_x, half_x)
            sy = rng.uniform(-half_y, half_y)
            gx = rng.uniform(-half_x, half_x)
            gy = rng.uniform(-half_y, half_y)
            if not (sep_lo <= math.hypot(gx - sx, gy - sy) <= sep_hi):
                continue
            sz = rng.uniform(*spec.altitude_range)
            gz = rng.uniform(*spec.altitude_range)
            if not _clear_of(panels, sx, sy, sz, START_GOAL_CLEARANCE):
                continue
            if not _clear_of(panels, gx, gy, gz, START_GOAL_CLEARANCE):
                continue
            env = Environment(panels, Vec3(sx, sy, sz), Vec3(gx, gy, gz))
            if is_solvable(env):
                return env
    raise GenerationFailed("region 2 rejection sampling exhausted")


def _gen_region3(rng, spec: RegionSpec) -> Environment:
    """Walls crossing a rectangular sub-region; start/goal on opposite sides.

    Wall centers track the straight start-goal segment so the direct line is
    obstructed, while a side gap of at least ~3.5 m is always left open.
    """
    width, depth = spec.area
    half_w = width / 2.0
    min_gap = CRASH_CLEARANCE * 2.0 + 1.0
    for _ in range(MAX_ATTEMPTS):
        n = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
        margin = 4.0
        sy = -depth / 2.0 - margin
        gy = depth / 2.0 + margin
        sx = rng.uniform(-half_w * 0.6, half_w * 0.6)
        gx = rng.uniform(-half_w * 0.6, half_w * 0.6)
        ys = np.sort(rng.uniform(-depth / 2.0, depth / 2.0, size=n))
        if n > 1 and np.min(np.diff(ys)) < spec.spacing_min:
            continue
        walls = []
        for y_w in ys:
            length = rng.uniform(*spec.size_range)
            frac = (y_w - sy) / (gy - sy)
            x_cross = sx + frac * (gx - sx)
            cx = x_cross + rng.uniform(-0.35, 0.35) * length
            lim = half_w - length / 2.0 - min_gap
            if lim > 0:
                cx = float(np.clip(cx, -lim, lim))
            walls.append(Wall(cx, float(y_w), length, spec.height))
        sz = rng.uniform(*spec.altitude_range)
        gz = rng.uniform(*spec.altitude_range)
        if not _clear_of(walls, sx, sy, sz, START_GOAL_CLEARANCE):
            continue
        if not _clear_of(walls, gx, gy, gz, START_GOAL_CLEARANCE):
            continue
        env = Environment(walls, Vec3(sx, sy, sz), Vec3(gx, gy, gz))
        if is_solvable(env):
            return env
    raise GenerationFailed("region 3 rejection sampling exhausted")


def gen_region(spec: RegionSpec, rng) -> Environment:
    if spec.kind == REGION_PILLAR_CLUSTERS:
        return _gen_region1(rng, spec)
    if spec.kind == REGION_PANELS:
        return _gen_region2(rng, spec)
    if spec.kind == REGION_WALLS:
        return _gen_region3(rng, spec)
    raise ValueError(f"unknown region kind: {spec.kind!r}")


# ---------------------------------------------------------------------------
# Curriculum mixing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurriculumSchedule:
    """Piecewise-linear region mix weights over training progress [0, 1].

    Starts fully in region 1; regions 2 and 3 ramp in linearly from
    ramp2_start / ramp3_start up to an even 1/3 mix at progress 1.
    """

    ramp2_start: float = 0.2
    ramp3_start: float = 0.5
    final_weight: float = 1.0 / 3.0

    def weights(self, progress: float) -> tuple:
        p = min(max(progress, 0.0), 1.0)

        def ramp(start):
            if p <= start:
                return 0.0
            return self.final_weight * (p - start) / (1.0 - start)

        w2 = ramp(self.ramp2_start)
        w3 = ramp(self.ramp3_start)
        return (1.0 - w2 - w3, w2, w3)


def sample_curriculum(schedule: CurriculumSchedule, progress: float, rng,
                      specs: tuple | None = None) -> Environment:
    """Draw a region per the schedule's weights, then generate from it."""
    if specs is None:
        specs = (region1_spec(), region2_spec(), region3_spec())
    w = schedule.weights(progress)
    idx = int(rng.choice(3, p=np.array(w) / sum(w)))
    return gen_region(specs[idx], rng)
