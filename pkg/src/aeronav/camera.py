"""Analytic ray-cast depth camera with stereo-noise emulation.

Depth images are (height, width) float arrays holding z-depth in meters:
the distance along the optical axis, matching stereo depth-map convention,
not Euclidean ray length. The camera is forward-facing, aligned with the
drone's yaw, pitch fixed to zero.

Rays are parameterized with an unnormalized direction whose optical-axis
component is 1, so the ray parameter t *is* the z-depth. Intersections are
computed as per-obstacle t-intervals: a per-column horizontal interval
(quadratic for pillars, slab test for panels/walls) intersected with a
per-row vertical interval, which handles side walls and top caps uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import DroneState, Environment, Panel, Pillar, Wall


@dataclass(frozen=True)
class CameraModel:
    width: int = 192
    height: int = 108
    horizontal_fov: float = 1.57
    min_range: float = 0.2
    max_range: float = 20.0

    def __post_init__(self):
        if not (0.0 < self.min_range < self.max_range):
            raise ValueError("require 0 < min_range < max_range")
        if not (0.0 < self.horizontal_fov < math.pi):
            raise ValueError("horizontal_fov must lie in (0, pi)")

    def ray_slopes(self):
        """Per-column lateral and per-row vertical ray slopes.

        Column u maps to a_u = tan(fov/2) * (2(u+.5)/W - 1)  (right positive)
        Row v maps to    b_v = tan(fov/2) * (H/W) * (1 - 2(v+.5)/H)  (up positive)
        """
        t = math.tan(self.horizontal_fov / 2.0)
        a_u = t * ((np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0)
        b_v = t * (self.height / self.width) * (
            1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0)
        return a_u.astype(np.float64), b_v.astype(np.float64)


@dataclass(frozen=True)
class DepthNoise:
    blur_kernel: int = 5
    sigma_range: tuple = (0.1, 0.7)

    def __post_init__(self):
        lo, hi = self.sigma_range
        if not (0.0 < lo <= hi <= 5.0):
            raise ValueError("sigma_range must lie within (0, 5]")


def _column_dirs(cam: CameraModel, yaw: float):
    """World-frame horizontal direction components per column."""
    a_u, b_v = cam.ray_slopes()
    sin_y, cos_y = math.sin(yaw), math.cos(yaw)
    # right vector (cos, -sin), forward (sin, cos)
    dx = a_u * cos_y + sin_y
    dy = -a_u * sin_y + cos_y
    return a_u, b_v, dx, dy


def _z_interval(pz: float, b_v: np.ndarray, z_lo: float, z_hi: float):
    """Per-row t-interval where z(t) = pz + t*b_v lies in [z_lo, z_hi]."""
    t1 = np.full(b_v.shape, -np.inf)
    t2 = np.full(b_v.shape, np.inf)
    up = b_v > 1e-12
    dn = b_v < -1e-12
    flat = ~up & ~dn
    with np.errstate(divide="ignore", invalid="ignore"):
        t1[up] = (z_lo - pz) / b_v[up]
        t2[up] = (z_hi - pz) / b_v[up]
        t1[dn] = (z_hi - pz) / b_v[dn]
        t2[dn] = (z_lo - pz) / b_v[dn]
    if not (z_lo <= pz <= z_hi):
        t1[flat] = np.inf  # level rows never reach the band
        t2[flat] = -np.inf
    return t1, t2


def render(pose: DroneState, env: Environment, cam: CameraModel) -> np.ndarray:
    """Per-pixel nearest intersection with the obstacle set and ground plane.

    Returns a (height, width) float32 array clipped to
    [min_range, max_range]; pixels with no hit read max_range.
    """
    px, py, pz = pose.position.x, pose.position.y, pose.position.z
    a_u, b_v, dx, dy = _column_dirs(cam, pose.yaw)
    sin_y, cos_y = math.sin(pose.yaw), math.cos(pose.yaw)
    tan_half = math.tan(cam.horizontal_fov / 2.0)

    depth = np.full((cam.height, cam.width), np.inf)

    # ground plane z = 0
    down = b_v < -1e-12
    t_g = np.full(cam.height, np.inf)
    t_g[down] = -pz / b_v[down]
    depth = np.minimum(depth, t_g[:, None])

    for o in env.obstacles:
        if isinstance(o, Pillar):
            bound_r = o.radius
        else:
            bound_r = math.hypot(o.length, o.thickness) / 2.0
        ox, oy = o.center_x - px, o.center_y - py
        fwd = ox * sin_y + oy * cos_y
        lat = ox * cos_y - oy * sin_y
        if fwd + bound_r < 0.0:
            continue  # fully behind the camera
        if fwd - bound_r > cam.max_range:
            continue  # beyond the clip distance
        if abs(lat) - bound_r > tan_half * (fwd + bound_r):
            continue  # outside the horizontal frustum

        if isinstance(o, Pillar):
            # per-column quadratic against the infinite cylinder
            rx, ry = px - o.center_x, py - o.center_y
            qa = dx * dx + dy * dy
            qb = 2.0 * (rx * dx + ry * dy)
            qc = rx * rx + ry * ry - o.radius * o.radius
            disc = qb * qb - 4.0 * qa * qc
            hit_col = disc > 0.0
            sq = np.sqrt(np.maximum(disc, 0.0))
            h1 = np.where(hit_col, (-qb - sq) / (2.0 * qa), np.inf)
            h2 = np.where(hit_col, (-qb + sq) / (2.0 * qa), -np.inf)
            z_hi = o.height
        else:
            yaw_o = o.yaw if isinstance(o, Panel) else 0.0
            c, s = math.cos(yaw_o), math.sin(yaw_o)
            # ray origin/direction in the box frame (u: length, v: thickness)
            ou = (px - o.center_x) * c + (py - o.center_y) * s
            ov = -(px - o.center_x) * s + (py - o.center_y) * c
            du = dx * c + dy * s
            dv = -dx * s + dy * c
            h1 = np.full(cam.width, -np.inf)
            h2 = np.full(cam.width, np.inf)
            for orig, dire, half in ((ou, du, o.length / 2.0), (ov, dv, o.thickness / 2.0)):
                with np.errstate(divide="ignore", invalid="ignore"):
                    ta = (-half - orig) / dire
                    tb = (half - orig) / dire
                lo = np.minimum(ta, tb)
                hi = np.maximum(ta, tb)
                par = np.abs(dire) < 1e-12
                inside = abs(orig) <= half
                lo = np.where(par, -np.inf if inside else np.inf, lo)
                hi = np.where(par, np.inf if inside else -np.inf, hi)
                h1 = np.maximum(h1, lo)
                h2 = np.minimum(h2, hi)
            z_hi = o.height

        z1, z2 = _z_interval(pz, b_v, 0.0, z_hi)
        t_enter = np.maximum(h1[None, :], z1[:, None])
        t_exit = np.minimum(h2[None, :], z2[:, None])
        valid = (t_enter <= t_exit) & (t_exit > 0.0)
        t_hit = np.where(valid, np.maximum(t_enter, 0.0), np.inf)
        depth = np.minimum(depth, t_hit)

    return np.clip(depth, cam.min_range, cam.max_range).astype(np.float32)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    """Sampled Gaussian taps, normalized to sum exactly to 1."""
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def apply_noise(img: np.ndarray, noise: DepthNoise, rng,
                min_range: float = 0.2, max_range: float = 20.0) -> np.ndarray:
    """Blur with a kxk Gaussian (sigma ~ U[sigma_range]), replicate edges."""
    lo, hi = noise.sigma_range
    sigma = float(rng.uniform(lo, hi))
    k = gaussian_kernel_1d(noise.blur_kernel, sigma).astype(img.dtype)
    out = correlate1d(img, k, axis=0, mode="nearest")
    out = correlate1d(out, k, axis=1, mode="nearest")
    return np.clip(out, min_range, max_range)


def normalize_for_policy(img: np.ndarray, min_range: float = 0.2,
                         max_range: float = 20.0) -> np.ndarray:
    """Affine map [min_range, max_range] -> [0, 1], float32."""
    return ((img - min_range) / (max_range - min_range)).astype(np.float32)


def write_pgm(img: np.ndarray, path) -> None:
    """Dump depth as 16-bit binary PGM in millimeters (big-endian)."""
    mm = np.clip(np.round(img * 1000.0), 0, 65535).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(mm.tobytes())
