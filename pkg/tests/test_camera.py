import math

import numpy as np
import pytest

from aeronav.camera import (CameraModel, DepthNoise, apply_noise,
                            gaussian_kernel_1d, normalize_for_policy, render,
                            write_pgm)
from aeronav.core import DroneState, Environment, Panel, Pillar, Vec3, Wall

CAM = CameraModel()


def pose(x=0.0, y=0.0, z=2.0, yaw=0.0):
    return DroneState(position=Vec3(x, y, z), velocity=Vec3(0, 0, 0),
                      yaw=yaw, body_rates=Vec3(0, 0, 0))


def march_depth(env, origin, a_u, b_v, yaw, cam, step=0.001):
    """Independent ray-march oracle in the z-depth parameter.

    Direction (a_u, 1, b_v) in the camera frame; marching step is `step`
    meters of true arc length. Returns the clipped z-depth.
    """
    sin_y, cos_y = math.sin(yaw), math.cos(yaw)
    d = np.array([a_u * cos_y + sin_y, -a_u * sin_y + cos_y, b_v])
    norm = math.sqrt(1.0 + a_u * a_u + b_v * b_v)
    dt = step / norm

    def inside(px, py, pz):
        if pz <= 0.0:
            return True
        for o in env.obstacles:
            if isinstance(o, Pillar):
                if (math.hypot(px - o.center_x, py - o.center_y) <= o.radius
                        and 0.0 <= pz <= o.height):
                    return True
            else:
                yo = o.yaw if isinstance(o, Panel) else 0.0
                c, s = math.cos(yo), math.sin(yo)
                u = (px - o.center_x) * c + (py - o.center_y) * s
                v = -(px - o.center_x) * s + (py - o.center_y) * c
                if (abs(u) <= o.length / 2 and abs(v) <= o.thickness / 2
                        and 0.0 <= pz <= o.height):
                    return True
        return False

    # coarse pass at 10x the step, then refine the bracketing interval
    t = cam.min_range
    coarse = 10 * dt
    hit_hi = None
    while t <= cam.max_range + coarse:
        p = origin + t * d
        if inside(*p):
            hit_hi = t
            break
        t += coarse
    if hit_hi is None:
        return cam.max_range
    t = max(hit_hi - coarse, cam.min_range)
    while t <= hit_hi + dt:
        p = origin + t * d
        if inside(*p):
            return min(max(t, cam.min_range), cam.max_range)
        t += dt
    return min(max(hit_hi, cam.min_range), cam.max_range)


class TestRender:
    def test_empty_env_high_altitude_all_clip(self):
        env = Environment([], Vec3(0, 0, 15), Vec3(10, 0, 15))
        img = render(pose(z=15.0), env, CAM)
        assert img.shape == (108, 192)
        assert np.all(img == 20.0)

    def test_ground_plane_visible_at_low_altitude(self):
        env = Environment([], Vec3(0, 0, 2), Vec3(10, 0, 2))
        img = render(pose(z=2.0), env, CAM)
        assert img[-1, 96] < 20.0          # bottom row sees the ground
        assert img[0, 96] == 20.0          # top row clips

    def test_pillar_center_pixel(self):
        env = Environment([Pillar(0.0, 5.0, 0.5, 6.0)],
                          Vec3(0, -1, 2), Vec3(0, 10, 2))
        img = render(pose(y=0.0, z=2.0, yaw=0.0), env, CAM)
        assert img[54, 96] == pytest.approx(4.5, abs=5e-3)

    def test_depth_monotone_in_radius(self):
        imgs = []
        for r in (0.8, 0.5, 0.3):
            env = Environment([Pillar(0.0, 5.0, r, 6.0)],
                              Vec3(0, -1, 2), Vec3(0, 10, 2))
            imgs.append(render(pose(), env, CAM))
        assert np.all(imgs[1] >= imgs[0] - 1e-6)
        assert np.all(imgs[2] >= imgs[1] - 1e-6)

    def test_deterministic(self):
        env = Environment([Pillar(1.0, 6.0, 0.5, 6.0), Wall(0, 9, 4, 6)],
                          Vec3(0, -1, 2), Vec3(0, 14, 2))
        a = render(pose(yaw=0.3), env, CAM)
        b = render(pose(yaw=0.3), env, CAM)
        assert np.array_equal(a, b)

    def test_matches_ray_march_oracle(self):
        rng = np.random.default_rng(20)
        a_us, b_vs = CAM.ray_slopes()
        worst = 0.0
        for scene in range(100):
            obstacles = []
            for _ in range(rng.integers(1, 5)):
                kind = rng.integers(3)
                if kind == 0:
                    obstacles.append(Pillar(rng.uniform(-6, 6), rng.uniform(2, 12),
                                            rng.uniform(0.3, 1.0),
                                            rng.uniform(2.0, 8.0)))
                elif kind == 1:
                    obstacles.append(Panel(rng.uniform(-6, 6), rng.uniform(2, 12),
                                           rng.uniform(1.0, 4.0),
                                           rng.uniform(2.0, 8.0),
                                           rng.uniform(0, math.pi)))
                else:
                    obstacles.append(Wall(rng.uniform(-6, 6), rng.uniform(2, 12),
                                          rng.uniform(2.0, 6.0),
                                          rng.uniform(2.0, 8.0)))
            env = Environment(obstacles, Vec3(0, -20, 2), Vec3(0, 20, 2))
            z = rng.uniform(1.0, 5.0)
            yaw = rng.uniform(-0.4, 0.4)
            while env.min_distance(0.0, 0.0, z) < 0.3:
                z = rng.uniform(1.0, 5.0)
            img = render(pose(z=z, yaw=yaw), env, CAM)
            origin = np.array([0.0, 0.0, z])
            for _ in range(12):
                u = int(rng.integers(192))
                v = int(rng.integers(108))
                expected = march_depth(env, origin, a_us[u], b_vs[v], yaw, CAM)
                err = abs(float(img[v, u]) - expected)
                worst = max(worst, err)
                assert err <= 2e-3, (
                    f"scene {scene} pixel ({v},{u}): render {img[v, u]:.4f} "
                    f"vs march {expected:.4f}")
        print(f"renderer-vs-march max error {worst * 1000:.3f} mm")


class TestNoise:
    def test_constant_image_unchanged(self):
        img = np.full((108, 192), 7.0, dtype=np.float64)
        out = apply_noise(img, DepthNoise(), np.random.default_rng(0))
        assert np.max(np.abs(out - 7.0)) < 1e-9

    def test_kernel_normalized(self):
        for sigma in (0.1, 0.35, 0.7, 2.0):
            k = gaussian_kernel_1d(5, sigma)
            assert k.sum() == pytest.approx(1.0, abs=1e-12)

    def test_low_sigma_near_identity_on_edge(self):
        img = np.full((108, 192), 0.2, dtype=np.float64)
        img[:, 96:] = 20.0  # step edge
        noise = DepthNoise(sigma_range=(0.1, 0.1))
        out = apply_noise(img, noise, np.random.default_rng(0))
        assert np.max(np.abs(out - img)) < 0.05 * (20.0 - 0.2)

    def test_blur_preserves_interior_mean(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0.2, 20.0, size=(108, 192))
        noise = DepthNoise(sigma_range=(0.5, 0.5))
        out = apply_noise(img, noise, np.random.default_rng(1),
                          min_range=0.0, max_range=25.0)
        # away from replicated edges the kernel is exactly mean-preserving
        k = gaussian_kernel_1d(5, 0.5)
        expected = img[50 - 2:50 + 3, 90 - 2:90 + 3] * np.outer(k, k)
        assert out[50, 90] == pytest.approx(expected.sum(), abs=1e-9)

    def test_output_reclipped(self):
        img = np.full((20, 20), 20.0, dtype=np.float64)
        out = apply_noise(img, DepthNoise(), np.random.default_rng(2))
        assert np.all(out <= 20.0) and np.all(out >= 0.2)


class TestNormalize:
    def test_endpoints_and_midpoint(self):
        img = np.array([[20.0, 0.2, 10.1]], dtype=np.float32)
        out = normalize_for_policy(img)
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(0.0)
        assert out[0, 2] == pytest.approx(0.5)


class TestPgm:
    def test_header_and_payload(self, tmp_path):
        img = np.array([[0.2, 1.0], [2.5, 20.0]], dtype=np.float32)
        path = tmp_path / "d.pgm"
        write_pgm(img, path)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n65535\n")
        payload = np.frombuffer(raw.split(b"65535\n", 1)[1], dtype=">u2")
        assert payload.tolist() == [200, 1000, 2500, 20000]
