import math

import numpy as np
import pytest

from aeronav import envgen
from aeronav.core import Panel, Pillar, Vec3, Wall, environment_hash, \
    min_obstacle_distance
from aeronav.envgen import (CurriculumSchedule, GenerationFailed, RegionSpec,
                            densify, gen_privileged_env, gen_region,
                            is_solvable, region1_spec, region2_spec,
                            region3_spec, sample_curriculum)


class TestPrivilegedGen:
    def test_deterministic_hash(self):
        e1 = gen_privileged_env(np.random.default_rng(77))
        e2 = gen_privileged_env(np.random.default_rng(77))
        assert environment_hash(e1) == environment_hash(e2)

    def test_start_goal_clearance(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            env = gen_privileged_env(rng)
            assert min_obstacle_distance(env.start, env) >= 1.25
            assert min_obstacle_distance(env.goal, env) >= 1.25

    def test_pillar_count_range(self):
        rng = np.random.default_rng(2)
        counts = [len(gen_privileged_env(rng).obstacles) for _ in range(300)]
        assert min(counts) == 8 and max(counts) == 20

    def test_separation_range(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            env = gen_privileged_env(rng)
            sep = env.start.horizontal_distance(env.goal)
            assert 20.0 <= sep <= 35.0

    def test_pairwise_spacing(self):
        rng = np.random.default_rng(4)
        env = gen_privileged_env(rng)
        ps = env.obstacles
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                gap = (math.hypot(ps[i].center_x - ps[j].center_x,
                                  ps[i].center_y - ps[j].center_y)
                       - ps[i].radius - ps[j].radius)
                assert gap >= 5.0 - 1e-9


class TestRegions:
    def test_region1_centers_within_inner_circle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            env = gen_region(region1_spec(), rng)
            for o in env.obstacles:
                assert isinstance(o, Pillar)
                assert math.hypot(o.center_x, o.center_y) <= 4.0 + o.radius

    def test_region1_start_goal_on_outer_circle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            env = gen_region(region1_spec(), rng)
            for p in (env.start, env.goal):
                r = math.hypot(p.x, p.y)
                assert 10.0 - 1e-6 <= r <= 14.0 + 1e-6

    def test_region2_panels(self):
        rng = np.random.default_rng(7)
        env = gen_region(region2_spec(), rng)
        assert all(isinstance(o, Panel) for o in env.obstacles)
        assert all(2.0 <= o.length <= 6.0 for o in env.obstacles)

    def test_region3_start_goal_opposite_sides(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            env = gen_region(region3_spec(), rng)
            assert all(isinstance(o, Wall) for o in env.obstacles)
            for o in env.obstacles:
                assert (env.start.y - o.center_y) * (env.goal.y - o.center_y) < 0

    def test_region3_walls_obstruct_direct_line(self):
        def segment_hits_wall(s, g, w):
            # independent 2D segment vs axis-aligned rectangle check
            x0, y0, x1, y1 = s.x, s.y, g.x, g.y
            if (y1 - y0) == 0:
                return False
            ts = [((w.center_y - w.thickness / 2) - y0) / (y1 - y0),
                  ((w.center_y + w.thickness / 2) - y0) / (y1 - y0)]
            for t in ts:
                if 0 <= t <= 1:
                    x = x0 + t * (x1 - x0)
                    if abs(x - w.center_x) <= w.length / 2:
                        return True
            return False

        rng = np.random.default_rng(9)
        hits = 0
        n = 300
        for _ in range(n):
            env = gen_region(region3_spec(), rng)
            if any(segment_hits_wall(env.start, env.goal, w)
                   for w in env.obstacles):
                hits += 1
        assert hits / n >= 0.9

    def test_generation_failure_raises(self):
        impossible = RegionSpec(kind=envgen.REGION_PILLAR_CLUSTERS,
                                area=(8.0, 8.0), spacing_min=6.0,
                                count_range=(30, 30), size_range=(0.5, 0.5),
                                separation_range=(3.0, 4.0))
        with pytest.raises(GenerationFailed):
            gen_privileged_env(np.random.default_rng(0), impossible)


class TestCurriculum:
    def test_weights_start_region1_only(self):
        assert CurriculumSchedule().weights(0.0) == (1.0, 0.0, 0.0)

    def test_weights_sum_to_one(self):
        sched = CurriculumSchedule()
        for p in np.linspace(0, 1, 33):
            w = sched.weights(float(p))
            assert sum(w) == pytest.approx(1.0)
            assert all(x >= 0 for x in w)

    def test_final_mix_even(self):
        w = CurriculumSchedule().weights(1.0)
        assert w == pytest.approx((1 / 3, 1 / 3, 1 / 3))

    def test_progress_zero_always_region1(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            env = sample_curriculum(CurriculumSchedule(), 0.0, rng)
            assert all(isinstance(o, Pillar) for o in env.obstacles)

    def test_empirical_mix_at_full_progress(self):
        # draw region indices through the same weighted choice the sampler uses
        sched = CurriculumSchedule()
        rng = np.random.default_rng(11)
        w = np.array(sched.weights(1.0))
        draws = rng.choice(3, size=10_000, p=w / w.sum())
        freq = np.bincount(draws, minlength=3) / 10_000
        assert np.all(np.abs(freq - 1 / 3) <= 0.03)

    def test_ramp_ordering(self):
        sched = CurriculumSchedule()
        w_early = sched.weights(0.3)
        assert w_early[1] > 0.0 and w_early[2] == 0.0  # panels before walls


class TestDensify:
    def test_identity(self):
        spec = region2_spec()
        assert densify(spec, 1.0) == spec

    def test_halves_spacing(self):
        spec = region2_spec()
        assert densify(spec, 2.0).spacing_min == pytest.approx(spec.spacing_min / 2)

    def test_direct_division(self):
        spec = RegionSpec(kind=envgen.REGION_PANELS, spacing_min=6.0)
        assert densify(spec, 4.0).spacing_min == pytest.approx(1.5)

    def test_default_specs_satisfy_solvability_margin(self):
        for spec in (envgen.privileged_spec(), region1_spec(), region2_spec(),
                     region3_spec()):
            assert spec.spacing_min > 2 * 1.25


class TestSolvability:
    def test_blocked_env_detected(self):
        # a wall sealing the whole corridor
        wall = Wall(0.0, 0.0, 60.0, 6.0, 0.5)
        env = type(gen_privileged_env(np.random.default_rng(0)))(
            [wall], Vec3(0, -5, 2), Vec3(0, 5, 2))
        assert not is_solvable(env)

    def test_open_env_solvable(self):
        env = gen_privileged_env(np.random.default_rng(12))
        assert is_solvable(env)

    def test_planner_confirms_generated_envs(self):
        # the motion planner is the ground-truth oracle for the generator
        from aeronav.planner import plan, voxelize

        rng = np.random.default_rng(13)
        makers = [lambda: gen_privileged_env(rng),
                  lambda: gen_region(region1_spec(), rng),
                  lambda: gen_region(region2_spec(), rng),
                  lambda: gen_region(region3_spec(), rng)]
        for make in makers:
            for _ in range(3):
                env = make()
                traj = plan(voxelize(env), env.start, env.goal, v_max=3.0,
                            heuristic_weight=2.0)
                assert traj.total_time > 0.0
