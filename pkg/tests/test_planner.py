import math

import numpy as np
import pytest

from aeronav.core import Environment, Pillar, Vec3, Wall
from aeronav.planner import (EmptyTrajectory, GoalOccupied, GridTooLarge,
                             NoPath, OptimalTrajectory, StartOccupied,
                             nearest_trajectory_distance, plan,
                             save_trajectory_csv, load_trajectory_csv,
                             voxelize)


def empty_env(dist=20.0):
    return Environment([], Vec3(0, 0, 2), Vec3(0, dist, 2))


class TestVoxelize:
    def test_empty_env_no_occupancy(self):
        grid = voxelize(empty_env())
        assert grid.occupied.sum() == 0

    def test_pillar_inflated_cell_count(self):
        # exact offset-solid volume: lateral shell + cap cylinder + cap rim
        r, d, h = 0.5, 1.25, 6.0
        env = Environment([Pillar(0, 0, r, h)], Vec3(0, -10, 2), Vec3(0, 10, 2))
        grid = voxelize(env)
        v_lateral = math.pi * (r + d) ** 2 * h
        v_cap = math.pi * r * r * d
        v_rim = 2 * math.pi * (math.pi * d * d / 4) * (r + 4 * d / (3 * math.pi))
        expected = (v_lateral + v_cap + v_rim) / grid.resolution ** 3
        count = grid.occupied.sum()
        assert abs(count - expected) / expected <= 0.15

    def test_inflation_threshold_exact(self):
        env = Environment([Pillar(0, 0, 0.5, 6.0)], Vec3(0, -10, 2), Vec3(0, 10, 2))
        grid = voxelize(env)
        assert grid.contains_inflated((0.5 + 1.24, 0.0, 2.0))
        assert not grid.contains_inflated((0.5 + 1.26, 0.0, 2.0))

    def test_grid_budget(self):
        with pytest.raises(GridTooLarge):
            voxelize(empty_env(), max_cells=1000)


class TestPlan:
    def test_empty_grid_time_near_bang_bang(self):
        dist = 20.0
        v_max, a_max, tau = 3.0, 3.0, 0.4
        grid = voxelize(empty_env(dist))
        traj = plan(grid, Vec3(0, 0, 2), Vec3(0, dist, 2), v_max=v_max,
                    a_max=a_max, rho_time=200.0, heuristic_weight=1.0,
                    relax_on_failure=False)
        # bang-bang oracle at the lattice's reachable cruise speed: inputs
        # {-a, 0, +a} over tau quantize velocity to multiples of a*tau
        v_eff = a_max * tau * math.floor(v_max / (a_max * tau))
        d_eff = dist - 1.0  # goal tolerance
        t_acc = v_eff / a_max
        t_bb = t_acc + (d_eff - 0.5 * a_max * t_acc ** 2) / v_eff
        assert traj.total_time >= t_bb * 0.95
        assert traj.total_time <= t_bb * 1.10 + tau

    def test_goal_equals_start(self):
        grid = voxelize(empty_env())
        traj = plan(grid, Vec3(0, 0, 2), Vec3(0, 0, 2))
        assert len(traj) == 1 and traj.total_time == 0.0

    def test_single_pillar_detour_collision_free(self):
        env = Environment([Pillar(0, 8, 0.6, 6.0)], Vec3(0, 0, 2), Vec3(0, 16, 2))
        grid = voxelize(env)
        traj = plan(grid, env.start, env.goal, v_max=3.0)
        for p in traj.positions:
            assert env.min_distance(*p) > 1.25

    def test_trajectory_sample_spacing(self):
        grid = voxelize(empty_env())
        traj = plan(grid, Vec3(0, 0, 2), Vec3(0, 20, 2), v_max=3.0)
        steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
        assert np.all(steps <= 3.0 * 0.085 + 1e-9)

    def test_determinism(self):
        env = Environment([Pillar(0.3, 8, 0.6, 6.0)], Vec3(0, 0, 2), Vec3(0, 16, 2))
        grid = voxelize(env)
        t1 = plan(grid, env.start, env.goal)
        t2 = plan(grid, env.start, env.goal)
        assert np.array_equal(t1.positions, t2.positions)
        assert t1.total_time == t2.total_time

    def test_rho_time_monotonicity(self):
        env = Environment([Pillar(0.4, 7, 0.5, 6.0)], Vec3(0, 0, 2), Vec3(0, 14, 2))
        grid = voxelize(env)
        times = [plan(grid, env.start, env.goal, rho_time=rho,
                      heuristic_weight=1.0, relax_on_failure=False).total_time
                 for rho in (2.0, 10.0, 40.0)]
        assert times[1] <= times[0] + 1e-9
        assert times[2] <= times[1] + 1e-9

    def test_start_goal_occupied(self):
        env = Environment([Pillar(0, 0, 0.6, 6.0)], Vec3(0, -10, 2), Vec3(0, 10, 2))
        grid = voxelize(env)
        with pytest.raises(StartOccupied):
            plan(grid, Vec3(0.2, 0, 2), Vec3(0, 10, 2))
        with pytest.raises(GoalOccupied):
            plan(grid, Vec3(0, -10, 2), Vec3(0.2, 0.3, 2))

    def test_no_path_raises(self):
        # box the start in completely
        walls = [Wall(0, 3, 8, 8, 0.4), Wall(0, -3, 8, 8, 0.4)]
        env = Environment(walls + [Pillar(3.2, 0, 1.2, 8), Pillar(-3.2, 0, 1.2, 8)],
                          Vec3(0, 0, 2), Vec3(0, 14, 2), bounds_margin=2.0)
        grid = voxelize(env)
        with pytest.raises(NoPath):
            plan(grid, env.start, env.goal, max_expansions=4000,
                 relax_on_failure=False)

    def test_z_band_respected(self):
        grid = voxelize(empty_env())
        traj = plan(grid, Vec3(0, 0, 2), Vec3(0, 20, 5.5), v_max=3.0)
        assert np.all(traj.positions[:, 2] >= 1.0 - 1e-6)
        assert np.all(traj.positions[:, 2] <= 6.0 + 1e-6)


class TestNearestDistance:
    def make_traj(self):
        times = np.arange(0.0, 1.0, 0.085)
        positions = np.stack([np.zeros_like(times), times * 3.0,
                              np.full_like(times, 2.0)], axis=1)
        return OptimalTrajectory(times=times, positions=positions,
                                 total_time=1.0, total_squared_jerk=0.0)

    def test_exact_sample_is_zero(self):
        traj = self.make_traj()
        p = Vec3(*traj.positions[3])
        assert nearest_trajectory_distance(p, traj) == 0.0

    def test_offset_distance(self):
        traj = self.make_traj()
        assert nearest_trajectory_distance(Vec3(5.0, 0.0, 2.0), traj) == \
            pytest.approx(5.0)

    def test_minimum_property(self):
        traj = self.make_traj()
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = Vec3(*rng.uniform([-5, -5, 0], [5, 8, 5]))
            d = nearest_trajectory_distance(q, traj)
            per_sample = np.linalg.norm(traj.positions - q.as_array(), axis=1)
            assert d <= per_sample.min() + 1e-12

    def test_empty_raises(self):
        traj = OptimalTrajectory(times=np.array([]), positions=np.zeros((0, 3)),
                                 total_time=0.0, total_squared_jerk=0.0)
        with pytest.raises(EmptyTrajectory):
            nearest_trajectory_distance(Vec3(0, 0, 0), traj)


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        grid = voxelize(empty_env())
        traj = plan(grid, Vec3(0, 0, 2), Vec3(0, 20, 2))
        path = tmp_path / "traj.csv"
        save_trajectory_csv(traj, path)
        loaded = load_trajectory_csv(path)
        assert np.allclose(loaded.positions, traj.positions, atol=1e-6)
        assert loaded.total_time == pytest.approx(traj.total_time, abs=1e-6)
