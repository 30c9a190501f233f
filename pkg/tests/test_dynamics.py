import math

import numpy as np
import pytest

from aeronav.core import Action, DroneState, SpeedLimits, Vec3
from aeronav.dynamics import (DT, ActuationNoise, Drone, DroneParams,
                              InvalidCommand, randomize_params, scale_drone,
                              step)

HOVER = DroneState(position=Vec3(0, 0, 2), velocity=Vec3(0, 0, 0), yaw=0.0,
                   body_rates=Vec3(0, 0, 0))
NO_NOISE = ActuationNoise.none()


def make_drone(state=HOVER, params=None, noise=NO_NOISE, seed=0):
    return Drone(state, params or DroneParams(), noise,
                 np.random.default_rng(seed))


class TestRandomizeParams:
    def test_zero_jitter_identity(self):
        p = DroneParams()
        assert randomize_params(p, NO_NOISE, 3) == p

    def test_mass_within_ten_percent(self):
        p = DroneParams()
        noise = ActuationNoise(param_jitter_frac=0.10)
        masses = [randomize_params(p, noise, s).mass for s in range(400)]
        assert all(0.6768 - 1e-9 <= m <= 0.8272 + 1e-9 for m in masses)
        assert min(masses) < 0.70 and max(masses) > 0.80  # spans the range

    def test_deterministic(self):
        p = DroneParams()
        noise = ActuationNoise(param_jitter_frac=0.10)
        assert randomize_params(p, noise, 42) == randomize_params(p, noise, 42)


class TestStep:
    def test_hover_fixed_point(self):
        drone = make_drone()
        out = drone.step(Action(0, 0, 0))
        s = out.next_state
        assert s.position == HOVER.position
        assert s.yaw == HOVER.yaw
        assert s.velocity.norm() == 0.0
        assert s.time_step == 1

    def test_first_order_velocity_convergence(self):
        params = DroneParams(v_tracking_tau=0.3)
        drone = make_drone(params=params)
        for _ in range(120):
            drone.step(Action(2.0, 0.0, 0.0))
        speed = drone.state.velocity.norm()
        assert speed == pytest.approx(2.0, abs=1e-6)

    def test_error_below_one_percent_after_five_tau(self):
        params = DroneParams(v_tracking_tau=0.3)
        for cmd in (Action(1.5, 0.0, 0.0), Action(0.8, 0.5, 0.0)):
            drone = make_drone(params=params)
            n = int(math.ceil(5 * 0.3 / DT))
            for _ in range(n):
                drone.step(cmd)
            v_des = math.hypot(cmd.v_x, cmd.v_z)
            err = abs(drone.state.velocity.norm() - v_des)
            assert err < 0.01 * v_des

    def test_lag_queue_semantics(self):
        noise = ActuationNoise(0.0, 0.0, (3, 3))
        drone = make_drone(noise=noise)
        for k in range(3):
            out = drone.step(Action(2.0, 0.0, 0.0))
            assert out.applied_action == Action(0.0, 0.0, 0.0)
            assert drone.state.velocity.norm() == 0.0
        out = drone.step(Action(2.0, 0.0, 0.0))
        assert out.applied_action == Action(2.0, 0.0, 0.0)
        assert drone.state.velocity.norm() > 0.0

    def test_determinism(self):
        noise = ActuationNoise(0.05, 0.0, (0, 0))
        a = make_drone(noise=noise, seed=9)
        b = make_drone(noise=noise, seed=9)
        for _ in range(50):
            sa = a.step(Action(1.0, 0.2, 0.3)).next_state
            sb = b.step(Action(1.0, 0.2, 0.3)).next_state
            assert sa == sb

    def test_speed_bounded_by_command_plus_accel(self):
        rng = np.random.default_rng(11)
        params = DroneParams()
        a_max = params.effective_accel_limit()
        drone = make_drone(params=params)
        for _ in range(300):
            cmd = Action(rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-1, 1))
            prev_speed = drone.state.velocity.norm()
            drone.step(cmd)
            cmd_speed = math.hypot(cmd.v_x, cmd.v_z)
            bound = max(cmd_speed, prev_speed) + a_max * DT + 1e-9
            assert drone.state.velocity.norm() <= bound

    def test_invalid_command_raises(self):
        with pytest.raises(InvalidCommand):
            step(HOVER, Action(5.0, 0.0, 0.0), DroneParams(), NO_NOISE, DT,
                 np.random.default_rng(0), limits=SpeedLimits(3.0, 1.0, 1.0))

    def test_yaw_rate_tracking(self):
        drone = make_drone()
        for _ in range(60):
            drone.step(Action(0.0, 0.0, 0.8))
        assert drone.state.body_rates.z == pytest.approx(0.8, abs=1e-3)

    def test_heading_convention_plus_y_at_zero_yaw(self):
        drone = make_drone()
        for _ in range(30):
            drone.step(Action(1.0, 0.0, 0.0))
        s = drone.state.position
        assert s.y > 1.0 and abs(s.x) < 1e-9

    def test_movement_noise_within_fraction(self):
        noise = ActuationNoise(0.05, 0.0, (0, 0))
        drone = make_drone(noise=noise, seed=3)
        prev = drone.state
        for _ in range(200):
            out = drone.step(Action(2.0, 0.0, 0.0))
            v = out.next_state.velocity.as_array()
            disp = out.next_state.position.as_array() - prev.position.as_array()
            ideal = v * DT
            mask = np.abs(ideal) > 1e-12
            ratio = disp[mask] / ideal[mask]
            assert np.all(np.abs(ratio - 1.0) <= 0.05 + 1e-9)
            prev = out.next_state


class TestScaleDrone:
    def test_identity(self):
        p = DroneParams()
        assert scale_drone(p, 1.0) == p

    def test_scale_four(self):
        p = scale_drone(DroneParams(), 4.0)
        assert p.mass == pytest.approx(3.008)
        assert p.thrust_scale == pytest.approx(4.0)
        assert p.v_tracking_tau == pytest.approx(0.3 * 2.0)

    def test_scale_ten_matches_testbed_weight(self):
        p = scale_drone(DroneParams(), 10.0)
        assert p.mass == pytest.approx(7.52)

    def test_thrust_to_weight_preserved(self):
        p0 = DroneParams()
        p = scale_drone(p0, 6.0)
        assert p.effective_accel_limit() == pytest.approx(
            p0.effective_accel_limit())
