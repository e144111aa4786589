import math

import numpy as np
import pytest

from lanesafe.mpc import (ControlInput, MpcConfig, ObstaclePrediction,
                          plan_control, rollout)
from lanesafe.safety import GippsParams
from lanesafe.vehicle import Trajectory, VehicleState


def ego_state(x=0.0, y=0.0, v=20.0, heading=0.0):
    return VehicleState(id=0, x=x, y=y, v=v, a=0.0, heading=heading, lane=1,
                        length=5.0, width=1.8)


def straight_reference(state, cfg, v_ref=None, y_ref=None):
    n = cfg.horizon
    v_ref = state.v if v_ref is None else v_ref
    y_ref = state.y if y_ref is None else y_ref
    k = np.arange(n + 1, dtype=float)
    return Trajectory(t=k * cfg.dt, x=state.x + k * v_ref * cfg.dt,
                      y=np.full(n + 1, y_ref), v=np.full(n + 1, v_ref),
                      heading=np.zeros(n + 1))


def stationary_obstacle(x, n, length=5.0, width=1.8, y=0.0):
    traj = np.zeros((n, 3))
    traj[:, 0] = x
    traj[:, 1] = y
    return ObstaclePrediction(traj=traj, length=length, width=width)


GIPPS = GippsParams()


class TestRollout:
    def test_zero_controls_straight_line(self):
        state = ego_state(v=10.0)
        controls = [ControlInput(0.0, 0.0)] * 5
        traj = rollout(state, controls, dt=0.1, wheelbase=2.8)
        assert len(traj) == 6
        np.testing.assert_allclose(traj.x, np.arange(6) * 1.0)
        np.testing.assert_allclose(traj.y, 0.0)
        np.testing.assert_allclose(traj.v, 10.0)

    def test_constant_accel_euler_oracle(self):
        state = ego_state(v=0.0)
        controls = [ControlInput(2.0, 0.0)] * 3
        traj = rollout(state, controls, dt=0.1, wheelbase=2.8)
        # hand Euler: v_k+1 = v_k + 0.2, x moves with pre-update speed
        np.testing.assert_allclose(traj.v, [0.0, 0.2, 0.4, 0.6])
        np.testing.assert_allclose(traj.x, [0.0, 0.0, 0.02, 0.06])

    def test_speed_floor_no_reverse(self):
        state = ego_state(v=0.0)
        controls = [ControlInput(-3.0, 0.0)] * 4
        traj = rollout(state, controls, dt=0.1, wheelbase=2.8)
        np.testing.assert_array_equal(traj.v, 0.0)
        np.testing.assert_array_equal(traj.x, 0.0)

    def test_steering_oracle_one_step(self):
        state = ego_state(v=10.0)
        traj = rollout(state, [ControlInput(0.0, 0.05)], dt=0.1, wheelbase=2.8)
        assert traj.heading[1] == pytest.approx(
            (10.0 / 2.8) * math.tan(0.05) * 0.1)
        assert traj.y[1] == 0.0  # lateral motion starts one step later

    def test_halved_dt_consistency(self):
        state = ego_state(v=15.0)
        rng = np.random.default_rng(2)
        accel = np.clip(np.cumsum(rng.normal(0, 0.08, 30)), -2, 2)
        steer = 0.02 * np.sin(np.linspace(0, math.pi, 30))
        coarse = [ControlInput(float(a), float(s))
                  for a, s in zip(accel, steer)]
        fine = [c for c in coarse for _ in range(2)]
        t_coarse = rollout(state, coarse, dt=0.1, wheelbase=2.8)
        t_fine = rollout(state, fine, dt=0.05, wheelbase=2.8)
        end_c = np.array([t_coarse.x[-1], t_coarse.y[-1]])
        end_f = np.array([t_fine.x[-1], t_fine.y[-1]])
        dist = np.linalg.norm(end_c - end_f)
        path = np.linalg.norm(end_c - np.array([state.x, state.y]))
        assert dist < 0.01 * path


class TestPlanControl:
    def test_on_reference_near_zero_controls(self):
        cfg = MpcConfig()
        state = ego_state(v=20.0)
        ref = straight_reference(state, cfg)
        controls, diag = plan_control(state, ref, [], GIPPS, cfg)
        assert max(abs(c.accel) for c in controls) < 0.1
        assert max(abs(c.steer) for c in controls) < 0.01
        assert not diag.fallback

    def test_stopped_obstacle_ahead_brakes(self):
        cfg = MpcConfig()
        state = ego_state(v=20.0)
        ref = straight_reference(state, cfg)
        obstacle = stationary_obstacle(15.0, cfg.horizon)
        controls, diag = plan_control(state, ref, [obstacle], GIPPS, cfg)
        assert controls[0].accel < 0

    def test_far_obstacle_bit_identical_to_no_obstacle(self):
        cfg = MpcConfig()
        state = ego_state(v=20.0)
        ref = straight_reference(state, cfg)
        far = stationary_obstacle(1000.0, cfg.horizon)
        c_free, _ = plan_control(state, ref, [], GIPPS, cfg, seed=3)
        c_far, _ = plan_control(state, ref, [far], GIPPS, cfg, seed=3)
        assert c_free == c_far

    def test_bounds_respected_on_random_scenes(self):
        cfg = MpcConfig()
        rng = np.random.default_rng(9)
        for _ in range(10):
            state = ego_state(x=float(rng.uniform(-5, 5)),
                              y=float(rng.uniform(-1, 1)),
                              v=float(rng.uniform(5, 30)),
                              heading=float(rng.uniform(-0.05, 0.05)))
            ref = straight_reference(state, cfg, v_ref=20.0, y_ref=0.0)
            obstacles = []
            if rng.random() < 0.7:
                obstacles.append(stationary_obstacle(
                    float(rng.uniform(20, 120)), cfg.horizon,
                    y=float(rng.uniform(-1, 1))))
            controls, _ = plan_control(state, ref, obstacles, GIPPS, cfg,
                                       seed=int(rng.integers(100)))
            for c in controls:
                assert cfg.a_min <= c.accel <= cfg.a_max
                assert cfg.steer_min <= c.steer <= cfg.steer_max

    def test_cost_never_exceeds_warm_starts(self):
        cfg = MpcConfig()
        rng = np.random.default_rng(4)
        for _ in range(8):
            state = ego_state(y=float(rng.uniform(-2, 2)),
                              v=float(rng.uniform(5, 30)))
            ref = straight_reference(state, cfg, v_ref=20.0, y_ref=0.0)
            obstacles = [stationary_obstacle(float(rng.uniform(30, 200)),
                                             cfg.horizon)]
            _, diag = plan_control(state, ref, obstacles, GIPPS, cfg,
                                   seed=int(rng.integers(100)))
            assert diag.cost <= min(diag.warm_start_costs) + 1e-12

    def test_tracking_beats_uncontrolled_rollout(self):
        cfg = MpcConfig(w_slack=400.0)
        rng = np.random.default_rng(11)
        for _ in range(6):
            state = ego_state(y=float(rng.uniform(-1.5, 1.5)), v=18.0,
                              heading=float(rng.uniform(-0.03, 0.03)))
            ref = straight_reference(state, cfg, v_ref=18.0, y_ref=0.0)
            controls, _ = plan_control(state, ref, [], GIPPS, cfg)
            planned = rollout(state, controls, cfg.dt, cfg.wheelbase)
            coast = rollout(state, [ControlInput(0.0, 0.0)] * cfg.horizon,
                            cfg.dt, cfg.wheelbase)
            assert abs(planned.y[-1]) <= abs(coast.y[-1]) + 1e-9

    def test_determinism(self):
        cfg = MpcConfig()
        state = ego_state(y=0.7, v=22.0)
        ref = straight_reference(state, cfg, v_ref=20.0, y_ref=0.0)
        obstacle = stationary_obstacle(60.0, cfg.horizon)
        a, _ = plan_control(state, ref, [obstacle], GIPPS, cfg, seed=7)
        b, _ = plan_control(state, ref, [obstacle], GIPPS, cfg, seed=7)
        assert a == b

    def test_fallback_on_hopeless_scene(self):
        cfg = MpcConfig()
        state = ego_state(v=30.0)
        ref = straight_reference(state, cfg)
        wall = stationary_obstacle(8.0, cfg.horizon)
        controls, diag = plan_control(state, ref, [wall], GIPPS, cfg)
        assert diag.fallback
        assert all(c.accel == cfg.a_min and c.steer == 0.0 for c in controls)

    def test_short_reference_rejected(self):
        cfg = MpcConfig()
        state = ego_state()
        short = straight_reference(state, MpcConfig(horizon=10))
        with pytest.raises(ValueError):
            plan_control(state, short, [], GIPPS, cfg)

    def test_short_prediction_rejected(self):
        cfg = MpcConfig()
        state = ego_state()
        ref = straight_reference(state, cfg)
        stub = ObstaclePrediction(traj=np.zeros((5, 3)), length=5.0, width=1.8)
        with pytest.raises(ValueError):
            plan_control(state, ref, [stub], GIPPS, cfg)
