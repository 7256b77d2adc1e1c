import math

import numpy as np
import pytest

from relurepair.controlsim import (ControlInput, DivergedRollout, Scenario,
                                   UnicycleState, collect_imitation_data,
                                   expert, rollout, sample_init, step,
                                   wrap_angle)
from relurepair.network import random_network


class TestStep:
    def test_euler_by_hand(self):
        s = step(UnicycleState(0.0, 0.0, 0.0), ControlInput(1.0, 0.5), 0.01)
        assert s.x == pytest.approx(0.01, abs=0)
        assert s.y == pytest.approx(0.0, abs=0)
        assert s.theta == pytest.approx(0.005, abs=0)

    def test_zero_control_fixed_point(self):
        s0 = UnicycleState(1.0, -2.0, 0.7)
        s1 = step(s0, ControlInput(0.0, 0.0), 0.1)
        assert (s1.x, s1.y, s1.theta) == (s0.x, s0.y, s0.theta)

    def test_theta_wraps(self):
        s = step(UnicycleState(0, 0, math.pi - 0.001), ControlInput(0.0, 10.0), 0.01)
        assert -math.pi <= s.theta < math.pi

    def test_dt_validation(self):
        with pytest.raises(ValueError):
            step(UnicycleState(0, 0, 0), ControlInput(0, 0), 0.0)

    def test_wrap_angle_range(self):
        for t in np.linspace(-12.0, 12.0, 101):
            w = wrap_angle(t)
            assert -math.pi <= w < math.pi
            assert abs(math.sin(w) - math.sin(t)) < 1e-12
            assert abs(math.cos(w) - math.cos(t)) < 1e-12


class TestExpert:
    def test_zero_speed_at_goal_center(self):
        sc = Scenario()
        u = expert(UnicycleState(0.0, 0.0, 1.2), sc)
        assert u.v == 0.0

    def test_facing_goal_drives_straight(self):
        sc = Scenario()
        u = expert(UnicycleState(-4.0, 0.0, 0.0), sc)
        assert u.omega == pytest.approx(0.0, abs=1e-12)
        assert u.v > 0.0

    def test_facing_away_clips_speed_and_saturates_turn(self):
        sc = Scenario()
        u = expert(UnicycleState(-4.0, 0.0, math.pi), sc)
        assert u.v == 0.0
        assert abs(u.omega) == sc.gains.omega_max


class TestRollout:
    def test_expert_reaches_goal(self):
        sc = Scenario()
        traj = rollout(expert, sc, UnicycleState(-4.0, -4.0, math.pi / 4))
        assert traj.reached_goal
        assert traj.steps <= 4000

    def test_zero_policy_stays_put(self):
        sc = Scenario(horizon=50)
        frozen = lambda state, scenario: ControlInput(0.0, 0.0)
        traj = rollout(frozen, sc, UnicycleState(-4.0, -4.0, 0.0))
        assert not traj.reached_goal
        assert np.allclose(traj.states[0], traj.states[-1])

    def test_init_inside_goal_reaches_immediately(self):
        sc = Scenario()
        traj = rollout(expert, sc, UnicycleState(0.1, 0.0, 0.0))
        assert traj.reached_goal
        assert traj.steps == 0

    def test_divergence_detected(self):
        sc = Scenario(horizon=10)
        bad = lambda state, scenario: ControlInput(float("inf"), 0.0)
        with pytest.raises(DivergedRollout):
            rollout(bad, sc, UnicycleState(-4.0, -4.0, 0.0))

    def test_network_policy_shape_guard(self):
        sc = Scenario()
        with pytest.raises(Exception):
            rollout(random_network([2, 4, 2], seed=0), sc, UnicycleState(0, 0, 0))

    def test_expert_goal_rate(self):
        sc = Scenario()
        rng = np.random.default_rng(0)
        reached = sum(
            rollout(expert, sc, sample_init(sc, rng)).reached_goal
            for _ in range(100)
        )
        assert reached >= 99

    def test_goal_measure_nearly_monotone_for_expert(self):
        sc = Scenario()
        rng = np.random.default_rng(1)
        for _ in range(5):
            traj = rollout(expert, sc, sample_init(sc, rng))
            diffs = np.diff(traj.v_values)
            # Euler overshoot is second order in dt
            assert np.max(diffs, initial=-1.0) <= sc.gains.v_max**2 * sc.dt**2 + 1e-12

    def test_csv_export(self, tmp_path):
        sc = Scenario(horizon=20)
        traj = rollout(expert, sc, UnicycleState(-4.0, -4.0, 0.0))
        path = tmp_path / "traj.csv"
        traj.save_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,x,y,theta,v,omega,h,V"
        assert len(lines) == traj.states.shape[0] + 1


class TestImitationData:
    def test_targets_are_expert_actions(self):
        sc = Scenario()
        data = collect_imitation_data(sc, 3, seed=4, stride=10)
        for i in range(0, len(data), 7):
            state = UnicycleState(*data.inputs[i])
            u = expert(state, sc)
            assert np.allclose(data.targets[i], [u.v, u.omega], atol=1e-12)

    def test_flags_match_safety_measure(self):
        sc = Scenario()
        data = collect_imitation_data(sc, 3, seed=5, stride=10)
        for i in range(len(data)):
            state = UnicycleState(*data.inputs[i])
            assert data.in_repair_domain[i] == (sc.safety_value(state) >= 0.0)

    def test_needs_at_least_one_trajectory(self):
        with pytest.raises(ValueError):
            collect_imitation_data(Scenario(), 0, seed=0)


def _barrier_filtered_expert(sc: Scenario):
    """Expert projected onto the barrier constraint row (minimal v cut)."""

    def policy(state, scenario):
        u = expert(state, scenario)
        h = scenario.safety_value(state)
        a = (2.0 * (state.x - scenario.obstacle_center[0]) * math.cos(state.theta)
             + 2.0 * (state.y - scenario.obstacle_center[1]) * math.sin(state.theta))
        if a * u.v + scenario.gamma * h < 0.0:
            v = scenario.gamma * h / (-a) if a < 0 else 0.0
            return ControlInput(max(0.0, min(u.v, v)), u.omega)
        return u

    return policy


class TestBarrierInvariance:
    def test_filtered_policy_keeps_h_nonnegative(self):
        # Empirical forward invariance at dt = 0.01: rollouts that start with
        # h > margin and satisfy the barrier row never dip below -1e-3.
        sc = Scenario(horizon=3000)
        policy = _barrier_filtered_expert(sc)
        rng = np.random.default_rng(6)
        tested = 0
        while tested < 100:
            x = rng.uniform(-3.0, 0.0)
            y = rng.uniform(-4.5, -1.5)
            theta = rng.uniform(-math.pi, math.pi)
            state = UnicycleState(x, y, theta)
            if sc.safety_value(state) < 0.05:
                continue
            traj = rollout(policy, sc, state)
            assert traj.min_h >= -1e-3
            tested += 1
