"""Unicycle dynamics, point-to-goal expert, and closed-loop rollouts.

State is (x, y, theta) with theta wrapped to [-pi, pi); controls are linear
and angular velocity (v, omega), integrated with explicit Euler.  The goal
and obstacle are both encoded as squared-distance measures: the goal is
reached when its measure drops to zero, the obstacle is violated when its
measure goes negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, make_dataset
from .network import Network, ShapeError, forward
from .predicate import barrier_value


class DivergedRollout(RuntimeError):
    """Simulation state became non-finite."""


def wrap_angle(theta: float) -> float:
    """Map an angle to [-pi, pi); values already in range pass through."""
    if -math.pi <= theta < math.pi:
        return theta
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t < 0:
        t += 2.0 * math.pi
    return t - math.pi


@dataclass(frozen=True)
class UnicycleState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])


@dataclass(frozen=True)
class ExpertGains:
    k_v: float = 0.5
    k_omega: float = 2.0
    v_max: float = 1.0
    omega_max: float = 2.0


@dataclass(frozen=True)
class Scenario:
    goal_center: tuple = (0.0, 0.0)
    goal_radius: float = 0.2
    obstacle_center: tuple = (-1.5, -3.0)
    obstacle_radius: float = 0.2
    init_lower: tuple = (-5.0, -5.0, 0.0)
    init_upper: tuple = (-3.0, -3.0, math.pi / 2.0)
    gamma: float = 1.0
    dt: float = 0.01
    horizon: int = 5000
    gains: ExpertGains = field(default_factory=ExpertGains)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.goal_radius <= 0 or self.obstacle_radius <= 0:
            raise ValueError("radii must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    def goal_value(self, state: UnicycleState) -> float:
        """Squared distance to the goal center minus the goal radius squared."""
        return barrier_value(self.goal_center, self.goal_radius, state.as_array())

    def safety_value(self, state: UnicycleState) -> float:
        """Squared distance to the obstacle minus its radius squared (h)."""
        return barrier_value(self.obstacle_center, self.obstacle_radius,
                             state.as_array())

    def to_dict(self) -> dict:
        return {
            "goal_center": list(self.goal_center),
            "goal_radius": self.goal_radius,
            "obstacle_center": list(self.obstacle_center),
            "obstacle_radius": self.obstacle_radius,
            "init_lower": list(self.init_lower),
            "init_upper": list(self.init_upper),
            "gamma": self.gamma,
            "dt": self.dt,
            "horizon": self.horizon,
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        known = {k: d[k] for k in (
            "goal_center", "goal_radius", "obstacle_center", "obstacle_radius",
            "init_lower", "init_upper", "gamma", "dt", "horizon") if k in d}
        for key in ("goal_center", "obstacle_center", "init_lower", "init_upper"):
            if key in known:
                known[key] = tuple(known[key])
        return Scenario(**known)


def step(state: UnicycleState, u: ControlInput, dt: float) -> UnicycleState:
    """One explicit Euler step of the unicycle model."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return UnicycleState(
        state.x + u.v * math.cos(state.theta) * dt,
        state.y + u.v * math.sin(state.theta) * dt,
        state.theta + u.omega * dt,
    )


def expert(state: UnicycleState, scenario: Scenario) -> ControlInput:
    """Proportional point-to-goal law: drive toward the goal center.

    Speed scales with distance and heading alignment (never negative), the
    turn rate with the bearing error; both saturate at the configured limits.
    """
    g = scenario.gains
    gx, gy = scenario.goal_center
    dx, dy = gx - state.x, gy - state.y
    d = math.hypot(dx, dy)
    alpha = wrap_angle(math.atan2(dy, dx) - state.theta)
    v = min(max(g.k_v * d * math.cos(alpha), 0.0), g.v_max)
    omega = min(max(g.k_omega * alpha, -g.omega_max), g.omega_max)
    return ControlInput(v, omega)


@dataclass
class Trajectory:
    states: np.ndarray    # (T+1, 3)
    controls: np.ndarray  # (T, 2)
    h_values: np.ndarray  # (T+1,)
    v_values: np.ndarray  # (T+1,) goal measure
    reached_goal: bool
    min_h: float
    steps: int

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x,y,theta,v,omega,h,V\n")
            for t in range(self.states.shape[0]):
                v, omega = (self.controls[t] if t < self.controls.shape[0]
                            else (float("nan"), float("nan")))
                cells = [str(t)] + [
                    repr(float(c)) for c in (*self.states[t], v, omega,
                                             self.h_values[t], self.v_values[t])
                ]
                fh.write(",".join(cells) + "\n")


def _policy_fn(policy, scenario: Scenario):
    if isinstance(policy, Network):
        if policy.input_dim != 3 or policy.output_dim != 2:
            raise ShapeError("policy network must map 3 state inputs to 2 controls")

        def fn(state):
            u = forward(policy, state.as_array())
            return ControlInput(float(u[0]), float(u[1]))

        return fn
    if callable(policy):
        return lambda state: policy(state, scenario)
    raise TypeError("policy must be a Network or a callable(state, scenario)")


def rollout(policy, scenario: Scenario, init: UnicycleState) -> Trajectory:
    """Simulate until the goal measure reaches zero or the horizon runs out."""
    fn = _policy_fn(policy, scenario)
    states = [init.as_array()]
    controls = []
    hs = [scenario.safety_value(init)]
    vs = [scenario.goal_value(init)]
    state = init
    reached = vs[0] <= 0.0
    t = 0
    while not reached and t < scenario.horizon:
        u = fn(state)
        state = step(state, u, scenario.dt)
        if not (math.isfinite(state.x) and math.isfinite(state.y)
                and math.isfinite(state.theta)):
            raise DivergedRollout(f"non-finite state at step {t + 1}")
        controls.append([u.v, u.omega])
        states.append(state.as_array())
        hs.append(scenario.safety_value(state))
        vs.append(scenario.goal_value(state))
        reached = vs[-1] <= 0.0
        t += 1
    return Trajectory(
        np.array(states), np.array(controls).reshape(len(controls), 2),
        np.array(hs), np.array(vs), bool(reached), float(np.min(hs)), t,
    )


def sample_init(scenario: Scenario, rng) -> UnicycleState:
    lo = np.asarray(scenario.init_lower, dtype=np.float64)
    hi = np.asarray(scenario.init_upper, dtype=np.float64)
    x = rng.uniform(lo, hi)
    return UnicycleState(float(x[0]), float(x[1]), float(x[2]))


def collect_imitation_data(scenario: Scenario, n_traj: int, seed: int,
                           stride: int = 1) -> Dataset:
    """Expert rollouts from uniform initial states, paired state/action rows.

    Every ``stride``-th visited state is kept.  Rows are flagged in the repair
    domain iff the state is outside the unsafe set (h >= 0); the expert
    ignores the obstacle, so the flag is computed, not assumed.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    rng = np.random.default_rng(seed)
    X, U = [], []
    for _ in range(n_traj):
        init = sample_init(scenario, rng)
        traj = rollout(expert, scenario, init)
        for t in range(0, traj.steps, stride):
            X.append(traj.states[t])
            U.append(traj.controls[t])
    X = np.array(X)
    U = np.array(U)
    flags = np.array([
        barrier_value(scenario.obstacle_center, scenario.obstacle_radius, x) >= 0.0
        for x in X
    ])
    return make_dataset(X, U, flags)
