"""Cartesian force control through forward dynamics of a virtual twin.

Per control cycle a PD law regulates the gap between the desired and the
measured end-effector wrench; the regulated wrench drives a unit-mass twin
of the manipulator (qdd = H^-1 J^T f) whose double time integration yields
the next joint position command.  The twin is kinematically faithful but
dynamically fictitious, which is exactly what makes the scheme
robot-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .kinematics import ChainModel, NumericalError, forward_kinematics, geometric_jacobian, twin_dynamics
from .spatial import Transform, Twist, Wrench, relative_target, rotate_twist_to_ee

__all__ = [
    "ControllerConfig",
    "ControllerState",
    "pd_regulate",
    "twin_step",
    "compute_skill_input",
    "tare_sensor",
    "apply_bias",
    "scale_wrench",
]

_COND_LIMIT = 1e8          # H condition number above which we flag "degraded"


@dataclass
class ControllerConfig:
    kp: np.ndarray = field(default_factory=lambda: np.full(6, 2.1))
    kd: np.ndarray = field(default_factory=lambda: np.full(6, 0.001))
    dt: float = 0.008
    velocity_decay: float = 0.9       # per-cycle factor on the twin's joint velocity
    force_scale: float = 1.5
    torque_scale: float = 2.0
    max_joint_step: float = 0.02      # rad per cycle
    derivative_smoothing: float = 0.0 # one-pole low-pass on de/dt; 0 = off

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float).reshape(6)
        self.kd = np.asarray(self.kd, dtype=float).reshape(6)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.any(self.kp < 0):
            raise ValueError("kp must be non-negative")
        if not 0.0 <= self.velocity_decay <= 1.0:
            raise ValueError("velocity_decay must be in [0, 1]")
        if self.max_joint_step <= 0:
            raise ValueError("max_joint_step must be positive")
        if not 0.0 <= self.derivative_smoothing < 1.0:
            raise ValueError("derivative_smoothing must be in [0, 1)")


@dataclass
class ControllerState:
    q: np.ndarray
    qd_virtual: np.ndarray
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(6))
    error_rate: np.ndarray = field(default_factory=lambda: np.zeros(6))
    sensor_bias: np.ndarray = field(default_factory=lambda: np.zeros(6))
    clamped: bool = False             # last cycle hit the joint step limit
    clamped_time: float = 0.0         # continuous clamped duration [s]
    degraded: bool = False            # ill-conditioned H or persistent clamping

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.qd_virtual = np.asarray(self.qd_virtual, dtype=float).reshape(-1)
        self.prev_error = np.asarray(self.prev_error, dtype=float).reshape(6)
        self.sensor_bias = np.asarray(self.sensor_bias, dtype=float).reshape(6)

    @staticmethod
    def at_rest(q) -> "ControllerState":
        q = np.asarray(q, dtype=float).reshape(-1)
        return ControllerState(q=q.copy(), qd_virtual=np.zeros_like(q))


def pd_regulate(f_d: Wrench, f_s: Wrench, state: ControllerState,
                cfg: ControllerConfig) -> Wrench:
    """f_reg = kp*e + kd*de/dt with e = f_d - f_s, per Cartesian axis.

    ``f_s`` must already be bias-corrected and expressed in the
    end-effector frame.  Updates ``state.prev_error``.
    """
    e = f_d.as_array() - f_s.as_array()
    if not np.all(np.isfinite(e)):
        raise ValueError("non-finite wrench error")
    e_dot = (e - state.prev_error) / cfg.dt
    if cfg.derivative_smoothing > 0.0:
        a = cfg.derivative_smoothing
        e_dot = a * state.error_rate + (1.0 - a) * e_dot
    state.prev_error = e
    state.error_rate = e_dot
    out = cfg.kp * e + cfg.kd * e_dot
    return Wrench(out[:3], out[3:], f_d.frame)


def twin_step(chain: ChainModel, state: ControllerState, f_reg: Wrench,
              cfg: ControllerConfig) -> np.ndarray:
    """Advance the virtual twin one cycle; returns the joint command q_d.

    The regulated wrench (end-effector frame) is rotated to the base,
    mapped through J^T and H^-1 (solved from a Cholesky factorization,
    never an explicit inverse), then integrated twice with per-cycle
    velocity decay and a hard per-joint step clamp.
    """
    b_T_e, jac, h = twin_dynamics(chain, state.q)
    f_base = np.concatenate([b_T_e.rot @ f_reg.force, b_T_e.rot @ f_reg.torque])

    try:
        factor = cho_factor(h, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("virtual twin inertia factorization failed") from exc
    qdd = cho_solve(factor, jac.T @ f_base, check_finite=False)

    # cond(H) = cond(L)^2 >= (max diag / min diag)^2 of the Cholesky factor
    diag = np.abs(np.diag(factor[0]))
    if (diag.max() / diag.min()) ** 2 > _COND_LIMIT:
        state.degraded = True

    state.qd_virtual = cfg.velocity_decay * (state.qd_virtual + qdd * cfg.dt)
    step = state.qd_virtual * cfg.dt
    clipped = np.clip(step, -cfg.max_joint_step, cfg.max_joint_step)
    state.clamped = bool(np.any(clipped != step))
    state.clamped_time = state.clamped_time + cfg.dt if state.clamped else 0.0
    if state.clamped_time > 1.0:
        state.degraded = True
    state.q = state.q + clipped
    return state.q.copy()


def compute_skill_input(chain: ChainModel, q, qd, b_T_t: Transform,
                        f_d_prev: Wrench) -> np.ndarray:
    """19-dim skill seed: [relative target pose (7) | ee-frame twist (6) |
    previous wrench (6)], everything in the end-effector frame."""
    b_T_e = forward_kinematics(chain, q)
    _, feats = relative_target(b_T_e, b_T_t)
    twist6 = geometric_jacobian(chain, q) @ np.asarray(qd, dtype=float)
    ee_twist = rotate_twist_to_ee(b_T_e.rot.T, Twist(twist6[:3], twist6[3:], "b"))
    return np.concatenate([feats, ee_twist.as_array(), f_d_prev.as_array()])


def tare_sensor(raw: Wrench, state: ControllerState) -> None:
    """Capture the current raw reading as the zero reference."""
    state.sensor_bias = raw.as_array().copy()


def apply_bias(raw: Wrench, state: ControllerState) -> Wrench:
    out = raw.as_array() - state.sensor_bias
    return Wrench(out[:3], out[3:], raw.frame)


def scale_wrench(w: Wrench, cfg: ControllerConfig) -> Wrench:
    """Scale force and torque blocks without changing their directions."""
    if cfg.force_scale < 0 or cfg.torque_scale < 0:
        raise ValueError("wrench scales must be non-negative")
    return Wrench(w.force * cfg.force_scale, w.torque * cfg.torque_scale, w.frame)
