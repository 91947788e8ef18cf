"""Skill evaluation: in-sim rollouts, robot-coupled execution, offset robustness.

Rollouts replay the training-time conditions: the model is seeded from the
current object-relative state, unrolls a full wrench sequence, and the
sequence is executed before re-seeding.  Robot-coupled runs nest three
rates: controller cycles, wrench setpoint advances, and sequence refreshes.
Scoring always uses the ground-truth goal; a corrupted target estimate only
ever enters the model's input features.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controller import (
    ControllerConfig,
    ControllerState,
    apply_bias,
    compute_skill_input,
    pd_regulate,
    scale_wrench,
    tare_sensor,
    twin_step,
)
from .kinematics import ChainModel, NumericalError, forward_kinematics, geometric_jacobian
from .model import LstmModel, predict_sequence
from .sim import BodyState, Scene, collide, coupled_sensor_wrench, sim_step
from .spatial import (
    Transform,
    Twist,
    Wrench,
    pose7,
    quat_from_axis_angle,
    quat_to_mat,
    relative_target,
    rotvec_from_mat,
)

__all__ = [
    "RolloutConfig",
    "LogStep",
    "RolloutLog",
    "OffsetTrial",
    "rollout_object",
    "rollout_robot",
    "park_to_pose",
    "eval_offsets",
    "cumulative_histogram",
    "report_rollouts",
    "report_offsets",
    "has_peak_drop_signature",
    "trial_rng",
    "default_placement",
]


@dataclass
class RolloutConfig:
    serve_hz: float = 50.0        # wrench setpoint rate fed to the simulator
    horizon: int | None = None    # predictions per sequence (defaults to model.unroll)
    stall_window: float = 5.0     # [s] without progress -> stuck
    stall_progress: float = 0.001 # [m]
    timeout: float = 120.0        # [s] sim time
    setpoint_dt: float = 0.05     # robot mode: f_d advance period [s]
    window_time: float = 2.5      # robot mode: one sequence per this period [s]
    # robot mode refreshes sequences only every window_time, so hesitation
    # spans several windows before the model commits; stall detection gets
    # a proportionally longer horizon there
    stall_window_robot: float = 12.0


@dataclass
class LogStep:
    t: float
    distance: float
    rotation_error: float
    abs_force: float
    abs_torque: float
    wrench6: np.ndarray
    pose7: np.ndarray


@dataclass
class RolloutLog:
    steps: list[LogStep]
    outcome: str                  # success | stuck | timeout
    config: dict
    degraded: bool = False

    @property
    def final_distance(self) -> float:
        return self.steps[-1].distance if self.steps else math.inf


@dataclass
class OffsetTrial:
    lin_offset: float
    rot_offset: float
    seed: int
    final_distance: float
    outcome: str                  # success | near_miss | fail (by distance class)


class _StallTracker:
    def __init__(self, cfg: RolloutConfig, d0: float, window: float | None = None):
        self.best = d0
        self.since = 0.0
        self.window = window if window is not None else cfg.stall_window
        self.progress = cfg.stall_progress

    def stalled(self, t: float, dist: float) -> bool:
        if dist < self.best - self.progress:
            self.best = dist
            self.since = t
        return (t - self.since) > self.window


def _object_seed(state: BodyState, goal_estimate: Transform, f_prev: Wrench) -> np.ndarray:
    _, feats = relative_target(state.pose, goal_estimate)
    return np.concatenate([feats, state.twist.as_array(), f_prev.as_array()])


def rollout_object(model: LstmModel, scene: Scene, start: Transform,
                   cfg: RolloutConfig | None = None,
                   goal_estimate: Transform | None = None) -> RolloutLog:
    """Steer the free object with the model's wrench sequences.

    Each sequence is unrolled once from the current state, then every
    prediction is held for one serving interval of simulation.
    """
    cfg = cfg or RolloutConfig()
    goal_estimate = goal_estimate if goal_estimate is not None else scene.goal
    horizon = cfg.horizon or model.unroll
    steps_per_serve = max(1, round(1.0 / (cfg.serve_hz * scene.sim_dt)))

    state = BodyState.at_rest(start)
    f_prev = Wrench.zero("object")
    stall = _StallTracker(cfg, scene.distance_to_goal(start))
    steps: list[LogStep] = []
    outcome = "timeout"
    t = 0.0

    def log_step(w: Wrench):
        steps.append(LogStep(
            t=t,
            distance=scene.distance_to_goal(state.pose),
            rotation_error=scene.rotation_error(state.pose),
            abs_force=float(np.linalg.norm(w.force)),
            abs_torque=float(np.linalg.norm(w.torque)),
            wrench6=w.as_array(),
            pose7=pose7(state.pose),
        ))

    if scene.is_success(state.pose):
        log_step(f_prev)
        return RolloutLog(steps, "success", {"mode": "object"})

    done = False
    while not done:
        seq = predict_sequence(model, _object_seed(state, goal_estimate, f_prev), horizon)
        for w in seq:
            log_step(w)
            wrench = Wrench(w.force, w.torque, "object")
            for _ in range(steps_per_serve):
                state, _, _ = sim_step(scene, state, wrench, scene.sim_dt)
            t += steps_per_serve * scene.sim_dt
            f_prev = w
            dist = scene.distance_to_goal(state.pose)
            if scene.is_success(state.pose):
                outcome, done = "success", True
            elif stall.stalled(t, dist):
                outcome, done = "stuck", True
            elif t >= cfg.timeout:
                outcome, done = "timeout", True
            if done:
                break
    log_step(f_prev)
    return RolloutLog(steps, outcome, {"mode": "object", "serve_hz": cfg.serve_hz,
                                       "horizon": horizon})


# ---------------------------------------------------------------------------
# robot-coupled execution
# ---------------------------------------------------------------------------

def park_to_pose(chain: ChainModel, q0, target: Transform,
                 ctrl: ControllerConfig | None = None,
                 k_lin: float = 400.0, k_rot: float = 80.0,
                 tol_lin: float = 1e-4, tol_rot: float = 1e-3,
                 max_time: float = 30.0) -> np.ndarray:
    """Drive the twin contact-free to a target pose (forward-dynamics IK)."""
    ctrl = ctrl or ControllerConfig()
    state = ControllerState.at_rest(q0)
    cycles = int(max_time / ctrl.dt)
    for _ in range(cycles):
        b_T_e = forward_kinematics(chain, state.q)
        dp = target.trans - b_T_e.trans
        drot = rotvec_from_mat(target.rot @ b_T_e.rot.T)
        if np.linalg.norm(dp) < tol_lin and np.linalg.norm(drot) < tol_rot:
            return state.q
        f_base = np.concatenate([k_lin * dp, k_rot * drot])
        f_e = Wrench(b_T_e.rot.T @ f_base[:3], b_T_e.rot.T @ f_base[3:], "e")
        twin_step(chain, state, f_e, ctrl)
    raise NumericalError(
        f"park did not converge to the start pose within {max_time}s of twin time")


def default_placement(chain_name: str) -> Transform:
    """Scene origin in the robot base frame for the bundled chains."""
    placements = {
        "elbow_a": Transform(np.eye(3), [0.70, 0.0, 0.05], "b", "world"),
        "elbow_b": Transform(np.eye(3), [0.55, 0.0, 0.05], "b", "world"),
    }
    try:
        return placements[chain_name]
    except KeyError:
        raise ValueError(f"no default placement for chain {chain_name!r}") from None


def default_home(chain_name: str) -> np.ndarray | None:
    """Elbow-up home configurations the park servo starts from."""
    homes = {
        "elbow_a": np.array([0.0, -0.6, 1.2, -0.6, 1.2, 0.0]),
        "elbow_b": np.array([0.0, 0.5, 0.7, 0.0, 0.5, 0.0]),
    }
    return homes.get(chain_name)


def rollout_robot(model: LstmModel, chain: ChainModel, ctrl_cfg: ControllerConfig,
                  scene: Scene, target_estimate: Transform | None = None,
                  cfg: RolloutConfig | None = None,
                  placement: Transform | None = None,
                  start: Transform | None = None,
                  q_home=None) -> RolloutLog:
    """Execute the skill through the Cartesian force controller.

    ``scene`` and the optional ``start`` pose are given in the scene frame;
    ``placement`` maps them into the robot base.  The object is rigidly
    attached to the end effector (the frames coincide); contacts feed back
    as the sensor wrench.
    """
    cfg = cfg or RolloutConfig()
    placement = placement if placement is not None else default_placement(chain.name)
    scene_b = scene.transformed(placement)
    target_est = target_estimate if target_estimate is not None else scene_b.goal
    horizon = cfg.horizon or model.unroll

    # park at the requested start (default: just above the entrance), object
    # attached, before engaging the skill
    if start is None:
        start_pose = Transform(
            scene_b.goal.rot,
            scene_b.entrance_point - scene_b.insertion_axis * 0.03,
            "b", "e")
    else:
        start_pose = Transform(placement.rot @ start.rot,
                               placement.rot @ start.trans + placement.trans,
                               "b", "e")
    if q_home is None:
        q_home = default_home(chain.name)
    q_home = np.zeros(chain.dof) if q_home is None else np.asarray(q_home, float)
    q0 = park_to_pose(chain, q_home, start_pose, ctrl_cfg)

    ctrl = ControllerState.at_rest(q0)
    body = _coupled_body(chain, ctrl)
    tare_sensor(coupled_sensor_wrench(collide(scene_b, body.pose), body, scene_b), ctrl)

    dt = ctrl_cfg.dt
    cycles_per_setpoint = cfg.setpoint_dt / dt
    setpoints_per_window = int(round(cfg.window_time / cfg.setpoint_dt))
    stall = _StallTracker(cfg, scene_b.distance_to_goal(body.pose),
                          window=cfg.stall_window_robot)
    steps: list[LogStep] = []
    outcome = "timeout"
    seq: list[Wrench] = []
    f_prev = Wrench.zero("e")
    f_d = Wrench.zero("e")

    n_cycles = int(cfg.timeout / dt)
    last_setpoint = -1
    t = 0.0
    for i in range(n_cycles):
        t = i * dt
        setpoint_idx = int(t / cfg.setpoint_dt + 1e-9)
        if setpoint_idx != last_setpoint:
            within = setpoint_idx % setpoints_per_window
            if within == 0 or not seq:
                seed = compute_skill_input(chain, ctrl.q, ctrl.qd_virtual,
                                           target_est, f_prev)
                seq = predict_sequence(model, seed, horizon)
            f_model = seq[min(within, len(seq) - 1)]
            f_prev = f_model
            f_d = scale_wrench(f_model, ctrl_cfg)
            last_setpoint = setpoint_idx
            steps.append(LogStep(
                t=t,
                distance=scene_b.distance_to_goal(body.pose),
                rotation_error=scene_b.rotation_error(body.pose),
                abs_force=float(np.linalg.norm(f_model.force)),
                abs_torque=float(np.linalg.norm(f_model.torque)),
                wrench6=f_model.as_array(),
                pose7=pose7(body.pose),
            ))

        contacts = collide(scene_b, body.pose)
        f_s = apply_bias(coupled_sensor_wrench(contacts, body, scene_b), ctrl)
        f_reg = pd_regulate(f_d, f_s, ctrl, ctrl_cfg)
        twin_step(chain, ctrl, f_reg, ctrl_cfg)
        body = _coupled_body(chain, ctrl)

        dist = scene_b.distance_to_goal(body.pose)
        if scene_b.is_success(body.pose):
            outcome = "success"
            break
        if stall.stalled(t, dist):
            outcome = "stuck"
            break

    steps.append(LogStep(
        t=t,
        distance=scene_b.distance_to_goal(body.pose),
        rotation_error=scene_b.rotation_error(body.pose),
        abs_force=float(np.linalg.norm(f_d.force)),
        abs_torque=float(np.linalg.norm(f_d.torque)),
        wrench6=f_d.as_array(),
        pose7=pose7(body.pose),
    ))
    return RolloutLog(steps, outcome,
                      {"mode": "robot", "chain": chain.name,
                       "cycles_per_setpoint": cycles_per_setpoint,
                       "setpoints_per_window": setpoints_per_window},
                      degraded=ctrl.degraded)


def _coupled_body(chain: ChainModel, ctrl: ControllerState) -> BodyState:
    """Object slaved to the end effector; twist from the twin's joint velocity."""
    b_T_e = forward_kinematics(chain, ctrl.q)
    twist_b = geometric_jacobian(chain, ctrl.q) @ ctrl.qd_virtual
    pose = Transform(b_T_e.rot, b_T_e.trans, b_T_e.from_frame, "object")
    return BodyState(pose, Twist(b_T_e.rot.T @ twist_b[:3],
                                 b_T_e.rot.T @ twist_b[3:], "object"))


# ---------------------------------------------------------------------------
# offset robustness
# ---------------------------------------------------------------------------

def trial_rng(global_seed: int, index: int) -> np.random.Generator:
    """Deterministic per-trial generator derived from (seed, trial index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((global_seed, index))))


def _unit_vec(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
    return v / n


def eval_offsets(model: LstmModel, scene: Scene, margin_lin: float, margin_rot: float,
                 trials: int, global_seed: int,
                 cfg: RolloutConfig | None = None,
                 start_lin: float = 0.14, start_ang: float = 0.35,
                 near_miss_factor: float = 10.0,
                 chain: ChainModel | None = None,
                 ctrl_cfg: ControllerConfig | None = None,
                 ) -> tuple[list[OffsetTrial], list[RolloutLog]]:
    """Corrupt the target estimate per trial, run a rollout, classify by the
    final distance to the TRUE goal."""
    from .sim import random_start

    out: list[OffsetTrial] = []
    logs: list[RolloutLog] = []
    for k in range(trials):
        rng = trial_rng(global_seed, k)
        lin = rng.uniform(0.0, margin_lin)
        rot = rng.uniform(0.0, margin_rot)
        goal_est = Transform(
            scene.goal.rot @ quat_to_mat(quat_from_axis_angle(_unit_vec(rng), rot)),
            scene.goal.trans + lin * _unit_vec(rng),
            scene.goal.from_frame, "object")
        start = random_start(scene, rng, start_lin, start_ang)
        if chain is None:
            log = rollout_object(model, scene, start, cfg, goal_estimate=goal_est)
        else:
            placement = default_placement(chain.name)
            est_b = Transform(placement.rot @ goal_est.rot,
                              placement.rot @ goal_est.trans + placement.trans,
                              "b", "object")
            log = rollout_robot(model, chain, ctrl_cfg or ControllerConfig(),
                                scene, target_estimate=est_b, cfg=cfg)
        final = log.final_distance
        if final < scene.clearance_lin:
            outcome = "success"
        elif final < near_miss_factor * scene.clearance_lin:
            outcome = "near_miss"
        else:
            outcome = "fail"
        out.append(OffsetTrial(lin, rot, k, final, outcome))
        logs.append(log)
    return out, logs


def cumulative_histogram(trials: list[OffsetTrial], bins: int = 30,
                         max_distance: float | None = None):
    """(edge, count of trials whose final distance >= edge); right-to-left sum."""
    if not trials:
        raise ValueError("no trials to histogram")
    finals = np.array([t.final_distance for t in trials])
    top = max_distance if max_distance is not None else max(float(finals.max()), 1e-6)
    edges = np.linspace(0.0, top, bins)
    counts = [(float(e), int(np.sum(finals >= e))) for e in edges]
    return counts


# ---------------------------------------------------------------------------
# signature detection and reports
# ---------------------------------------------------------------------------

def has_peak_drop_signature(log: RolloutLog, scene: Scene,
                            smooth: int = 5, drop_ratio: float = 0.6,
                            band: tuple[float, float] = (0.4, 6.0)) -> bool:
    """Force magnitude rises to a peak near the socket entrance, then drops.

    ``band`` bounds the admissible peak location as multiples of the
    entrance distance (distance from entrance plane to goal).
    """
    if len(log.steps) < 2 * smooth:
        return False
    f = np.array([s.abs_force for s in log.steps])
    d = np.array([s.distance for s in log.steps])
    kernel = np.ones(smooth) / smooth
    f_s = np.convolve(f, kernel, mode="valid")
    d_s = d[smooth - 1:]
    k = int(np.argmax(f_s))
    d_peak = d_s[k]
    entrance = scene.entrance_depth
    if not (band[0] * entrance <= d_peak <= band[1] * entrance):
        return False
    after = f_s[k:][d_s[k:] < 0.5 * entrance]
    if after.size == 0:
        return False
    return bool(after.min() <= drop_ratio * f_s[k])


def save_rollout_logs(logs: list[RolloutLog], path) -> Path:
    """One JSON object per line per rollout; re-ingestable by the reporter."""
    import json

    path = Path(path)
    with open(path, "w") as fh:
        for lg in logs:
            fh.write(json.dumps({
                "outcome": lg.outcome,
                "config": lg.config,
                "degraded": lg.degraded,
                "steps": [{"t": s.t, "d": s.distance, "r": s.rotation_error,
                           "w": [float(x) for x in s.wrench6],
                           "p": [float(x) for x in s.pose7]} for s in lg.steps],
            }, sort_keys=True) + "\n")
    return path


def load_rollout_logs(path) -> list[RolloutLog]:
    import json

    logs = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            steps = [LogStep(t=s["t"], distance=s["d"], rotation_error=s["r"],
                             abs_force=float(np.linalg.norm(s["w"][:3])),
                             abs_torque=float(np.linalg.norm(s["w"][3:])),
                             wrench6=np.array(s["w"]), pose7=np.array(s["p"]))
                     for s in doc["steps"]]
            logs.append(RolloutLog(steps, doc["outcome"], doc["config"],
                                   degraded=doc.get("degraded", False)))
    return logs


def save_offset_trials(trials: list[OffsetTrial], path) -> Path:
    import json

    path = Path(path)
    with open(path, "w") as fh:
        for t in trials:
            fh.write(json.dumps({"lin": t.lin_offset, "rot": t.rot_offset,
                                 "seed": t.seed, "final": t.final_distance,
                                 "outcome": t.outcome}, sort_keys=True) + "\n")
    return path


def load_offset_trials(path) -> list[OffsetTrial]:
    import json

    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            out.append(OffsetTrial(doc["lin"], doc["rot"], doc["seed"],
                                   doc["final"], doc["outcome"]))
    return out


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def report_rollouts(logs: list[RolloutLog], out_dir, svg: bool = True) -> list[Path]:
    """force/torque vs distance CSVs (and SVG plots when matplotlib exists)."""
    if not logs or all(not lg.steps for lg in logs):
        raise ValueError("no rollout data to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    force_rows = [(i, s.distance, s.abs_force)
                  for i, lg in enumerate(logs) for s in lg.steps]
    torque_rows = [(i, s.distance, s.abs_torque)
                   for i, lg in enumerate(logs) for s in lg.steps]
    files = [
        _write_csv(out_dir / "force_vs_distance.csv",
                   ["trial_id", "distance_m", "abs_force_n"], force_rows),
        _write_csv(out_dir / "torque_vs_distance.csv",
                   ["trial_id", "distance_m", "abs_torque_nm"], torque_rows),
    ]
    if svg:
        files.extend(_plot_rollouts(logs, out_dir))
    return files


def report_offsets(trials: list[OffsetTrial], out_dir, bins: int = 30,
                   svg: bool = True) -> list[Path]:
    if not trials:
        raise ValueError("no offset trials to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hist = cumulative_histogram(trials, bins=bins)
    files = [
        _write_csv(out_dir / "cumulative_histogram.csv",
                   ["distance_bin_m", "trials_at_or_beyond"], hist),
        _write_csv(out_dir / "offset_scatter.csv",
                   ["lin_offset_m", "rot_offset_rad", "final_distance_m", "class"],
                   [(t.lin_offset, t.rot_offset, t.final_distance, t.outcome)
                    for t in trials]),
    ]
    if svg:
        files.extend(_plot_offsets(trials, hist, out_dir))
    return files


def _plot_rollouts(logs, out_dir: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    files = []
    for name, attr in (("force_vs_distance.svg", "abs_force"),
                       ("torque_vs_distance.svg", "abs_torque")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for lg in logs:
            ax.plot([s.distance for s in lg.steps], [getattr(s, attr) for s in lg.steps],
                    lw=0.8)
        ax.set_xlabel("distance to goal [m]")
        ax.set_ylabel("|force| [N]" if attr == "abs_force" else "|torque| [N m]")
        ax.invert_xaxis()
        fig.tight_layout()
        path = out_dir / name
        fig.savefig(path)
        plt.close(fig)
        files.append(path)
    return files


def _plot_offsets(trials, hist, out_dir: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    colors = {"success": "tab:blue", "near_miss": "tab:orange", "fail": "tab:red"}
    fig, ax = plt.subplots(figsize=(6, 4))
    for t in trials:
        ax.scatter(t.lin_offset, t.rot_offset, c=colors[t.outcome], s=18,
                   label=t.outcome)
    handles, labels = ax.get_legend_handles_labels()
    seen = dict(zip(labels, handles))
    ax.legend(seen.values(), seen.keys(), fontsize=8)
    ax.set_xlabel("linear offset [m]")
    ax.set_ylabel("rotational offset [rad]")
    fig.tight_layout()
    scatter = out_dir / "offset_scatter.svg"
    fig.savefig(scatter)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step([e for e, _ in hist], [c for _, c in hist], where="post")
    ax.set_xlabel("distance to goal [m]")
    ax.set_ylabel("trials at or beyond")
    ax.invert_xaxis()
    fig.tight_layout()
    histogram = out_dir / "cumulative_histogram.svg"
    fig.savefig(histogram)
    plt.close(fig)
    return [scatter, histogram]
