"""Demonstration recording, dataset files, window sampling and a scripted expert.

Each demonstration is one `.demo.jsonl` file: a header line with metadata
followed by one line per 100 Hz record.  Records hold the object-relative
target pose, the object-frame twist and the commanded wrench - exactly the
quantities the skill model consumes.  A scripted expert stands in for human
demonstrators so the full pipeline runs unattended; teleoperated data uses
the same format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import BodyState, Scene
from .spatial import (
    Transform,
    Wrench,
    pose7,
    relative_target,
    rotvec_from_mat,
)

__all__ = [
    "DemoFormatError",
    "DemoRecord",
    "DemoMeta",
    "Demonstration",
    "DemoRecorder",
    "WindowSample",
    "window_sample",
    "norm_stats",
    "ExpertConfig",
    "ScriptedExpert",
    "save_demo",
    "load_demo",
    "load_dataset",
    "write_manifest",
]

FORMAT_VERSION = 1
RATE_HZ = 100.0


class DemoFormatError(ValueError):
    """Demonstration file violates the schema or its own header."""


@dataclass
class DemoRecord:
    t: float
    pose7: np.ndarray     # object-relative target pose [x y z qx qy qz qw]
    twist6: np.ndarray    # object-frame [v; w]
    wrench6: np.ndarray   # commanded wrench, object frame

    def __post_init__(self):
        self.pose7 = np.asarray(self.pose7, dtype=float).reshape(7)
        self.twist6 = np.asarray(self.twist6, dtype=float).reshape(6)
        self.wrench6 = np.asarray(self.wrench6, dtype=float).reshape(6)

    def seed(self) -> np.ndarray:
        return np.concatenate([self.pose7, self.twist6, self.wrench6])


@dataclass
class DemoMeta:
    scene: str
    rate_hz: float = RATE_HZ
    start_pose: np.ndarray = field(default_factory=lambda: np.zeros(7))
    success: bool = False
    source: str = "scripted"   # or "human"

    def __post_init__(self):
        self.start_pose = np.asarray(self.start_pose, dtype=float).reshape(7)


@dataclass
class Demonstration:
    meta: DemoMeta
    records: list[DemoRecord]

    @property
    def duration(self) -> float:
        if len(self.records) < 2:
            return 0.0
        return self.records[-1].t - self.records[0].t


class DemoRecorder:
    """Accumulates records at a fixed cadence; flags cadence gaps as invalid."""

    def __init__(self, scene_name: str, start_pose: Transform, rate_hz: float = RATE_HZ,
                 source: str = "scripted"):
        self.meta = DemoMeta(scene=scene_name, rate_hz=rate_hz,
                             start_pose=pose7(start_pose), source=source)
        self.records: list[DemoRecord] = []
        self.valid = True

    def add(self, t: float, state: BodyState, goal: Transform, wrench: Wrench) -> None:
        if self.records:
            gap = t - self.records[-1].t
            if gap > 2.0 / self.meta.rate_hz + 1e-9:
                self.valid = False
        _, feats = relative_target(state.pose, goal)
        self.records.append(DemoRecord(t, feats, state.twist.as_array(),
                                       wrench.as_array()))

    def finalize(self, success: bool) -> Demonstration:
        if not self.records:
            raise DemoFormatError("empty recording")
        if not self.valid:
            raise DemoFormatError("recording had cadence gaps > 2 periods")
        self.meta.success = success
        return Demonstration(self.meta, self.records)


# ---------------------------------------------------------------------------
# training windows and statistics
# ---------------------------------------------------------------------------

@dataclass
class WindowSample:
    seed: np.ndarray             # (19,)
    labels: np.ndarray           # (N, 6) wrenches strictly after the seed


def window_sample(demo: Demonstration, rng: np.random.Generator, n: int) -> WindowSample:
    """Random seed record plus the following N wrench labels from one demo."""
    if not demo.meta.success:
        raise ValueError("window sampling requires a successful demonstration")
    last_start = len(demo.records) - n - 1
    if last_start < 0:
        raise ValueError(f"demonstration too short for a window of {n} labels")
    t0 = int(rng.integers(0, last_start + 1))
    labels = np.stack([demo.records[t0 + 1 + k].wrench6 for k in range(n)])
    return WindowSample(demo.records[t0].seed(), labels)


def norm_stats(dataset: list[Demonstration], floor: float = 1e-8):
    """Per-dimension mean/std (population) over every record of every demo."""
    if len(dataset) < 2:
        raise ValueError("need at least 2 demonstrations for statistics")
    seeds = np.concatenate([[r.seed() for r in d.records] for d in dataset])
    wrenches = seeds[:, 13:19]
    from .model import NormStats

    return NormStats(
        in_mean=seeds.mean(axis=0),
        in_std=np.maximum(seeds.std(axis=0), floor),
        out_mean=wrenches.mean(axis=0),
        out_std=np.maximum(wrenches.std(axis=0), floor),
    )


# ---------------------------------------------------------------------------
# scripted expert
# ---------------------------------------------------------------------------

@dataclass
class ExpertConfig:
    f_max: float = 3.0            # [N] steering clamp (teleop-range analogue)
    t_max: float = 0.6            # [N*m]
    k_f: float = 60.0             # [N/m] proportional gain on position error
    k_t: float = 8.0              # [N*m/rad]
    approach_frac: float = 0.6    # force cap fraction while flying to the staging point
    descend_frac: float = 0.4    # force cap fraction once inside the socket
    stage_height: float = 0.02    # staging point this far above the entrance [m]
    deadband_lin: float = 0.0008  # stop pushing when this close [m]
    deadband_rot: float = 0.01    # [rad]
    stall_window: float = 0.5     # [s] no progress for this long triggers a retreat
    stall_progress: float = 0.002 # [m] minimum progress per window
    retreat_time: float = 0.3     # [s]
    dither_time: float = 0.4      # [s] rotational wiggle after retreating
    dither_torque: float = 0.25   # [N*m]
    hold_time: float = 0.8        # [s] keep pressing the seat after success
    # low-passed execution noise, the imperfection human steering carries;
    # it spreads the demonstrations over a tube of off-nominal states with
    # corrective labels, which is what keeps the learner from drifting
    noise_force: float = 0.25     # [N] stationary std
    noise_torque: float = 0.05    # [N*m]
    noise_cutoff_hz: float = 1.5


class ScriptedExpert:
    """Goal-directed wrench policy with a human-like unstick strategy.

    Phases: fly to a staging point above the socket entrance, push in with
    strong alignment wrenches, then descend gently once inside.  When
    progress stalls, back out briefly and wiggle the orientation before
    trying again - the retreat behavior tight assemblies demand.
    """

    def __init__(self, scene: Scene, cfg: ExpertConfig, rng: np.random.Generator):
        self.scene = scene
        self.cfg = cfg
        self.rng = rng
        self._best_dist = math.inf
        self._stall_t = 0.0
        self._mode = "normal"        # normal | retreat | dither
        self._mode_until = 0.0
        self._dither_axis = np.zeros(3)
        self._last_force_dir = np.zeros(3)
        self._noise = np.zeros(6)
        # AR(1) coefficients for the execution noise at the 100 Hz tick
        dt = 0.01
        self._noise_a = math.exp(-2.0 * math.pi * cfg.noise_cutoff_hz * dt)
        self._noise_b = math.sqrt(max(0.0, 1.0 - self._noise_a ** 2))

    def _goal_errors(self, state: BodyState):
        rot, pos = state.pose.rot, state.pose.trans
        e_p = rot.T @ (self.scene.goal.trans - pos)           # object frame
        e_r = rotvec_from_mat(rot.T @ self.scene.goal.rot)    # object frame
        return e_p, e_r

    def step(self, t: float, state: BodyState) -> Wrench:
        cfg, scene = self.cfg, self.scene
        e_p, e_r = self._goal_errors(state)
        dist = scene.distance_to_goal(state.pose)
        inserted = scene.insertion_coordinate(state.pose) > 0.0
        e_p_w = scene.goal.trans - state.pose.trans
        lateral_w = e_p_w - (e_p_w @ scene.insertion_axis) * scene.insertion_axis

        # stall bookkeeping (only while actively trying to make progress)
        if dist < self._best_dist - cfg.stall_progress:
            self._best_dist = dist
            self._stall_t = t
        elif self._mode == "normal" and t - self._stall_t > cfg.stall_window and dist > 2 * scene.clearance_lin:
            self._mode = "retreat"
            self._mode_until = t + cfg.retreat_time
            self._stall_t = t

        if self._mode == "retreat":
            if t >= self._mode_until:
                self._mode = "dither"
                self._mode_until = t + cfg.dither_time
                # wiggle about the jamming axis: perpendicular to both the
                # insertion direction and the lateral miss
                axis_w = np.cross(self.scene.insertion_axis, lateral_w)
                n = np.linalg.norm(axis_w)
                if n < 1e-9:
                    axis_w = _any_perpendicular(self.scene.insertion_axis)
                    n = np.linalg.norm(axis_w)
                sign = 1.0 if self.rng.random() < 0.5 else -1.0
                self._dither_axis = sign * state.pose.rot.T @ (axis_w / n)
            else:
                # back out: push away from the goal and clear of the entrance
                back = -e_p.copy()
                up_obj = state.pose.rot.T @ (-scene.insertion_axis)
                force = cfg.f_max * 0.8 * _unit(back + up_obj)
                self._last_force_dir = force
                return Wrench(force, np.zeros(3), "object")

        if self._mode == "dither" and t >= self._mode_until:
            self._mode = "normal"
            self._stall_t = t
            self._best_dist = dist + cfg.stall_progress  # allow re-measuring

        # target point: staging pose above the entrance until roughly aligned
        axis_obj = state.pose.rot.T @ scene.insertion_axis
        lateral = e_p - (e_p @ axis_obj) * axis_obj
        if inserted:
            # inside the socket the walls guide: center laterally while
            # pressing firmly to the mechanical seat (no final crawl)
            force = cfg.k_f * lateral + cfg.f_max * cfg.descend_frac * axis_obj
            force = _clamp_norm(force, cfg.f_max * cfg.descend_frac + 0.5)
        else:
            if np.linalg.norm(lateral) > 2.5 * scene.clearance_lin:
                stage_w = scene.entrance_point - scene.insertion_axis * cfg.stage_height
                e_target = state.pose.rot.T @ (stage_w - state.pose.trans)
                cap = cfg.f_max * cfg.approach_frac
            else:
                e_target = e_p        # at the entrance: full-strength alignment
                cap = cfg.f_max
            force = cfg.k_f * e_target
            if np.linalg.norm(e_p) < cfg.deadband_lin:
                force = np.zeros(3)
            force = _clamp_norm(force, cap)

        torque = cfg.k_t * e_r
        if np.linalg.norm(e_r) < cfg.deadband_rot:
            torque = np.zeros(3)
        torque = _clamp_norm(torque, cfg.t_max)
        if self._mode == "dither":
            torque = torque + cfg.dither_torque * math.sin(
                40.0 * (t - self._mode_until)) * self._dither_axis
            torque = _clamp_norm(torque, cfg.t_max)

        if cfg.noise_force > 0.0 or cfg.noise_torque > 0.0:
            self._noise = self._noise_a * self._noise + self._noise_b * self.rng.normal(size=6)
            force = _clamp_norm(force + cfg.noise_force * self._noise[:3], cfg.f_max)
            torque = _clamp_norm(torque + cfg.noise_torque * self._noise[3:], cfg.t_max)

        self._last_force_dir = force
        return Wrench(force, torque, "object")


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else v


def _any_perpendicular(v: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    return np.cross(v, helper)


def _clamp_norm(v: np.ndarray, cap: float) -> np.ndarray:
    n = np.linalg.norm(v)
    return v * (cap / n) if n > cap else v


def record_scripted(scene: Scene, rng: np.random.Generator,
                    cfg: ExpertConfig | None = None,
                    start: Transform | None = None,
                    lin_range: float = 0.14, ang_range: float = 0.45,
                    max_time: float = 60.0) -> Demonstration:
    """Run the scripted expert once and record it at 100 Hz.

    The returned demonstration carries success=False on timeout; the caller
    decides whether to keep it.
    """
    from .sim import random_start, sim_step

    cfg = cfg or ExpertConfig()
    if start is None:
        start = random_start(scene, rng, lin_range, ang_range)
    expert = ScriptedExpert(scene, cfg, rng)
    recorder = DemoRecorder(scene.name, start, rate_hz=RATE_HZ, source="scripted")

    state = BodyState.at_rest(start)
    steps_per_tick = max(1, round(1.0 / (RATE_HZ * scene.sim_dt)))
    tick = 0
    success = False
    success_t = None
    while True:
        t = tick / RATE_HZ
        wrench = expert.step(t, state)
        recorder.add(t, state, scene.goal, wrench)
        if scene.is_success(state.pose) and success_t is None:
            success = True
            success_t = t
        # hold the seat press briefly after success so the tail of every
        # demonstration teaches "stay pressed in", not "let go early"
        if success and t >= success_t + cfg.hold_time:
            break
        if t >= max_time:
            break
        for _ in range(steps_per_tick):
            state, _, _ = sim_step(scene, state, wrench, scene.sim_dt)
        tick += 1
    return recorder.finalize(success)


# ---------------------------------------------------------------------------
# dataset files (.demo.jsonl + manifest.json)
# ---------------------------------------------------------------------------

def _fmt(values) -> list[float]:
    return [float(v) for v in values]


def save_demo(demo: Demonstration, path) -> Path:
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "scene": demo.meta.scene,
        "rate_hz": demo.meta.rate_hz,
        "start_pose": _fmt(demo.meta.start_pose),
        "success": demo.meta.success,
        "source": demo.meta.source,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in demo.records:
            fh.write(json.dumps({"t": rec.t, "x": _fmt(rec.pose7),
                                 "xd": _fmt(rec.twist6), "f": _fmt(rec.wrench6)},
                                sort_keys=True) + "\n")
    return path


def _check_record(path, lineno: int, rec: DemoRecord) -> None:
    vals = np.concatenate([[rec.t], rec.pose7, rec.twist6, rec.wrench6])
    if not np.all(np.isfinite(vals)):
        raise DemoFormatError(f"{path}:{lineno}: non-finite value")
    qn = np.linalg.norm(rec.pose7[3:])
    if abs(qn - 1.0) > 1e-6:
        raise DemoFormatError(f"{path}:{lineno}: quaternion norm {qn:.9f} != 1")


def load_demo(path) -> Demonstration:
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DemoFormatError(f"{path}: empty file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DemoFormatError(f"{path}:1: bad header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DemoFormatError(
            f"{path}:1: unsupported format_version {header.get('format_version')!r}")
    for key in ("scene", "rate_hz", "start_pose", "success", "source"):
        if key not in header:
            raise DemoFormatError(f"{path}:1: header missing {key!r}")

    meta = DemoMeta(scene=header["scene"], rate_hz=float(header["rate_hz"]),
                    start_pose=header["start_pose"], success=bool(header["success"]),
                    source=header["source"])
    records = []
    period = 1.0 / meta.rate_hz
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            rec = DemoRecord(float(doc["t"]), doc["x"], doc["xd"], doc["f"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DemoFormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
        _check_record(path, lineno, rec)
        if records and abs((rec.t - records[-1].t) - period) > 0.25 * period:
            raise DemoFormatError(
                f"{path}:{lineno}: cadence {rec.t - records[-1].t:.6f}s "
                f"does not match header rate {meta.rate_hz} Hz")
        records.append(rec)
    if not records:
        raise DemoFormatError(f"{path}: no records")
    return Demonstration(meta, records)


def load_dataset(directory) -> list[Demonstration]:
    directory = Path(directory)
    return [load_demo(p) for p in sorted(directory.glob("*.demo.jsonl"))]


def write_manifest(directory) -> Path:
    """Regenerate manifest.json for a dataset directory."""
    directory = Path(directory)
    entries = []
    for p in sorted(directory.glob("*.demo.jsonl")):
        demo = load_demo(p)
        entries.append({"file": p.name, "records": len(demo.records),
                        "success": demo.meta.success, "source": demo.meta.source,
                        "duration_s": round(demo.duration, 6)})
    manifest = {
        "format_version": FORMAT_VERSION,
        "count": len(entries),
        "successful": sum(1 for e in entries if e["success"]),
        "files": entries,
    }
    out = directory / "manifest.json"
    with open(out, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out
