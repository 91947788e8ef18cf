"""Workbench configuration: one YAML file with a section per subsystem.

Every value has a default, so an empty file (or none at all) is a valid
configuration; bundled scene/chain names resolve through the package data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml
from pydantic import BaseModel, Field

from .controller import ControllerConfig
from .demos import ExpertConfig
from .evaluation import RolloutConfig
from .gateway import GatewayConfig
from .kinematics import BUNDLED_CHAINS, ChainModel, bundled_chain, load_chain
from .model import Hyperparams
from .sim import BUNDLED_SCENES, Scene, bundled_scene, load_scene
from .spatial import Transform


class ControllerSection(BaseModel):
    kp: list[float] = Field(default_factory=lambda: [2.1] * 6)
    kd: list[float] = Field(default_factory=lambda: [0.001] * 6)
    dt: float = 0.008
    velocity_decay: float = 0.9
    force_scale: float = 1.5
    torque_scale: float = 2.0
    max_joint_step: float = 0.02
    derivative_smoothing: float = 0.0

    def runtime(self) -> ControllerConfig:
        return ControllerConfig(kp=np.array(self.kp), kd=np.array(self.kd),
                                dt=self.dt, velocity_decay=self.velocity_decay,
                                force_scale=self.force_scale,
                                torque_scale=self.torque_scale,
                                max_joint_step=self.max_joint_step,
                                derivative_smoothing=self.derivative_smoothing)


class TrainingSection(BaseModel):
    hidden: int = 50
    unroll: int = 50
    batch: int = 512
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    lr_final: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 3000
    rng_seed: int = 0

    def runtime(self) -> Hyperparams:
        return Hyperparams(**self.model_dump())


class ExpertSection(BaseModel):
    f_max: float = 3.0
    t_max: float = 0.6
    k_f: float = 60.0
    k_t: float = 8.0
    approach_frac: float = 0.6
    descend_frac: float = 0.4
    stage_height: float = 0.02
    deadband_lin: float = 0.0008
    deadband_rot: float = 0.01
    stall_window: float = 0.5
    stall_progress: float = 0.002
    retreat_time: float = 0.3
    dither_time: float = 0.4
    dither_torque: float = 0.25
    hold_time: float = 0.8
    noise_force: float = 0.25
    noise_torque: float = 0.05
    noise_cutoff_hz: float = 1.5

    def runtime(self) -> ExpertConfig:
        return ExpertConfig(**self.model_dump())


class DemoSection(BaseModel):
    count: int = 200
    lin_range: float = 0.14
    ang_range: float = 0.45
    max_time: float = 60.0
    keep_failed: bool = True      # failed runs stay on disk, flagged


class RolloutSection(BaseModel):
    serve_hz: float = 50.0
    stall_window: float = 5.0
    stall_progress: float = 0.001
    timeout: float = 120.0
    setpoint_dt: float = 0.05
    window_time: float = 2.5
    start_lin: float = 0.14
    start_ang: float = 0.35

    def runtime(self) -> RolloutConfig:
        return RolloutConfig(serve_hz=self.serve_hz, stall_window=self.stall_window,
                             stall_progress=self.stall_progress, timeout=self.timeout,
                             setpoint_dt=self.setpoint_dt, window_time=self.window_time)


class OffsetsSection(BaseModel):
    margin_lin: float = 0.004          # 2x the desk-scale clearance
    margin_rot: float = 0.10
    trials: int = 227
    near_miss_factor: float = 10.0


class GatewaySection(BaseModel):
    port: int = 8732
    host: str = "127.0.0.1"
    broadcast_hz: float = 30.0
    wrench_gain_lin: float = 30.0
    wrench_gain_rot: float = 6.0
    record_rate_hz: float = 100.0
    debug_contacts: bool = False
    reset_lin_range: float = 0.14
    reset_ang_range: float = 0.45

    def runtime(self) -> GatewayConfig:
        return GatewayConfig(**self.model_dump())


class PlacementSection(BaseModel):
    xyz: list[float] = Field(default_factory=lambda: [0.6, 0.0, 0.05])
    rpy: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])

    def runtime(self) -> Transform:
        from .kinematics import _rpy_matrix

        return Transform(_rpy_matrix(self.rpy), self.xyz, "b", "world")


class WorkbenchConfig(BaseModel):
    scene: str = "slot_planar"
    chain: str = "elbow_a"
    chains: list[str] = Field(default_factory=lambda: ["elbow_a", "elbow_b"])
    controller: ControllerSection = Field(default_factory=ControllerSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    expert: ExpertSection = Field(default_factory=ExpertSection)
    demo: DemoSection = Field(default_factory=DemoSection)
    rollout: RolloutSection = Field(default_factory=RolloutSection)
    offsets: OffsetsSection = Field(default_factory=OffsetsSection)
    gateway: GatewaySection = Field(default_factory=GatewaySection)
    placements: dict[str, PlacementSection] = Field(default_factory=dict)

    @staticmethod
    def load(path=None) -> "WorkbenchConfig":
        if path is None:
            return WorkbenchConfig()
        doc = yaml.safe_load(Path(path).read_text())
        if doc is None:
            return WorkbenchConfig()
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a mapping")
        return WorkbenchConfig.model_validate(doc)

    def resolve_scene(self) -> Scene:
        if self.scene in BUNDLED_SCENES:
            return bundled_scene(self.scene)
        return load_scene(self.scene)

    def resolve_chain(self, name: str | None = None) -> ChainModel:
        name = name or self.chain
        if name in BUNDLED_CHAINS:
            return bundled_chain(name)
        return load_chain(name)

    def placement_for(self, chain_name: str) -> Transform | None:
        if chain_name in self.placements:
            return self.placements[chain_name].runtime()
        return None
