"""Teleoperation gateway: bridges the running simulator to browser clients.

One loop owns the simulation and steps it on the wall clock; WebSocket
sessions exchange JSON frames with it through queues.  One client steers
at a time (claimed by the first steering command, released on disconnect);
everyone else is read-only.  Wrench commands apply at sim step boundaries,
latest wins.  Recording runs at exactly 100 Hz of simulation time no
matter what the broadcast or command rates do.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import logging
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel

from . import protocol
from .demos import DemoRecorder, save_demo, write_manifest
from .protocol import (
    AckFrame,
    ErrorFrame,
    ProtocolViolation,
    RecordCommand,
    ResetCommand,
    StateFrame,
    WrenchCommand,
    parse_client_command,
)
from .sim import BodyState, Scene, collide, random_start, sim_step
from .spatial import Transform, Wrench, pose7

__all__ = ["GatewayConfig", "TeleopSession", "map_device", "create_app", "serve"]

log = logging.getLogger("csf.gateway")


@dataclass
class GatewayConfig:
    port: int = 8732
    host: str = "127.0.0.1"
    broadcast_hz: float = 30.0
    wrench_gain_lin: float = 30.0     # N at full deflection
    wrench_gain_rot: float = 6.0      # N*m at full deflection
    record_rate_hz: float = 100.0
    debug_contacts: bool = False      # never honored while recording
    reset_lin_range: float = 0.14
    reset_ang_range: float = 0.45
    max_catchup_steps: int = 200

    def __post_init__(self):
        if self.wrench_gain_lin <= 0 or self.wrench_gain_rot <= 0:
            raise ValueError("wrench gains must be positive")


def map_device(deflection6, gain_lin: float, gain_rot: float) -> Wrench:
    """Linear device-to-wrench map; zero deflection is the rest position."""
    d = np.clip(np.asarray(deflection6, dtype=float).reshape(6), -1.0, 1.0)
    return Wrench(gain_lin * d[:3], gain_rot * d[3:], "object")


class TeleopSession:
    """Synchronous simulation/recording core behind the network layer."""

    def __init__(self, scene: Scene, cfg: GatewayConfig, out_dir, seed: int = 0):
        self.scene = scene
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.rng = np.random.default_rng(seed)
        self.deflection = np.zeros(6)
        self.sim_steps = 0
        self._record_every = max(1, round(1.0 / (cfg.record_rate_hz * scene.sim_dt)))
        self.recorder: DemoRecorder | None = None
        self.recording = False
        self._record_start_step = 0
        self.saved_files: list[str] = []
        self.state = BodyState.at_rest(self._offset_start())

    # -- starts --------------------------------------------------------------

    def _offset_start(self) -> Transform:
        pose = Transform(
            self.scene.goal.rot,
            self.scene.entrance_point - self.scene.insertion_axis * 0.05,
            self.scene.goal.from_frame, "object")
        if collide(self.scene, pose):
            raise ValueError("goal_offset start pose collides; check the scene")
        return pose

    def reset(self, mode: str) -> AckFrame:
        if self.recording or (self.recorder and self.recorder.records):
            self._drop_recording()
        if mode == "random":
            start = random_start(self.scene, self.rng,
                                 self.cfg.reset_lin_range, self.cfg.reset_ang_range)
        else:
            start = self._offset_start()
        self.state = BodyState.at_rest(start)
        self.deflection = np.zeros(6)
        return AckFrame(action=f"reset:{mode}", ok=True)

    # -- stepping ------------------------------------------------------------

    @property
    def sim_time(self) -> float:
        return self.sim_steps * self.scene.sim_dt

    def set_deflection(self, d) -> None:
        self.deflection = np.clip(np.asarray(d, dtype=float).reshape(6), -1.0, 1.0)

    def current_wrench(self) -> Wrench:
        return map_device(self.deflection, self.cfg.wrench_gain_lin,
                          self.cfg.wrench_gain_rot)

    def advance(self, steps: int) -> None:
        for _ in range(steps):
            wrench = self.current_wrench()
            self.state, _, _ = sim_step(self.scene, self.state, wrench,
                                        self.scene.sim_dt)
            self.sim_steps += 1
            if self.recording and (
                    (self.sim_steps - self._record_start_step) % self._record_every == 0):
                t = (self.sim_steps - self._record_start_step) * self.scene.sim_dt
                self.recorder.add(t, self.state, self.scene.goal, wrench)

    # -- recording -----------------------------------------------------------

    def _drop_recording(self) -> None:
        self.recorder = None
        self.recording = False

    def record(self, action: str) -> AckFrame:
        if action == "start":
            if self.recording:
                return AckFrame(action="record:start", ok=False,
                                detail="already_recording")
            self.recorder = DemoRecorder(self.scene.name, self.state.pose,
                                         rate_hz=self.cfg.record_rate_hz,
                                         source="human")
            self.recording = True
            self._record_start_step = self.sim_steps
            self.recorder.add(0.0, self.state, self.scene.goal, self.current_wrench())
            return AckFrame(action="record:start", ok=True)
        if action == "stop":
            self.recording = False   # idempotent; buffer kept for save/discard
            return AckFrame(action="record:stop", ok=True)
        if action == "discard":
            self._drop_recording()
            return AckFrame(action="record:discard", ok=True)
        if action == "save":
            if self.recorder is None or not self.recorder.records:
                return AckFrame(action="record:save", ok=False, detail="empty_buffer")
            demo = self.recorder.finalize(self.scene.is_success(self.state.pose))
            self.out_dir.mkdir(parents=True, exist_ok=True)
            name = f"teleop_{len(self.saved_files):04d}.demo.jsonl"
            save_demo(demo, self.out_dir / name)
            write_manifest(self.out_dir)
            self.saved_files.append(name)
            self._drop_recording()
            return AckFrame(action="record:save", ok=True, detail=name)
        return AckFrame(action=f"record:{action}", ok=False, detail="unknown_action")

    # -- snapshots -----------------------------------------------------------

    def snapshot(self, steering: bool = False) -> StateFrame:
        contacts = None
        if self.cfg.debug_contacts and not self.recording:
            contacts = [[*cp.point, cp.depth]
                        for cp in collide(self.scene, self.state.pose)]
        return StateFrame(
            t=self.sim_time,
            object_pose=[float(x) for x in pose7(self.state.pose)],
            goal_pose=[float(x) for x in pose7(self.scene.goal)],
            recording=self.recording,
            outcome="success" if self.scene.is_success(self.state.pose) else None,
            steering=steering,
            contacts=contacts,
        )


# ---------------------------------------------------------------------------
# FastAPI application
# ---------------------------------------------------------------------------

class BoxInfo(BaseModel):
    pose: list[float]      # pose7 (local for active parts, world for receptacle)
    extents: list[float]


class SceneInfo(BaseModel):
    name: str
    active: list[BoxInfo]
    receptacle: list[BoxInfo]
    goal_pose: list[float]
    clearance_lin: float
    clearance_rot: float
    insertion_axis: list[float]
    entrance_point: list[float]


class HealthInfo(BaseModel):
    status: str
    scene: str
    sim_time: float
    clients: int
    recording: bool
    demos_saved: int


def _box_info(part) -> BoxInfo:
    t = Transform(part.rot, part.trans)
    return BoxInfo(pose=[float(x) for x in pose7(t)],
                   extents=[float(2 * h) for h in part.half])


def create_app(scene: Scene, cfg: GatewayConfig | None = None, out_dir=".",
               seed: int = 0) -> FastAPI:
    cfg = cfg or GatewayConfig()
    session = TeleopSession(scene, cfg, out_dir, seed=seed)
    clients: dict[int, asyncio.Queue] = {}
    ids = itertools.count(1)
    steering: dict[str, int | None] = {"owner": None}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        task = asyncio.create_task(_run(session, clients, cfg))
        try:
            yield
        finally:
            task.cancel()

    app = FastAPI(title="contact-skill teleop gateway", lifespan=lifespan)
    app.state.session = session

    @app.get("/health", response_model=HealthInfo)
    def health() -> HealthInfo:
        return HealthInfo(status="ok", scene=scene.name, sim_time=session.sim_time,
                          clients=len(clients), recording=session.recording,
                          demos_saved=len(session.saved_files))

    @app.get("/scene", response_model=SceneInfo)
    def scene_info() -> SceneInfo:
        return SceneInfo(
            name=scene.name,
            active=[_box_info(p) for p in scene.active_parts],
            receptacle=[_box_info(p) for p in scene.receptacle],
            goal_pose=[float(x) for x in pose7(scene.goal)],
            clearance_lin=scene.clearance_lin,
            clearance_rot=scene.clearance_rot,
            insertion_axis=[float(x) for x in scene.insertion_axis],
            entrance_point=[float(x) for x in scene.entrance_point],
        )

    @app.get("/protocol")
    def protocol_schema() -> dict:
        return protocol.schema_document()

    @app.websocket("/teleop")
    async def teleop(ws: WebSocket):
        await ws.accept()
        cid = next(ids)
        queue: asyncio.Queue = asyncio.Queue(maxsize=4)
        clients[cid] = queue
        sender = asyncio.create_task(_sender(ws, queue))
        # greet with the current state so clients render before the next tick
        await queue.put(session.snapshot(steering.get("owner") == cid))
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    cmd = parse_client_command(json.loads(raw))
                except json.JSONDecodeError:
                    raise ProtocolViolation("not_json")
                owner = steering["owner"]
                if owner is None:
                    steering["owner"] = owner = cid
                if owner != cid:
                    await queue.put(ErrorFrame(reason="steering_taken"))
                    continue
                if isinstance(cmd, WrenchCommand):
                    session.set_deflection(cmd.d)   # consumed at step boundaries
                elif isinstance(cmd, ResetCommand):
                    await queue.put(session.reset(cmd.start))
                elif isinstance(cmd, RecordCommand):
                    await queue.put(session.record(cmd.action))
        except WebSocketDisconnect:
            pass
        except ProtocolViolation as exc:
            try:
                await ws.send_text(ErrorFrame(reason=exc.reason).model_dump_json())
                await ws.close(code=1002, reason=exc.reason)
            except RuntimeError:
                pass
        finally:
            sender.cancel()
            clients.pop(cid, None)
            if steering["owner"] == cid:
                steering["owner"] = None
                session.set_deflection(np.zeros(6))

    async def _sender(ws: WebSocket, queue: asyncio.Queue):
        while True:
            frame = await queue.get()
            if isinstance(frame, StateFrame):
                frame = session.snapshot(steering["owner"] is not None
                                         and clients.get(steering["owner"]) is queue)
            await ws.send_text(frame.model_dump_json())

    return app


async def _run(session: TeleopSession, clients: dict[int, asyncio.Queue],
               cfg: GatewayConfig) -> None:
    """Wall-clock paced sim stepping plus fixed-rate state broadcast."""
    t0 = time.monotonic()
    done = 0
    period = 1.0 / cfg.broadcast_hz
    next_bcast = t0
    while True:
        await asyncio.sleep(min(period / 2, 0.005))
        now = time.monotonic()
        target = int((now - t0) / session.scene.sim_dt)
        todo = target - done
        if todo > cfg.max_catchup_steps:
            done = target - cfg.max_catchup_steps   # drop time we cannot recover
            todo = cfg.max_catchup_steps
        if todo > 0:
            session.advance(todo)
            done += todo
        if now >= next_bcast:
            marker = session.snapshot()
            for queue in list(clients.values()):
                if queue.full():
                    try:
                        queue.get_nowait()
                    except asyncio.QueueEmpty:
                        pass
                # the sender re-snapshots per client; the marker just wakes it
                queue.put_nowait(marker)
            next_bcast = max(next_bcast + period, now - period)


def serve(scene: Scene, cfg: GatewayConfig, out_dir, seed: int = 0) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    app = create_app(scene, cfg, out_dir, seed=seed)
    log.info("teleop gateway on ws://%s:%d/teleop", cfg.host, cfg.port)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
