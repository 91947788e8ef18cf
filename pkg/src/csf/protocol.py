"""Versioned JSON wire schema for the teleoperation WebSocket endpoint.

Every frame carries ``v: 1``.  Clients send device deflections, never
newtons: the deflection-to-wrench gains live server-side so recorded data
stays device-independent.  State frames never carry force/torque data
unless the server runs with the debug flag, which is refused while
recording.
"""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError

PROTOCOL_VERSION = 1


class StateFrame(BaseModel):
    v: int = PROTOCOL_VERSION
    type: Literal["state"] = "state"
    t: float
    object_pose: list[float] = Field(min_length=7, max_length=7)
    goal_pose: list[float] = Field(min_length=7, max_length=7)
    recording: bool
    outcome: Optional[Literal["success"]] = None
    steering: bool = False            # true when the receiving client steers
    contacts: Optional[list[list[float]]] = None   # debug only, never while recording


class AckFrame(BaseModel):
    v: int = PROTOCOL_VERSION
    type: Literal["ack"] = "ack"
    action: str
    ok: bool
    detail: Optional[str] = None


class ErrorFrame(BaseModel):
    v: int = PROTOCOL_VERSION
    type: Literal["error"] = "error"
    reason: str


class WrenchCommand(BaseModel):
    v: int = PROTOCOL_VERSION
    type: Literal["wrench"]
    d: list[float] = Field(min_length=6, max_length=6)   # deflections in [-1, 1]


class ResetCommand(BaseModel):
    v: int = PROTOCOL_VERSION
    type: Literal["reset"]
    start: Literal["random", "goal_offset"] = "random"


class RecordCommand(BaseModel):
    v: int = PROTOCOL_VERSION
    type: Literal["record"]
    action: Literal["start", "stop", "save", "discard"]


ClientCommand = Union[WrenchCommand, ResetCommand, RecordCommand]
_COMMANDS = {"wrench": WrenchCommand, "reset": ResetCommand, "record": RecordCommand}


class ProtocolViolation(ValueError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def parse_client_command(payload: dict) -> ClientCommand:
    if not isinstance(payload, dict):
        raise ProtocolViolation("frame_not_object")
    if payload.get("v") != PROTOCOL_VERSION:
        raise ProtocolViolation("bad_version")
    kind = payload.get("type")
    cls = _COMMANDS.get(kind)
    if cls is None:
        raise ProtocolViolation("unknown_type")
    try:
        return cls.model_validate(payload)
    except ValidationError as exc:
        raise ProtocolViolation("invalid_fields") from exc


def schema_document() -> dict:
    """Machine-readable schema for all frame types (shared with clients)."""
    return {
        "protocol": "teleop",
        "version": PROTOCOL_VERSION,
        "server_to_client": {
            "state": StateFrame.model_json_schema(),
            "ack": AckFrame.model_json_schema(),
            "error": ErrorFrame.model_json_schema(),
        },
        "client_to_server": {
            "wrench": WrenchCommand.model_json_schema(),
            "reset": ResetCommand.model_json_schema(),
            "record": RecordCommand.model_json_schema(),
        },
    }
