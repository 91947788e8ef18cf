/** Teleop wire protocol, version 1.
 *
 * Mirrors protocol/teleop_v1.schema.json (the gateway is the source of
 * truth).  Clients send deflections in [-1, 1]; newtons never cross the
 * wire, so recorded data stays device-independent.
 */

export const PROTOCOL_VERSION = 1;

export interface StateFrame {
  v: number;
  type: "state";
  t: number;
  object_pose: number[]; // [x y z qx qy qz qw]
  goal_pose: number[];
  recording: boolean;
  outcome: "success" | null;
  steering: boolean;
  contacts?: number[][] | null;
}

export interface AckFrame {
  v: number;
  type: "ack";
  action: string;
  ok: boolean;
  detail?: string | null;
}

export interface ErrorFrame {
  v: number;
  type: "error";
  reason: string;
}

export type ServerFrame = StateFrame | AckFrame | ErrorFrame;

export interface WrenchCommand { v: number; type: "wrench"; d: number[] }
export interface ResetCommand { v: number; type: "reset"; start: "random" | "goal_offset" }
export interface RecordCommand {
  v: number;
  type: "record";
  action: "start" | "stop" | "save" | "discard";
}
export type ClientCommand = WrenchCommand | ResetCommand | RecordCommand;

export class ProtocolError extends Error {
  constructor(public reason: string) {
    super(`protocol error: ${reason}`);
  }
}

function isFiniteArray(x: unknown, n: number): x is number[] {
  return Array.isArray(x) && x.length === n && x.every((v) => Number.isFinite(v));
}

export function parseServerFrame(text: string): ServerFrame {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    throw new ProtocolError("not_json");
  }
  if (typeof doc !== "object" || doc === null) throw new ProtocolError("not_object");
  const frame = doc as Record<string, unknown>;
  if (frame.v !== PROTOCOL_VERSION) throw new ProtocolError("bad_version");
  switch (frame.type) {
    case "state":
      if (!isFiniteArray(frame.object_pose, 7) || !isFiniteArray(frame.goal_pose, 7)
          || typeof frame.t !== "number" || typeof frame.recording !== "boolean") {
        throw new ProtocolError("invalid_state_frame");
      }
      return frame as unknown as StateFrame;
    case "ack":
      if (typeof frame.action !== "string" || typeof frame.ok !== "boolean") {
        throw new ProtocolError("invalid_ack_frame");
      }
      return frame as unknown as AckFrame;
    case "error":
      if (typeof frame.reason !== "string") throw new ProtocolError("invalid_error_frame");
      return frame as unknown as ErrorFrame;
    default:
      throw new ProtocolError("unknown_type");
  }
}

const clamp1 = (x: number) => Math.max(-1, Math.min(1, x));

export function wrenchCommand(deflection: ArrayLike<number>): WrenchCommand {
  const d = Array.from({ length: 6 }, (_, i) => clamp1(deflection[i] ?? 0));
  return { v: PROTOCOL_VERSION, type: "wrench", d };
}

export function resetCommand(start: "random" | "goal_offset"): ResetCommand {
  return { v: PROTOCOL_VERSION, type: "reset", start };
}

export function recordCommand(action: RecordCommand["action"]): RecordCommand {
  return { v: PROTOCOL_VERSION, type: "record", action };
}

/** Scene geometry served by GET /scene (for rendering only). */
export interface BoxInfo { pose: number[]; extents: number[] }
export interface SceneInfo {
  name: string;
  active: BoxInfo[];
  receptacle: BoxInfo[];
  goal_pose: number[];
  clearance_lin: number;
  clearance_rot: number;
  insertion_axis: number[];
  entrance_point: number[];
}
