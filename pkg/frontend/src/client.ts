/** WebSocket client loop: streams deflections, tracks session state.
 *
 * Wrench frames go out at 50 Hz while any axis is deflected, plus exactly
 * one zero frame on release so the simulator sees the stick return to
 * center.  A version mismatch is a hard stop (blocking error screen).
 */

import { InputState } from "./input.js";
import {
  ProtocolError,
  RecordCommand,
  ServerFrame,
  StateFrame,
  parseServerFrame,
  recordCommand,
  resetCommand,
  wrenchCommand,
} from "./protocol.js";
import { ClientState } from "./state.js";

export const WRENCH_RATE_HZ = 50;

export interface SocketLike {
  readyState: number;
  send(data: string): void;
  close(): void;
}

export class TeleopClient {
  readonly state = new ClientState();
  readonly input = new InputState();
  onFrame: ((frame: ServerFrame) => void) | null = null;
  private wasActive = false;
  private lastTick = 0;

  constructor(private socket: SocketLike, private now: () => number = () => performance.now()) {}

  handleOpen(): void {
    this.state.opened(this.now());
  }

  handleClose(): void {
    this.state.closed();
  }

  handleMessage(text: string): void {
    let frame: ServerFrame;
    try {
      frame = parseServerFrame(text);
    } catch (err) {
      if (err instanceof ProtocolError && err.reason === "bad_version") {
        this.state.versionError();
        this.socket.close();
        return;
      }
      // malformed frame: log and keep the last good state
      console.warn("dropping malformed frame", err);
      return;
    }
    this.state.applyServer(frame, this.now());
    this.onFrame?.(frame);
  }

  /** One 50 Hz tick: advance input decay, emit wrench traffic. */
  tick(): void {
    const now = this.now();
    const dt = this.lastTick ? Math.min(0.1, (now - this.lastTick) / 1000) : 1 / WRENCH_RATE_HZ;
    this.lastTick = now;
    this.input.tick(dt);
    this.state.checkStale(now);
    if (this.socket.readyState !== 1 /* OPEN */) return;
    const active = this.input.active;
    if (active || this.wasActive) {
      this.socket.send(JSON.stringify(wrenchCommand(this.input.deflection)));
    }
    this.wasActive = active;
  }

  record(action: RecordCommand["action"]): void {
    if (!this.state.controlsEnabled()) return;
    this.socket.send(JSON.stringify(recordCommand(action)));
  }

  reset(start: "random" | "goal_offset"): void {
    if (!this.state.controlsEnabled()) return;
    this.socket.send(JSON.stringify(resetCommand(start)));
  }

  lastState(): StateFrame | null {
    return this.state.lastFrame;
  }
}
