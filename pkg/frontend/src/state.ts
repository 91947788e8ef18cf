/** Client-side session state and the HUD view model.
 *
 * The recording view must stay purely visual: the HUD builder is the one
 * place readouts come from, and it never emits force/torque/contact data,
 * which keeps the "no force feedback" property testable.
 */

import { AckFrame, ErrorFrame, ServerFrame, StateFrame } from "./protocol.js";

export type Connection = "connecting" | "open" | "stale" | "closed" | "version_error";

export interface HudItem { id: string; label: string; value: string }

export const STALE_AFTER_MS = 1000;

export class ClientState {
  connection: Connection = "connecting";
  lastFrame: StateFrame | null = null;
  lastFrameAt = 0;
  steering = false;
  recording = false;
  demosSaved = 0;
  lastDuration: number | null = null;
  lastError: string | null = null;
  private recordStartT: number | null = null;

  opened(nowMs: number): void {
    this.connection = "open";
    this.lastFrameAt = nowMs;
  }

  closed(): void {
    if (this.connection !== "version_error") this.connection = "closed";
  }

  versionError(): void {
    this.connection = "version_error";
  }

  applyServer(frame: ServerFrame, nowMs: number): void {
    this.lastFrameAt = nowMs;
    if (this.connection === "stale") this.connection = "open";
    switch (frame.type) {
      case "state":
        this.applyState(frame);
        break;
      case "ack":
        this.applyAck(frame);
        break;
      case "error":
        this.lastError = (frame as ErrorFrame).reason;
        break;
    }
  }

  private applyState(frame: StateFrame): void {
    if (frame.recording && !this.recording) this.recordStartT = frame.t;
    this.recording = frame.recording;
    this.steering = frame.steering;
    this.lastFrame = frame;
  }

  private applyAck(ack: AckFrame): void {
    if (!ack.ok) {
      this.lastError = `${ack.action}: ${ack.detail ?? "rejected"}`;
      return;
    }
    if (ack.action === "record:save") {
      this.demosSaved += 1;
      if (this.recordStartT !== null && this.lastFrame) {
        this.lastDuration = this.lastFrame.t - this.recordStartT;
      }
      this.recordStartT = null;
      this.recording = false;
    }
    if (ack.action === "record:discard") {
      this.recordStartT = null;
      this.recording = false;
    }
  }

  checkStale(nowMs: number): void {
    if (this.connection === "open" && nowMs - this.lastFrameAt > STALE_AFTER_MS) {
      this.connection = "stale";
    }
  }

  /** Record/reset controls are usable only when connected and steering is
   * ours (or still unclaimed, in which case the first command claims it). */
  controlsEnabled(): boolean {
    return this.connection === "open";
  }

  recordControlsEnabled(): boolean {
    return this.connection === "open" && this.steering;
  }

  /** Pose-only readouts; never force, torque, wrench or contact values. */
  hud(): HudItem[] {
    const items: HudItem[] = [
      { id: "connection", label: "link", value: this.connection },
      { id: "recording", label: "recording", value: this.recording ? "on" : "off" },
      { id: "demos", label: "demos saved", value: String(this.demosSaved) },
    ];
    if (this.lastFrame) {
      const p = this.lastFrame.object_pose;
      const g = this.lastFrame.goal_pose;
      const dist = Math.hypot(p[0] - g[0], p[1] - g[1], p[2] - g[2]);
      items.push({ id: "pose_delta", label: "distance to goal", value: `${(dist * 1000).toFixed(1)} mm` });
      items.push({
        id: "outcome", label: "outcome",
        value: this.lastFrame.outcome ?? "-",
      });
      items.push({ id: "sim_time", label: "sim time", value: `${this.lastFrame.t.toFixed(1)} s` });
    }
    if (this.lastDuration !== null) {
      items.push({ id: "last_duration", label: "last demo", value: `${this.lastDuration.toFixed(1)} s` });
    }
    if (this.lastError) {
      items.push({ id: "error", label: "last error", value: this.lastError });
    }
    return items;
  }
}
