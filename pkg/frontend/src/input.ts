/** Six-axis deflection input from keyboard or gamepad.
 *
 * Emulates a self-centering teach device: held keys push an axis toward
 * +-1, releases decay the deflection back to zero within ~100 ms, gamepad
 * axes pass through a small deadzone.  Exactly one source drives the
 * deflection at a time (whichever produced the latest event).
 */

export const DEADZONE = 0.05;
export const RELEASE_DECAY_PER_S = 14.0; // full scale to ~zero in < 100 ms

// key -> [axis, sign]; axes: 0..2 force x/y/z, 3..5 torque x/y/z
export const KEY_BINDINGS: Record<string, [number, number]> = {
  KeyD: [0, 1], KeyA: [0, -1],
  KeyW: [1, 1], KeyS: [1, -1],
  KeyR: [2, 1], KeyF: [2, -1],
  KeyK: [3, 1], KeyI: [3, -1],
  KeyJ: [4, 1], KeyL: [4, -1],
  KeyU: [5, 1], KeyO: [5, -1],
};

export type InputSource = "keyboard" | "gamepad";

export class InputState {
  deflection = new Float64Array(6);
  source: InputSource = "keyboard";
  private held = new Float64Array(6);      // keyboard targets
  private gamepad = new Float64Array(6);   // post-deadzone axes
  private gamepadActive = false;

  keyDown(code: string): boolean {
    const binding = KEY_BINDINGS[code];
    if (!binding) return false;
    this.source = "keyboard";
    this.gamepadActive = false;
    this.held[binding[0]] = binding[1];
    return true;
  }

  keyUp(code: string): boolean {
    const binding = KEY_BINDINGS[code];
    if (!binding) return false;
    if (this.held[binding[0]] === binding[1]) this.held[binding[0]] = 0;
    return true;
  }

  setGamepadAxes(axes: ArrayLike<number>): void {
    this.source = "gamepad";
    this.gamepadActive = true;
    for (let i = 0; i < 6; i++) {
      const raw = axes[i] ?? 0;
      this.gamepad[i] = Math.abs(raw) < DEADZONE ? 0 : Math.max(-1, Math.min(1, raw));
    }
  }

  /** Advance by dt seconds: track held targets, spring-return on release. */
  tick(dt: number): void {
    const target = this.gamepadActive ? this.gamepad : this.held;
    for (let i = 0; i < 6; i++) {
      const goal = target[i];
      if (goal !== 0) {
        this.deflection[i] = goal;   // held axes respond immediately
      } else {
        const v = this.deflection[i];
        const step = RELEASE_DECAY_PER_S * dt;
        this.deflection[i] = Math.abs(v) <= step ? 0 : v - Math.sign(v) * step;
      }
    }
  }

  get active(): boolean {
    return this.deflection.some((v) => v !== 0);
  }
}
