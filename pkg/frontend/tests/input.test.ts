import { describe, expect, it } from "vitest";

import { DEADZONE, InputState, KEY_BINDINGS } from "../src/input.js";

describe("keyboard steering", () => {
  it("no input gives all zeros", () => {
    const input = new InputState();
    input.tick(0.02);
    expect([...input.deflection]).toEqual([0, 0, 0, 0, 0, 0]);
    expect(input.active).toBe(false);
  });

  it("full forward maps one axis to +-1", () => {
    const input = new InputState();
    input.keyDown("KeyW");
    input.tick(0.02);
    expect([...input.deflection]).toEqual([0, 1, 0, 0, 0, 0]);
  });

  it("unbound keys are ignored", () => {
    const input = new InputState();
    expect(input.keyDown("Escape")).toBe(false);
    input.tick(0.02);
    expect(input.active).toBe(false);
  });

  it("springs back to zero within 100 ms of release", () => {
    const input = new InputState();
    input.keyDown("KeyD");
    input.tick(0.02);
    expect(input.deflection[0]).toBe(1);
    input.keyUp("KeyD");
    for (let i = 0; i < 5; i++) input.tick(0.02);   // 100 ms
    expect(input.deflection[0]).toBe(0);
  });

  it("decay is gradual, not a step", () => {
    const input = new InputState();
    input.keyDown("KeyR");
    input.tick(0.02);
    input.keyUp("KeyR");
    input.tick(0.02);
    expect(input.deflection[2]).toBeGreaterThan(0);
    expect(input.deflection[2]).toBeLessThan(1);
  });

  it("every bound axis is reachable in both directions", () => {
    const seen = new Set<string>();
    for (const [axis, sign] of Object.values(KEY_BINDINGS)) {
      seen.add(`${axis}:${sign}`);
    }
    expect(seen.size).toBe(12);
  });
});

describe("gamepad steering", () => {
  it("applies the deadzone", () => {
    const input = new InputState();
    input.setGamepadAxes([0.03, -0.04, DEADZONE - 1e-9, 0, 0, 0]);
    input.tick(0.02);
    expect([...input.deflection]).toEqual([0, 0, 0, 0, 0, 0]);
  });

  it("passes axes beyond the deadzone, clamped", () => {
    const input = new InputState();
    input.setGamepadAxes([0.5, -1.5, 0, 0, 0.06, 0]);
    input.tick(0.02);
    expect(input.deflection[0]).toBe(0.5);
    expect(input.deflection[1]).toBe(-1);
    expect(input.deflection[4]).toBe(0.06);
  });

  it("a keyboard event takes the input source back", () => {
    const input = new InputState();
    input.setGamepadAxes([0.5, 0, 0, 0, 0, 0]);
    input.tick(0.02);
    input.keyDown("KeyA");
    input.tick(0.02);
    expect(input.deflection[0]).toBe(-1);
  });
});
