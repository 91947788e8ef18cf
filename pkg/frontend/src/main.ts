/** Page wiring: connect to the gateway, render, route input and buttons. */

import { TeleopClient, WRENCH_RATE_HZ } from "./client.js";
import { SceneInfo, StateFrame } from "./protocol.js";
import { SceneView } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function start(): Promise<void> {
  const host = location.hostname || "127.0.0.1";
  const port = new URLSearchParams(location.search).get("port") ?? "8732";
  const base = `http://${host}:${port}`;

  const info: SceneInfo = await (await fetch(`${base}/scene`)).json();
  const canvas = el<HTMLCanvasElement>("view");
  canvas.width = canvas.clientWidth;
  canvas.height = canvas.clientHeight;
  const view = new SceneView(canvas, info);

  const socket = new WebSocket(`ws://${host}:${port}/teleop`);
  const client = new TeleopClient(socket);
  socket.onopen = () => client.handleOpen();
  socket.onclose = () => client.handleClose();
  socket.onmessage = (ev) => client.handleMessage(String(ev.data));
  client.onFrame = (frame) => {
    if (frame.type === "state") view.update(frame as StateFrame);
  };

  document.addEventListener("keydown", (ev) => {
    if (client.input.keyDown(ev.code)) ev.preventDefault();
  });
  document.addEventListener("keyup", (ev) => {
    if (client.input.keyUp(ev.code)) ev.preventDefault();
  });

  el<HTMLButtonElement>("rec-start").onclick = () => client.record("start");
  el<HTMLButtonElement>("rec-save").onclick = () => client.record("save");
  el<HTMLButtonElement>("rec-discard").onclick = () => client.record("discard");
  el<HTMLButtonElement>("reset-random").onclick = () => client.reset("random");
  el<HTMLButtonElement>("reset-goal").onclick = () => client.reset("goal_offset");

  setInterval(() => {
    const pads = navigator.getGamepads?.() ?? [];
    const pad = pads.find((p) => p && p.axes.length >= 6);
    if (pad) client.input.setGamepadAxes(pad.axes as number[]);
    client.tick();
  }, 1000 / WRENCH_RATE_HZ);

  const hud = el<HTMLDivElement>("hud");
  const buttons = ["rec-start", "rec-save", "rec-discard"].map((id) => el<HTMLButtonElement>(id));
  const resets = ["reset-random", "reset-goal"].map((id) => el<HTMLButtonElement>(id));

  function paint(): void {
    if (client.state.connection === "version_error") {
      document.body.innerHTML =
        "<main class='fatal'>protocol version mismatch: rebuild the client " +
        "against the gateway's /protocol schema</main>";
      return;
    }
    hud.replaceChildren(...client.state.hud().map((item) => {
      const row = document.createElement("div");
      row.className = "hud-row";
      row.id = `hud-${item.id}`;
      row.textContent = `${item.label}: ${item.value}`;
      return row;
    }));
    for (const b of buttons) b.disabled = !client.state.recordControlsEnabled();
    for (const b of resets) b.disabled = !client.state.controlsEnabled();
    view.render();
    requestAnimationFrame(paint);
  }
  requestAnimationFrame(paint);
}

start().catch((err) => {
  document.body.innerHTML = `<main class='fatal'>failed to start: ${err}</main>`;
});
