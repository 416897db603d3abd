/** Browser client for the session endpoint: teleoperation with live sensor
 * views, and paging/scrubbing through stored demonstrations in replay mode.
 *
 * All protocol and pixel math lives in the imported modules; this file is
 * the DOM and WebSocket glue.
 */

import {
  IMAGE_SIDE,
  actionMessage,
  controlMessage,
  decodeImage,
  parseServerMessage,
  type ObsMessage,
  type ServerMessage,
} from "./protocol.js";
import { KeyboardState, SEND_INTERVAL_MS } from "./keyboard.js";
import {
  MODALITY_COLORS,
  heatmapOverlay,
  proportionSegments,
  rgbToRgba,
  seriesPolylines,
  tactileBarHeights,
  upscaleNearest,
} from "./render.js";
import { FrameCache, seekPlan, sliderBounds } from "./replay.js";

const SCALE = 4;
const FT_COLORS = ["#e8574c", "#e8a44c", "#e8d44c", "#7bc96f", "#4c9be8", "#b48ce8"];
const RECONNECT_MS = 1000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const banner = el<HTMLDivElement>("banner");
const statusPill = el<HTMLSpanElement>("status");
const stepInfo = el<HTMLSpanElement>("stepinfo");
const logBox = el<HTMLDivElement>("log");
const replayBox = el<HTMLDivElement>("replaybox");
const slider = el<HTMLInputElement>("slider");
const sliderLabel = el<HTMLSpanElement>("sliderlabel");

function log(line: string): void {
  logBox.textContent = `${logBox.textContent}${line}\n`.split("\n").slice(-60).join("\n");
  logBox.scrollTop = logBox.scrollHeight;
}

// ----------------------------------------------------------------- session

let ws: WebSocket | null = null;
let mode: "teleop" | "replay" | "unknown" = "unknown";
let lastStatus = "disconnected";
let awaitingObs = false;
let episodeLive = false;

const keyboard = new KeyboardState();
const cache = new FrameCache();
let serverCursor = 0;
let seekTarget: number | null = null;

function send(message: object): void {
  if (ws && ws.readyState === WebSocket.OPEN) ws.send(JSON.stringify(message));
}

function connect(): void {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  ws = new WebSocket(`${scheme}://${location.host}/session`);
  ws.onopen = () => {
    banner.classList.remove("show");
    setStatus("idle");
    log("connected — press start");
  };
  ws.onmessage = (event) => {
    const message = parseServerMessage(String(event.data));
    if (message === null) {
      log(`skipped malformed frame: ${String(event.data).slice(0, 120)}`);
      awaitingObs = false;
      return;
    }
    handle(message);
  };
  ws.onclose = () => {
    banner.classList.add("show");
    setStatus("disconnected");
    episodeLive = false;
    awaitingObs = false;
    keyboard.clear();
    setTimeout(connect, RECONNECT_MS);
  };
}

function setStatus(status: string): void {
  lastStatus = status;
  statusPill.textContent = status;
  statusPill.className = `pill ${status}`;
}

function handle(message: ServerMessage): void {
  switch (message.type) {
    case "obs":
      awaitingObs = false;
      onObs(message);
      break;
    case "saved":
      episodeLive = false;
      setStatus("idle");
      log(`saved demonstration ${message.demo_id}`);
      break;
    case "discarded":
      episodeLive = false;
      setStatus("idle");
      log("episode discarded");
      break;
    case "error":
      awaitingObs = false;
      log(`server: ${message.error}`);
      break;
  }
}

function onObs(obs: ObsMessage): void {
  if (mode === "unknown") {
    mode = obs.demo_steps === undefined ? "teleop" : "replay";
    replayBox.classList.toggle("show", mode === "replay");
    log(`session mode: ${mode}`);
  }
  setStatus(obs.status);
  stepInfo.textContent = `step ${obs.step}`;
  episodeLive = mode === "teleop" && obs.status === "running";

  if (mode === "replay" && obs.demo_steps !== undefined) {
    const bounds = sliderBounds(obs.demo_steps);
    slider.min = String(bounds.min);
    slider.max = String(bounds.max);
    cache.put(obs);
    serverCursor = obs.step;
    if (seekTarget !== null && obs.step !== seekTarget) {
      pumpSeek();
      return; // render only the target frame once reached
    }
    seekTarget = null;
    slider.value = String(obs.step);
    sliderLabel.textContent = `${obs.step} / ${bounds.max}`;
  }
  render(obs);
}

// ----------------------------------------------------------------- render

function blitView(canvas: HTMLCanvasElement, b64: string, heat?: number[][]): void {
  let rgba = rgbToRgba(decodeImage(b64), IMAGE_SIDE, IMAGE_SIDE);
  if (heat) rgba = heatmapOverlay(rgba, IMAGE_SIDE, IMAGE_SIDE, heat);
  const scaled = new Uint8ClampedArray(upscaleNearest(rgba, IMAGE_SIDE, IMAGE_SIDE, SCALE));
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(scaled, IMAGE_SIDE * SCALE, IMAGE_SIDE * SCALE), 0, 0);
}

function drawStrip(canvas: HTMLCanvasElement, rows: number[][], columns: number[]): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const paths = seriesPolylines(rows, columns, canvas.width, canvas.height);
  paths.forEach((points, s) => {
    ctx.strokeStyle = FT_COLORS[s % FT_COLORS.length]!;
    ctx.lineWidth = 1.25;
    ctx.beginPath();
    points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
  });
}

function drawProprio(values: number[]): void {
  const grid = el<HTMLDivElement>("propgrid");
  const head = ["", "x", "y", "z", "qw", "qx", "qy", "qz"];
  const rows = [
    ["moving", ...values.slice(0, 7)],
    ["support", ...values.slice(7, 14)],
  ];
  grid.innerHTML = "";
  for (const h of head) {
    const cell = document.createElement("div");
    cell.className = "h";
    cell.textContent = h;
    grid.appendChild(cell);
  }
  for (const row of rows) {
    for (const v of row) {
      const cell = document.createElement("div");
      cell.textContent = typeof v === "number" ? v.toFixed(3) : String(v);
      grid.appendChild(cell);
    }
  }
}

function drawAttention(obs: ObsMessage): void {
  const bar = el<HTMLDivElement>("attnbar");
  const legend = el<HTMLDivElement>("attnlegend");
  const canvas = el<HTMLCanvasElement>("tactilebars");
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  bar.innerHTML = "";
  legend.innerHTML = "";
  if (!obs.attention) {
    legend.textContent = "no attention report (no checkpoint loaded)";
    return;
  }
  for (const seg of proportionSegments(obs.attention.proportions)) {
    const div = document.createElement("div");
    div.style.width = `${(seg.fraction * 100).toFixed(2)}%`;
    div.style.background = MODALITY_COLORS[seg.key];
    bar.appendChild(div);
    const item = document.createElement("span");
    item.innerHTML = `<span class="swatch" style="background:${MODALITY_COLORS[seg.key]}"></span>` +
      `${seg.key.replace("_", " ")} ${(seg.fraction * 100).toFixed(1)}%`;
    legend.appendChild(item);
  }
  const heights = tactileBarHeights(obs.attention.tactile_weights, canvas.height - 4);
  const barW = canvas.width / heights.length;
  ctx.fillStyle = MODALITY_COLORS.tactile;
  heights.forEach((h, i) => {
    ctx.fillRect(i * barW + 1, canvas.height - h, barW - 2, h);
  });
}

function render(obs: ObsMessage): void {
  try {
    blitView(el<HTMLCanvasElement>("viewL"), obs.image_left, obs.attention?.vision_heatmaps[0]);
    blitView(el<HTMLCanvasElement>("viewR"), obs.image_right, obs.attention?.vision_heatmaps[1]);
  } catch (err) {
    log(`skipped frame: ${String(err)}`);
    return;
  }
  drawStrip(el<HTMLCanvasElement>("ftL"), obs.ft_window, [0, 1, 2, 3, 4, 5]);
  drawStrip(el<HTMLCanvasElement>("ftR"), obs.ft_window, [6, 7, 8, 9, 10, 11]);
  drawProprio(obs.proprio);
  drawAttention(obs);
}

// ----------------------------------------------------------------- teleop

setInterval(() => {
  if (mode !== "teleop" || !episodeLive || awaitingObs) return;
  const a = keyboard.action();
  awaitingObs = true;
  send(actionMessage(a.ax, a.ay, a.az));
}, SEND_INTERVAL_MS);

window.addEventListener("keydown", (event) => {
  if (keyboard.keyDown(event.key)) event.preventDefault();
});
window.addEventListener("keyup", (event) => {
  if (keyboard.keyUp(event.key)) event.preventDefault();
});
window.addEventListener("blur", () => keyboard.clear());

// ----------------------------------------------------------------- replay

function pumpSeek(): void {
  if (seekTarget === null) return;
  const cached = cache.get(seekTarget);
  if (cached) {
    const target = seekTarget;
    seekTarget = null;
    slider.value = String(target);
    sliderLabel.textContent = `${target} / ${slider.max}`;
    setStatus(cached.status);
    stepInfo.textContent = `step ${cached.step}`;
    render(cached);
    return;
  }
  const plan = seekPlan(serverCursor, seekTarget);
  if (plan.reset) {
    serverCursor = 0;
    send(controlMessage("reset"));
  } else if (plan.advances > 0) {
    send(actionMessage(0.5, 0.5, 0.5)); // payload ignored; advances one step
  }
}

slider.addEventListener("input", () => {
  if (mode !== "replay") return;
  seekTarget = Number(slider.value);
  pumpSeek();
});

// ---------------------------------------------------------------- controls

el<HTMLButtonElement>("start").addEventListener("click", () => {
  cache.clear();
  seekTarget = null;
  const extra: { seed?: number; demo_id?: string } = {};
  const seedText = el<HTMLInputElement>("seed").value.trim();
  if (seedText !== "") extra.seed = Number(seedText);
  const demoText = el<HTMLInputElement>("demoid").value.trim();
  if (demoText !== "") extra.demo_id = demoText;
  send(controlMessage("start", extra));
});
el<HTMLButtonElement>("reset").addEventListener("click", () => {
  seekTarget = null;
  send(controlMessage("reset"));
});
el<HTMLButtonElement>("save").addEventListener("click", () => send(controlMessage("save")));
el<HTMLButtonElement>("discard").addEventListener("click", () => send(controlMessage("discard")));

connect();
