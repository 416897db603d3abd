import { describe, expect, it } from "vitest";

import {
  FT_COLS,
  FT_ROWS,
  IMAGE_BYTES,
  PROPRIO_DIMS,
  actionMessage,
  controlMessage,
  decodeImage,
  parseServerMessage,
} from "../src/protocol.js";

function obsFrame(overrides: Record<string, unknown> = {}): string {
  return JSON.stringify({
    type: "obs",
    step: 3,
    image_left: encodeBytes(IMAGE_BYTES),
    image_right: encodeBytes(IMAGE_BYTES),
    ft_window: Array.from({ length: FT_ROWS }, () => new Array(FT_COLS).fill(0.25)),
    proprio: new Array(PROPRIO_DIMS).fill(0.5),
    status: "running",
    ...overrides,
  });
}

function encodeBytes(n: number): string {
  let binary = "";
  for (let i = 0; i < n; i++) binary += String.fromCharCode(i % 256);
  return btoa(binary);
}

describe("decodeImage", () => {
  it("a full image payload is 4*ceil(21168/3) base64 chars and decodes to 21168 bytes", () => {
    const b64 = encodeBytes(IMAGE_BYTES);
    expect(IMAGE_BYTES).toBe(21168);
    expect(b64.length).toBe(4 * Math.ceil(21168 / 3)); // 28224
    const bytes = decodeImage(b64);
    expect(bytes.length).toBe(21168);
    expect(bytes[0]).toBe(0);
    expect(bytes[257]).toBe(1);
  });

  it("rejects payloads of the wrong size", () => {
    expect(() => decodeImage(btoa("short"))).toThrow(/expected 21168/);
  });
});

describe("parseServerMessage", () => {
  it("accepts a well-formed observation frame", () => {
    const msg = parseServerMessage(obsFrame());
    expect(msg).not.toBeNull();
    expect(msg!.type).toBe("obs");
    if (msg!.type === "obs") {
      expect(msg!.step).toBe(3);
      expect(msg!.ft_window.length).toBe(32);
      expect(msg!.proprio.length).toBe(14);
    }
  });

  it("keeps optional replay and attention fields", () => {
    const msg = parseServerMessage(obsFrame({ demo_steps: 40 }));
    expect(msg!.type === "obs" && msg!.demo_steps).toBe(40);
  });

  it.each([
    ["not json", "{{{"],
    ["no type", JSON.stringify({ step: 1 })],
    ["unknown type", JSON.stringify({ type: "telemetry" })],
    ["short ft window", obsFrame({ ft_window: [[1, 2, 3]] })],
    ["wrong proprio arity", obsFrame({ proprio: [1, 2, 3] })],
    ["bad status", obsFrame({ status: "paused" })],
    ["non-numeric ft", obsFrame({
      ft_window: Array.from({ length: 32 }, () => new Array(12).fill("x")),
    })],
  ])("rejects %s", (_name, text) => {
    expect(parseServerMessage(text)).toBeNull();
  });

  it("accepts the ack and error frame shapes", () => {
    expect(parseServerMessage(JSON.stringify({ type: "saved", demo_id: "d0" })))
      .toEqual({ type: "saved", demo_id: "d0" });
    expect(parseServerMessage(JSON.stringify({ type: "discarded" })))
      .toEqual({ type: "discarded" });
    expect(parseServerMessage(JSON.stringify({ type: "error", error: "nope" })))
      .toEqual({ type: "error", error: "nope" });
    expect(parseServerMessage(JSON.stringify({ type: "error" }))).toBeNull();
  });
});

describe("client message builders", () => {
  it("builds action frames", () => {
    expect(actionMessage(0.5, 0.5, 0.5)).toEqual({ type: "action", ax: 0.5, ay: 0.5, az: 0.5 });
  });

  it("builds control frames with optional fields", () => {
    expect(controlMessage("start", { seed: 7 })).toEqual({ type: "control", cmd: "start", seed: 7 });
    expect(controlMessage("save")).toEqual({ type: "control", cmd: "save" });
  });
});
