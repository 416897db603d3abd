/** Message types and codecs for the session WebSocket protocol.
 *
 * The server speaks JSON text frames: observation frames carry two base64
 * raw-RGB wrist images (84x84x3 bytes each), a 32x12 force/torque window,
 * a 14-number proprioception vector, an episode status, and optionally an
 * attention report and (in replay mode) the stored demo length. Every
 * client action message is answered by exactly one observation frame.
 */

export const IMAGE_SIDE = 84;
export const IMAGE_CHANNELS = 3;
export const IMAGE_BYTES = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS; // 21168
export const FT_ROWS = 32;
export const FT_COLS = 12;
export const PROPRIO_DIMS = 14;

export type Status = "running" | "success" | "failed";

export interface AttentionReport {
  /** Fractions of cross-attention mass per modality; sum to 1 (or all 0). */
  proportions: { vision_left: number; vision_right: number; tactile: number };
  /** Two per-view grids (left, right), each side x side, summing with tactile to 1. */
  vision_heatmaps: number[][][];
  /** Per-timestep weight over the 32-row F/T window. */
  tactile_weights: number[];
}

export interface ObsMessage {
  type: "obs";
  step: number;
  image_left: string;
  image_right: string;
  ft_window: number[][];
  proprio: number[];
  status: Status;
  attention?: AttentionReport;
  demo_steps?: number;
}

export interface SavedMessage {
  type: "saved";
  demo_id: string;
}

export interface DiscardedMessage {
  type: "discarded";
}

export interface ErrorMessage {
  type: "error";
  error: string;
}

export type ServerMessage =
  | ObsMessage
  | SavedMessage
  | DiscardedMessage
  | ErrorMessage;

export interface ActionMessage {
  type: "action";
  ax: number;
  ay: number;
  az: number;
}

export interface ControlMessage {
  type: "control";
  cmd: "start" | "reset" | "save" | "discard";
  spec?: unknown;
  seed?: number;
  demo_id?: string;
}

export function actionMessage(ax: number, ay: number, az: number): ActionMessage {
  return { type: "action", ax, ay, az };
}

export function controlMessage(
  cmd: ControlMessage["cmd"],
  extra: Omit<ControlMessage, "type" | "cmd"> = {},
): ControlMessage {
  return { type: "control", cmd, ...extra };
}

const STATUSES = new Set(["running", "success", "failed"]);

function isNumberArray(value: unknown, length?: number): value is number[] {
  return (
    Array.isArray(value) &&
    (length === undefined || value.length === length) &&
    value.every((x) => typeof x === "number" && Number.isFinite(x))
  );
}

/** Parse one server frame; malformed frames return null (caller logs and skips). */
export function parseServerMessage(text: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  switch (msg["type"]) {
    case "obs": {
      if (
        typeof msg["step"] !== "number" ||
        typeof msg["image_left"] !== "string" ||
        typeof msg["image_right"] !== "string" ||
        !Array.isArray(msg["ft_window"]) ||
        msg["ft_window"].length !== FT_ROWS ||
        !msg["ft_window"].every((row) => isNumberArray(row, FT_COLS)) ||
        !isNumberArray(msg["proprio"], PROPRIO_DIMS) ||
        !STATUSES.has(msg["status"] as string)
      ) {
        return null;
      }
      return msg as unknown as ObsMessage;
    }
    case "saved":
      return typeof msg["demo_id"] === "string" ? (msg as unknown as SavedMessage) : null;
    case "discarded":
      return { type: "discarded" };
    case "error":
      return typeof msg["error"] === "string" ? (msg as unknown as ErrorMessage) : null;
    default:
      return null;
  }
}

/** Decode a base64 raw-RGB image payload; enforces the exact byte count. */
export function decodeImage(b64: string): Uint8Array {
  const binary = atob(b64);
  if (binary.length !== IMAGE_BYTES) {
    throw new Error(`image payload is ${binary.length} bytes, expected ${IMAGE_BYTES}`);
  }
  const bytes = new Uint8Array(IMAGE_BYTES);
  for (let i = 0; i < IMAGE_BYTES; i++) bytes[i] = binary.charCodeAt(i);
  return bytes;
}
