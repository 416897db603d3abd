/** Client-side state for paging through a stored demonstration.
 *
 * The server's replay cursor only moves one step per action message (any
 * payload) and rewinds to 0 on a reset control, so scrubbing is planned as
 * "reset + N advances"; frames already seen come straight from the cache so
 * backward scrubs re-render instantly and only uncached steps hit the wire.
 */

import type { ObsMessage } from "./protocol.js";

export interface SliderBounds {
  min: number;
  max: number;
}

/** Slider covers every stored step: [0, demoSteps - 1], demoSteps values. */
export function sliderBounds(demoSteps: number): SliderBounds {
  return { min: 0, max: Math.max(0, demoSteps - 1) };
}

export interface SeekPlan {
  /** Send a reset control first (target is behind the server cursor). */
  reset: boolean;
  /** Number of action messages to send after the optional reset. */
  advances: number;
}

/** Plan the cheapest message sequence to move the server cursor. */
export function seekPlan(current: number, target: number): SeekPlan {
  if (target >= current) return { reset: false, advances: target - current };
  return { reset: true, advances: target };
}

export class FrameCache {
  private frames = new Map<number, ObsMessage>();

  put(obs: ObsMessage): void {
    this.frames.set(obs.step, obs);
  }

  get(step: number): ObsMessage | undefined {
    return this.frames.get(step);
  }

  has(step: number): boolean {
    return this.frames.has(step);
  }

  clear(): void {
    this.frames.clear();
  }

  get size(): number {
    return this.frames.size;
  }
}
