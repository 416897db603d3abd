/** Held-key to action mapping for teleoperation.
 *
 * Arrow keys drive the two lateral axes, PageUp/PageDown the insertion
 * axis. A held key pins its axis to 0.0 or 1.0; with the key released (or
 * both directions held at once) the axis returns to the neutral 0.5.
 * Actions are sampled on a fixed 10 Hz cadence so a 200-step episode takes
 * about 20 seconds of wall time.
 */

export const SEND_INTERVAL_MS = 100; // 10 Hz

export interface Action3 {
  ax: number;
  ay: number;
  az: number;
}

export const NEUTRAL: Action3 = { ax: 0.5, ay: 0.5, az: 0.5 };

/** key code -> [axis, value when held] */
const KEY_AXES: Record<string, [keyof Action3, number]> = {
  ArrowLeft: ["ax", 0.0],
  ArrowRight: ["ax", 1.0],
  ArrowDown: ["ay", 0.0],
  ArrowUp: ["ay", 1.0],
  PageUp: ["az", 0.0],
  PageDown: ["az", 1.0],
};

export class KeyboardState {
  private held = new Set<string>();

  /** Returns true when the key is one of ours (caller preventDefaults). */
  keyDown(code: string): boolean {
    if (!(code in KEY_AXES)) return false;
    this.held.add(code);
    return true;
  }

  keyUp(code: string): boolean {
    if (!(code in KEY_AXES)) return false;
    this.held.delete(code);
    return true;
  }

  /** Drop all held keys (window blur, episode end). */
  clear(): void {
    this.held.clear();
  }

  /** Current action: one direction held pins the axis, conflicts cancel. */
  action(): Action3 {
    const out: Action3 = { ...NEUTRAL };
    for (const axis of ["ax", "ay", "az"] as const) {
      const values: number[] = [];
      for (const code of this.held) {
        const entry = KEY_AXES[code];
        if (entry && entry[0] === axis) values.push(entry[1]);
      }
      if (values.length === 1) out[axis] = values[0]!;
    }
    return out;
  }
}
