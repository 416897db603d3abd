"""Scripted expert: a proportional controller with dither, standing in for
a human teleoperator. Reads privileged simulator state."""

from __future__ import annotations

import numpy as np

from .simcore import SimConfig, TerminalState, WorldState

KP = 0.5  # proportional gain per step
DITHER_FRACTION = 0.1  # of max_delta, uniform


def expert_action(
    state: WorldState, config: SimConfig, rng: np.random.Generator | None = None
) -> np.ndarray:
    """P-control toward zero lateral offset, neutral on the insertion axis.

    The dither draws from the episode stream by default, so a fixed seed
    fixes the whole demonstration.
    """
    if state.done:
        raise TerminalState("expert asked to act in a finished episode")
    if rng is None:
        rng = state.rng
    desired = -np.clip(KP * state.lateral_offset, -config.max_delta, config.max_delta)
    dither = rng.uniform(-DITHER_FRACTION * config.max_delta, DITHER_FRACTION * config.max_delta, size=2)
    delta = np.clip(desired + dither, -config.max_delta, config.max_delta)
    action_xy = delta / (2.0 * config.max_delta) + 0.5
    if config.action_dims == 2:
        return action_xy
    return np.concatenate([action_xy, [0.5]])
