"""Episode drivers: run policies, collect step records, replay action tails.

A policy here is any callable (observation, state) -> action in [0,1]^n.
The scripted expert reads the privileged state; learned policies read the
observation. Batched lockstep execution exists purely for evaluation speed;
it is step-for-step identical to running episodes one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom, sensors, simcore
from .simcore import SimConfig, WorldState, init_episode, step
from .variations import VariationSpec

# Seed-stream tag separating observation-noise draws from the episode stream.
NOISE_STREAM_TAG = 915237


def noise_rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, NOISE_STREAM_TAG)))


@dataclass
class EpisodeRecord:
    """Per-step arrays of one finished episode (observations before actions)."""

    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    success: bool = False
    failure: str | None = None
    steps: int = 0
    initial_offset: tuple[float, float] = (0.0, 0.0)
    final_state: WorldState | None = None


def run_episode(
    policy,
    spec: VariationSpec,
    seed: int,
    config: SimConfig,
    record: bool = False,
    noise_rng: np.random.Generator | None = None,
) -> EpisodeRecord:
    """Roll one episode to termination.

    Actions coming back from the policy are quantized to float32 before the
    simulator sees them, so a stored demonstration replays bit-exactly.
    """
    state = init_episode(seed, spec, config)
    if noise_rng is None:
        noise_rng = noise_rng_for(seed)
    history = sensors.ft_prefill(state.last_wrench_moving, state.last_wrench_compliant)
    rec = EpisodeRecord(initial_offset=(float(state.lateral_offset[0]), float(state.lateral_offset[1])))
    while not state.done:
        obs = sensors.observe(state, history, spec, rng=noise_rng, config=config)
        action = np.asarray(policy(obs, state), dtype=np.float64)
        action = action.astype(np.float32).astype(np.float64)
        state, info = step(state, action, config)
        history = sensors.push_ft(history, info.wrench_moving, info.wrench_compliant)
        if record:
            rec.observations.append(obs)
            rec.actions.append(action.astype(np.float32))
    rec.success = state.success
    rec.failure = state.failure.value if state.failure else None
    rec.steps = state.step
    rec.final_state = state
    return rec


def replay_episode(
    initial_offset: tuple[float, float],
    actions: np.ndarray,
    spec: VariationSpec,
    config: SimConfig,
    noise_rng: np.random.Generator | None = None,
    record: bool = True,
    spec_per_step=None,
) -> EpisodeRecord:
    """Re-run a recorded action sequence from a forced initial offset.

    Every recorded action is executed even if success happens early (the
    terminal flags latch), so the replayed episode has exactly the parent's
    length and action sequence. spec_per_step, when given, is called with
    the step index and must return the VariationSpec used for that step's
    observation only (dynamics always follow `spec`).
    """
    state = init_episode(0, spec, config)
    state.lateral_offset = np.asarray(initial_offset, dtype=np.float64).copy()
    # Recompute the initial contact wrench at the forced offset.
    q = geom.contact_query(state.peg, state.cavity, state.lateral_offset, config.grid_pitch)
    w_m, w_c = simcore.compute_wrench(state, q, np.zeros(2), config)
    state.last_wrench_moving = simcore.wrist_wrench(w_m, state.peg_grasp)
    state.last_wrench_compliant = simcore.wrist_wrench(w_c, state.hole_grasp)

    if noise_rng is None:
        noise_rng = noise_rng_for(0)
    history = sensors.ft_prefill(state.last_wrench_moving, state.last_wrench_compliant)
    rec = EpisodeRecord(initial_offset=(float(state.lateral_offset[0]), float(state.lateral_offset[1])))
    for t, action in enumerate(np.asarray(actions, dtype=np.float64)):
        obs_spec = spec_per_step(t) if spec_per_step is not None else spec
        obs = sensors.observe(state, history, obs_spec, rng=noise_rng, config=config)
        state, info = step(state, action, config, ignore_done=True)
        history = sensors.push_ft(history, info.wrench_moving, info.wrench_compliant)
        if record:
            rec.observations.append(obs)
            rec.actions.append(np.asarray(action, dtype=np.float32))
    rec.success = state.success
    rec.failure = state.failure.value if state.failure else None
    rec.steps = state.step
    rec.final_state = state
    return rec


def run_episodes_lockstep(
    policy_batch,
    specs: list[VariationSpec],
    seeds: list[int],
    config: SimConfig,
) -> list[EpisodeRecord]:
    """Run many episodes in lockstep with a batched policy.

    policy_batch(observations, states) -> (n, action_dims) array; it is
    called once per timestep with the still-active episodes only.
    """
    n = len(specs)
    states = [init_episode(seed, spec, config) for seed, spec in zip(seeds, specs)]
    noise_rngs = [noise_rng_for(seed) for seed in seeds]
    histories = [
        sensors.ft_prefill(s.last_wrench_moving, s.last_wrench_compliant) for s in states
    ]
    records = [
        EpisodeRecord(initial_offset=(float(s.lateral_offset[0]), float(s.lateral_offset[1])))
        for s in states
    ]
    active = list(range(n))
    while active:
        obs_list = [
            sensors.observe(states[i], histories[i], specs[i], rng=noise_rngs[i], config=config)
            for i in active
        ]
        state_list = [states[i] for i in active]
        actions = np.asarray(policy_batch(obs_list, state_list), dtype=np.float64)
        actions = actions.astype(np.float32).astype(np.float64)
        still = []
        for row, i in enumerate(active):
            new_state, info = step(states[i], actions[row], config)
            histories[i] = sensors.push_ft(histories[i], info.wrench_moving, info.wrench_compliant)
            states[i] = new_state
            if new_state.done:
                records[i].success = new_state.success
                records[i].failure = new_state.failure.value if new_state.failure else None
                records[i].steps = new_state.step
                records[i].final_state = new_state
            else:
                still.append(i)
        active = still
    return records


def expert_policy(config: SimConfig):
    """The scripted expert wrapped in the common policy interface."""
    from .expert import expert_action

    def policy(obs, state):
        return expert_action(state, config)

    return policy


def expert_policy_batch(config: SimConfig):
    from .expert import expert_action

    def policy_batch(observations, states):
        return np.stack([expert_action(s, config) for s in states])

    return policy_batch
