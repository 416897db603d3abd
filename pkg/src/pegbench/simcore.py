"""Quasi-static dual-arm insertion simulator.

The moving arm holds the peg and takes normalized delta actions; the
compliant arm holds the hole block and pushes with constant force, advancing
the insertion whenever the cross-sections line up. All dynamics live in the
shared object frame (objects stay axis-aligned; grasps only re-express
observations), which is what makes trajectory replay exact.

Frame conventions: +z is the insertion axis (peg advances toward +z),
x/y span the lateral cross-section plane. The contact wrench reported for
the moving arm uses the object frame; wrist_wrench re-expresses it.
Sign convention: with lateral offset +x, the moving-arm object-frame torque
has tau_y > 0; with offset +y, tau_x < 0. Flipping the offset flips the sign.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import geom
from .variations import GraspTransform, VariationSpec


class TerminalState(RuntimeError):
    """Raised when stepping or querying an already finished episode."""


class FailureCause(enum.Enum):
    HORIZON = "horizon_exceeded"
    FORCE_TORQUE = "force_torque_exceeded"


@dataclass(frozen=True)
class SimConfig:
    push_force: float = 15.0  # N, compliant arm constant push
    advance_rate: float = 2.5  # mm per step while insertable
    hole_depth: float = 25.0  # mm
    friction_mu: float = 0.3
    wall_stiffness: float = 40.0  # N per mm of clamped lateral excess
    max_delta: float = 2.0  # mm per step per axis
    horizon: int = 200
    success_thresholds: tuple[float, float, float] = (2.0, 2.0, 10.0)
    ft_fail_force: float = 100.0  # N
    ft_fail_torque: float = 6.0  # N*m
    grid_pitch: float = 0.5  # mm, contact query sampling
    hole_tolerance: float = 5.0  # mm, cavity dilation
    action_dims: int = 3  # 2 drops the insertion-axis action component

    def __post_init__(self) -> None:
        positive = (
            self.push_force, self.advance_rate, self.hole_depth, self.friction_mu,
            self.wall_stiffness, self.max_delta, self.horizon, self.ft_fail_force,
            self.ft_fail_torque, self.grid_pitch, self.hole_tolerance,
        )
        if any(v <= 0 for v in positive) or any(d <= 0 for d in self.success_thresholds):
            raise ValueError("SimConfig values must be positive")
        if self.max_delta * self.horizon <= 60.0:
            raise ValueError("horizon too short to traverse the worst-case offset")
        if self.action_dims not in (2, 3):
            raise ValueError("action_dims must be 2 or 3")

    def to_json(self) -> dict:
        return {
            "push_force": self.push_force,
            "advance_rate": self.advance_rate,
            "hole_depth": self.hole_depth,
            "friction_mu": self.friction_mu,
            "wall_stiffness": self.wall_stiffness,
            "max_delta": self.max_delta,
            "horizon": self.horizon,
            "success_thresholds": list(self.success_thresholds),
            "ft_fail_force": self.ft_fail_force,
            "ft_fail_torque": self.ft_fail_torque,
            "grid_pitch": self.grid_pitch,
            "hole_tolerance": self.hole_tolerance,
            "action_dims": self.action_dims,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "success_thresholds" in d:
            d["success_thresholds"] = tuple(d["success_thresholds"])
        return cls(**d)


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray  # (3,) N
    torque: np.ndarray  # (3,) N*m

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=np.float64).reshape(3))
        object.__setattr__(self, "torque", np.asarray(self.torque, dtype=np.float64).reshape(3))
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.torque))):
            raise ValueError("non-finite wrench")

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3))

    def negated(self) -> "Wrench":
        return Wrench(-self.force, -self.torque)

    def row(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


@dataclass(frozen=True)
class StepInfo:
    wrench_moving: Wrench  # wrist frame, moving arm
    wrench_compliant: Wrench  # wrist frame, compliant arm
    success: bool
    failure: FailureCause | None

    def __post_init__(self):
        if self.success and self.failure is not None:
            raise ValueError("success and failure are mutually exclusive")


@dataclass
class WorldState:
    lateral_offset: np.ndarray  # (2,) mm, peg minus hole
    depth: float  # mm inserted
    step: int
    peg_grasp: GraspTransform
    hole_grasp: GraspTransform
    spec: VariationSpec
    rng: np.random.Generator
    last_wrench_moving: Wrench  # wrist frame
    last_wrench_compliant: Wrench  # wrist frame
    done: bool = False
    success: bool = False
    failure: FailureCause | None = None
    # Geometry is a pure function of spec; cached here to keep step() fast.
    peg: geom.Polygon2 = field(repr=False, default=None)
    cavity: geom.Polygon2 = field(repr=False, default=None)

    def copy_shallow(self) -> "WorldState":
        return replace(self, lateral_offset=self.lateral_offset.copy())


def episode_polygons(spec: VariationSpec, config: SimConfig) -> tuple[geom.Polygon2, geom.Polygon2]:
    peg = geom.build_shape(spec.shape, 1.0)
    cavity = geom.dilate(peg, config.hole_tolerance)
    return peg, cavity


def init_episode(seed: int, spec: VariationSpec, config: SimConfig) -> WorldState:
    """Fresh episode: offset magnitudes U[15,30] mm with random signs.

    Draw order per axis is (magnitude, sign) for x then y, from the episode
    stream; the same stream later feeds the expert's dither.
    """
    rng = np.random.default_rng(seed)
    offset = np.empty(2)
    for axis in range(2):
        magnitude = rng.uniform(15.0, 30.0)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        offset[axis] = magnitude * sign
    peg, cavity = episode_polygons(spec, config)
    state = WorldState(
        lateral_offset=offset,
        depth=0.0,
        step=0,
        peg_grasp=spec.grasp_peg,
        hole_grasp=spec.grasp_hole,
        spec=spec,
        rng=rng,
        last_wrench_moving=Wrench.zero(),
        last_wrench_compliant=Wrench.zero(),
        peg=peg,
        cavity=cavity,
    )
    q = geom.contact_query(peg, cavity, offset, config.grid_pitch)
    w_m, w_c = compute_wrench(state, q, np.zeros(2), config)
    state.last_wrench_moving = wrist_wrench(w_m, state.peg_grasp)
    state.last_wrench_compliant = wrist_wrench(w_c, state.hole_grasp)
    return state


def compute_wrench(
    state: WorldState,
    q: geom.ContactQuery,
    lateral_velocity: np.ndarray,
    config: SimConfig,
    wall_excess: np.ndarray | None = None,
) -> tuple[Wrench, Wrench]:
    """Object-frame wrenches on (moving arm, compliant arm).

    Blocked face contact: the push is fully resisted (normal force
    -push_force along +z), sliding the peg across the face adds Coulomb
    friction against the lateral velocity, and the torque is r x F with
    r = (blocked_centroid, 0) in meters. While inserted or advancing, only
    sliding resistance remains (full push when bottomed out), plus the
    spring force of any clamped wall excess passed by step().
    """
    push = config.push_force
    vel = np.asarray(lateral_velocity, dtype=np.float64).reshape(2)
    force = np.zeros(3)
    torque = np.zeros(3)
    if state.depth == 0.0 and not q.insertable:
        force[2] = -push
        speed = float(np.hypot(vel[0], vel[1]))
        if speed > 0.0:
            force[:2] = -config.friction_mu * push * vel / speed
        r = np.array([q.blocked_centroid[0], q.blocked_centroid[1], 0.0]) / 1000.0
        torque = np.cross(r, force)
    else:
        if state.depth >= config.hole_depth:
            force[2] = -push
        else:
            force[2] = -config.friction_mu * push
        if wall_excess is not None:
            excess = np.asarray(wall_excess, dtype=np.float64).reshape(2)
            force[:2] += -config.wall_stiffness * excess
    moving = Wrench(force, torque)
    return moving, moving.negated()


def wrist_wrench(object_wrench: Wrench, grasp: GraspTransform) -> Wrench:
    """Adjoint re-expression of an object-frame wrench at the wrist."""
    r, t_mm = grasp.rigid()
    f = r @ object_wrench.force
    tau = r @ object_wrench.torque + np.cross(t_mm / 1000.0, f)
    return Wrench(f, tau)


def check_success(state: WorldState, config: SimConfig) -> bool:
    """Lateral offsets strictly inside d_x, d_y and depth within d_z of full."""
    dx, dy, dz = config.success_thresholds
    return (
        abs(float(state.lateral_offset[0])) < dx
        and abs(float(state.lateral_offset[1])) < dy
        and config.hole_depth - state.depth <= dz
    )


def _clamp_to_cavity(
    state: WorldState, proposed: np.ndarray, config: SimConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Largest step toward `proposed` that keeps the inserted peg clear.

    Returns (reached offset, clamped excess vector). Bisection on the step
    fraction; the current offset is insertable by induction.
    """
    q = geom.contact_query(state.peg, state.cavity, proposed, config.grid_pitch)
    if q.insertable:
        return proposed, np.zeros(2)
    start = state.lateral_offset
    delta = proposed - start
    lo, hi = 0.0, 1.0
    for _ in range(14):
        mid = 0.5 * (lo + hi)
        trial = start + mid * delta
        if geom.contact_query(state.peg, state.cavity, trial, config.grid_pitch).insertable:
            lo = mid
        else:
            hi = mid
    reached = start + lo * delta
    return reached, (1.0 - lo) * delta


def step(
    state: WorldState,
    action: np.ndarray,
    config: SimConfig,
    ignore_done: bool = False,
) -> tuple[WorldState, StepInfo]:
    """Advance one control step. ignore_done lets replays run a recorded
    action tail after an early success; terminal flags then stay latched."""
    if state.done and not ignore_done:
        raise TerminalState(f"episode over at step {state.step}")
    action = np.asarray(action, dtype=np.float64).reshape(config.action_dims)
    if np.any(action < 0.0) or np.any(action > 1.0):
        raise ValueError(f"action outside [0,1]: {action}")
    delta = (action - 0.5) * 2.0 * config.max_delta
    delta_xy = delta[:2]
    # The insertion-axis component (when present) is absorbed by the
    # compliant coupling: the arms stay pressed together either way.

    new = state.copy_shallow()
    new.step = state.step + 1
    proposed = state.lateral_offset + delta_xy

    if state.depth == 0.0:
        q = geom.contact_query(state.peg, state.cavity, proposed, config.grid_pitch)
        new.lateral_offset = proposed
        if q.insertable:
            new.depth = min(config.advance_rate, config.hole_depth)
            w_m, w_c = compute_wrench(new, q, delta_xy, config)
        else:
            w_m, w_c = compute_wrench(new, q, delta_xy, config)
    else:
        reached, excess = _clamp_to_cavity(state, proposed, config)
        new.lateral_offset = reached
        new.depth = min(state.depth + config.advance_rate, config.hole_depth)
        q = geom.ContactQuery(True, 0.0, None)
        w_m, w_c = compute_wrench(new, q, delta_xy, config, wall_excess=excess)

    wrist_m = wrist_wrench(w_m, state.peg_grasp)
    wrist_c = wrist_wrench(w_c, state.hole_grasp)
    new.last_wrench_moving = wrist_m
    new.last_wrench_compliant = wrist_c

    if state.done:
        # Replay tail: keep the latched outcome, just move the world.
        info = StepInfo(wrist_m, wrist_c, state.success, state.failure)
        return new, info

    success = check_success(new, config)
    failure = None
    if not success:
        if _wrench_exceeds(wrist_m, config) or _wrench_exceeds(wrist_c, config):
            failure = FailureCause.FORCE_TORQUE
        elif new.step >= config.horizon:
            failure = FailureCause.HORIZON
    new.success = success
    new.failure = failure
    new.done = success or failure is not None
    return new, StepInfo(wrist_m, wrist_c, success, failure)


def _wrench_exceeds(w: Wrench, config: SimConfig) -> bool:
    return (
        float(np.linalg.norm(w.force)) > config.ft_fail_force
        or float(np.linalg.norm(w.torque)) > config.ft_fail_torque
    )


def trace_record(state: WorldState, info: StepInfo, action: np.ndarray) -> dict:
    """One JSON-lines record of a step, for episode trace export."""
    return {
        "step": state.step,
        "offset_mm": [float(v) for v in state.lateral_offset],
        "depth_mm": float(state.depth),
        "action": [float(a) for a in np.asarray(action).ravel()],
        "wrench_moving": {
            "force_n": [float(v) for v in info.wrench_moving.force],
            "torque_nm": [float(v) for v in info.wrench_moving.torque],
        },
        "wrench_compliant": {
            "force_n": [float(v) for v in info.wrench_compliant.force],
            "torque_nm": [float(v) for v in info.wrench_compliant.torque],
        },
        "success": info.success,
        "failure": info.failure.value if info.failure else None,
    }


def dump_trace(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
