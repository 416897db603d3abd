"""The six observation-level task variation factors.

Each factor has a train and an eval instance set (disjoint where the split
table says so) and a canonical default. A VariationSpec bundles one sampled
instance per active factor and stays fixed for a whole episode.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .geom import ShapeId


class VariationKind(enum.Enum):
    GRASP_POSE = "grasp"
    PEG_HOLE_SHAPE = "shape"
    OBJECT_BODY_SHAPE = "body"
    SCENE_APPEARANCE = "scene"
    CAMERA_POSE = "camera"
    SENSOR_NOISE = "noise"


# Fixed sampling order inside compose_spec; also the CLI listing order.
KIND_ORDER = (
    VariationKind.GRASP_POSE,
    VariationKind.PEG_HOLE_SHAPE,
    VariationKind.OBJECT_BODY_SHAPE,
    VariationKind.SCENE_APPEARANCE,
    VariationKind.CAMERA_POSE,
    VariationKind.SENSOR_NOISE,
)


class Split(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"
    CANONICAL = "canonical"


TRAIN_SHAPES = (ShapeId.KEY, ShapeId.CIRCLE, ShapeId.CROSS)
EVAL_SHAPES = (
    ShapeId.ARROW,
    ShapeId.U,
    ShapeId.PENTAGON,
    ShapeId.LINE,
    ShapeId.HEXAGON,
    ShapeId.DIAMOND,
)

TRAIN_TEXTURES = tuple(range(6))
EVAL_TEXTURES = tuple(range(6, 20))

# Quarter turns about the insertion axis. 180 is kept: the appendix dropped
# it for simulator-stability reasons that do not exist in this model.
RZ_CHOICES = (0.0, 90.0, 180.0, 270.0)

THIN_WIDTH_FACTOR = 0.6
CANONICAL_OBJECT_COLOR = (168, 88, 56)  # clay red, readable on every floor

# Main text range; the appendix's 10 degrees is available by overriding this.
CAMERA_ANGLE_MAX_DEG = 5.0


class BodyShape(str, enum.Enum):
    CUBE = "cube"
    CYLINDER = "cylinder"
    OCTAGONAL_PRISM = "octagonal_prism"


TRAIN_BODIES = (BodyShape.CUBE, BodyShape.CYLINDER)
EVAL_BODIES = (BodyShape.CUBE, BodyShape.CYLINDER, BodyShape.OCTAGONAL_PRISM)


@dataclass(frozen=True)
class GraspTransform:
    """Rigid offset of a wrist relative to its grasped object."""

    t_x: float = 0.0  # mm, lateral, in [-17, 17] (x0.6 on thin bodies)
    t_z: float = 0.0  # mm, vertical, in [0, 14]
    r_y: float = 0.0  # degrees, tilt, in [-10, 10]
    r_z: float = 0.0  # degrees, quarter turns

    def rigid(self) -> tuple[np.ndarray, np.ndarray]:
        """(R, t) mapping object-frame coordinates into the wrist frame."""
        cy, sy = math.cos(math.radians(self.r_y)), math.sin(math.radians(self.r_y))
        cz, sz = math.cos(math.radians(self.r_z)), math.sin(math.radians(self.r_z))
        ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
        return rz @ ry, np.array([self.t_x, 0.0, self.t_z])

    def is_identity(self) -> bool:
        return self.t_x == 0.0 and self.t_z == 0.0 and self.r_y == 0.0 and self.r_z == 0.0


def grasp_rigid_transform(g: GraspTransform) -> tuple[np.ndarray, np.ndarray]:
    return g.rigid()


@dataclass(frozen=True)
class Lighting:
    on: bool = True
    color: tuple[int, int, int] = (255, 255, 255)
    intensity: float = 1.0


@dataclass(frozen=True)
class SceneAppearanceInstance:
    floor_texture: int = 0  # canonical id 0 is light wood
    object_color: tuple[int, int, int] = CANONICAL_OBJECT_COLOR
    lighting: Lighting = Lighting()


@dataclass(frozen=True)
class CameraPoseInstance:
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # mm per axis
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)  # unit rotation axis
    angle_deg: float = 0.0

    def rotation(self) -> np.ndarray:
        """Rodrigues rotation matrix for (axis, angle)."""
        a = np.asarray(self.axis, dtype=np.float64)
        th = math.radians(self.angle_deg)
        k = np.array(
            [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
        )
        return np.eye(3) + math.sin(th) * k + (1.0 - math.cos(th)) * (k @ k)


@dataclass(frozen=True)
class SensorNoiseInstance:
    sigma_force: float = 5.0  # N per force component
    sigma_torque: float = 0.15  # N*m per torque component
    sigma_pos: float = 1.0  # mm per position component
    sigma_rot_deg: float = 0.57  # degrees per orientation axis

    @classmethod
    def zero(cls) -> "SensorNoiseInstance":
        return cls(0.0, 0.0, 0.0, 0.0)

    def is_zero(self) -> bool:
        return (
            self.sigma_force == 0.0
            and self.sigma_torque == 0.0
            and self.sigma_pos == 0.0
            and self.sigma_rot_deg == 0.0
        )


@dataclass(frozen=True)
class BodyInstance:
    peg_body: BodyShape = BodyShape.CUBE
    hole_body: BodyShape = BodyShape.CUBE
    peg_thin: bool = False  # thin pegs shrink body width by THIN_WIDTH_FACTOR


@dataclass(frozen=True)
class VariationSpec:
    """One fully sampled task configuration, fixed for an episode."""

    active: frozenset = frozenset()
    split: Split = Split.CANONICAL
    shape: ShapeId = ShapeId.KEY
    body: BodyInstance = BodyInstance()
    grasp_peg: GraspTransform = GraspTransform()
    grasp_hole: GraspTransform = GraspTransform()
    appearance: SceneAppearanceInstance = SceneAppearanceInstance()
    camera: CameraPoseInstance = CameraPoseInstance()
    noise: SensorNoiseInstance = SensorNoiseInstance.zero()
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "active": sorted(k.value for k in self.active),
            "split": self.split.value,
            "shape": self.shape.value,
            "body": {
                "peg_body": self.body.peg_body.value,
                "hole_body": self.body.hole_body.value,
                "peg_thin": self.body.peg_thin,
            },
            "grasp_peg": vars_of_grasp(self.grasp_peg),
            "grasp_hole": vars_of_grasp(self.grasp_hole),
            "appearance": {
                "floor_texture": self.appearance.floor_texture,
                "object_color": list(self.appearance.object_color),
                "lighting": {
                    "on": self.appearance.lighting.on,
                    "color": list(self.appearance.lighting.color),
                    "intensity": self.appearance.lighting.intensity,
                },
            },
            "camera": {
                "translation": list(self.camera.translation),
                "axis": list(self.camera.axis),
                "angle_deg": self.camera.angle_deg,
            },
            "noise": {
                "sigma_force": self.noise.sigma_force,
                "sigma_torque": self.noise.sigma_torque,
                "sigma_pos": self.noise.sigma_pos,
                "sigma_rot_deg": self.noise.sigma_rot_deg,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "VariationSpec":
        app = d["appearance"]
        cam = d["camera"]
        noi = d["noise"]
        return cls(
            active=frozenset(VariationKind(k) for k in d["active"]),
            split=Split(d["split"]),
            shape=ShapeId(d["shape"]),
            body=BodyInstance(
                peg_body=BodyShape(d["body"]["peg_body"]),
                hole_body=BodyShape(d["body"]["hole_body"]),
                peg_thin=bool(d["body"]["peg_thin"]),
            ),
            grasp_peg=GraspTransform(**d["grasp_peg"]),
            grasp_hole=GraspTransform(**d["grasp_hole"]),
            appearance=SceneAppearanceInstance(
                floor_texture=int(app["floor_texture"]),
                object_color=tuple(app["object_color"]),
                lighting=Lighting(
                    on=bool(app["lighting"]["on"]),
                    color=tuple(app["lighting"]["color"]),
                    intensity=float(app["lighting"]["intensity"]),
                ),
            ),
            camera=CameraPoseInstance(
                translation=tuple(cam["translation"]),
                axis=tuple(cam["axis"]),
                angle_deg=float(cam["angle_deg"]),
            ),
            noise=SensorNoiseInstance(
                sigma_force=float(noi["sigma_force"]),
                sigma_torque=float(noi["sigma_torque"]),
                sigma_pos=float(noi["sigma_pos"]),
                sigma_rot_deg=float(noi["sigma_rot_deg"]),
            ),
            seed=int(d["seed"]),
        )


def vars_of_grasp(g: GraspTransform) -> dict:
    return {"t_x": g.t_x, "t_z": g.t_z, "r_y": g.r_y, "r_z": g.r_z}


def _sample_grasp(split: Split, rng: np.random.Generator) -> GraspTransform:
    t_x = float(rng.uniform(-17.0, 17.0))
    t_z = float(rng.uniform(0.0, 14.0))
    r_z = float(RZ_CHOICES[int(rng.integers(0, len(RZ_CHOICES)))])
    r_y = float(rng.uniform(-10.0, 10.0)) if split is Split.EVAL else 0.0
    return GraspTransform(t_x=t_x, t_z=t_z, r_y=r_y, r_z=r_z)


def _sample_body(split: Split, rng: np.random.Generator) -> BodyInstance:
    if split is Split.TRAIN:
        peg = TRAIN_BODIES[int(rng.integers(0, len(TRAIN_BODIES)))]
        hole = TRAIN_BODIES[int(rng.integers(0, len(TRAIN_BODIES)))]
        return BodyInstance(peg_body=peg, hole_body=hole, peg_thin=False)
    peg = EVAL_BODIES[int(rng.integers(0, len(EVAL_BODIES)))]
    hole = EVAL_BODIES[int(rng.integers(0, len(EVAL_BODIES)))]
    return BodyInstance(peg_body=peg, hole_body=hole, peg_thin=True)


def _sample_appearance(split: Split, rng: np.random.Generator) -> SceneAppearanceInstance:
    textures = TRAIN_TEXTURES if split is Split.TRAIN else EVAL_TEXTURES
    texture = int(textures[int(rng.integers(0, len(textures)))])
    color = tuple(int(c) for c in rng.integers(0, 256, size=3))
    if split is Split.TRAIN:
        lighting = Lighting()
    else:
        on = bool(rng.random() < 0.8)
        lcolor = tuple(int(c) for c in rng.integers(128, 256, size=3))
        intensity = float(rng.uniform(0.3, 1.0))
        lighting = Lighting(on=on, color=lcolor, intensity=intensity)
    return SceneAppearanceInstance(floor_texture=texture, object_color=color, lighting=lighting)


def _sample_camera(rng: np.random.Generator) -> CameraPoseInstance:
    translation = tuple(float(v) for v in rng.uniform(-40.0, 40.0, size=3))
    vec = rng.normal(size=3)
    norm = float(np.linalg.norm(vec))
    while norm < 1e-12:
        vec = rng.normal(size=3)
        norm = float(np.linalg.norm(vec))
    axis = tuple(float(v) for v in vec / norm)
    angle = float(rng.uniform(0.0, CAMERA_ANGLE_MAX_DEG))
    return CameraPoseInstance(translation=translation, axis=axis, angle_deg=angle)


def sample_instance(kind: VariationKind, split: Split, rng: np.random.Generator):
    """One instance of a single variation factor for the given split."""
    if split not in (Split.TRAIN, Split.EVAL):
        raise ValueError("sample_instance wants Train or Eval split")
    if kind is VariationKind.GRASP_POSE:
        return (_sample_grasp(split, rng), _sample_grasp(split, rng))
    if kind is VariationKind.PEG_HOLE_SHAPE:
        pool = TRAIN_SHAPES if split is Split.TRAIN else EVAL_SHAPES
        return pool[int(rng.integers(0, len(pool)))]
    if kind is VariationKind.OBJECT_BODY_SHAPE:
        return _sample_body(split, rng)
    if kind is VariationKind.SCENE_APPEARANCE:
        return _sample_appearance(split, rng)
    if kind is VariationKind.CAMERA_POSE:
        return _sample_camera(rng)
    if kind is VariationKind.SENSOR_NOISE:
        return SensorNoiseInstance()
    raise ValueError(f"unknown kind {kind!r}")


def canonical_spec() -> VariationSpec:
    return VariationSpec()


def compose_spec(kinds, split: Split, seed: int) -> VariationSpec:
    """Sample one instance per requested kind; everything else canonical.

    Kinds are visited in KIND_ORDER so the draw sequence, and therefore the
    spec, is a pure function of (kinds, split, seed).
    """
    kinds = frozenset(kinds)
    rng = np.random.default_rng(seed)
    spec = VariationSpec(active=kinds, split=split if kinds else Split.CANONICAL, seed=seed)
    for kind in KIND_ORDER:
        if kind not in kinds:
            continue
        inst = sample_instance(kind, split, rng)
        if kind is VariationKind.GRASP_POSE:
            spec = replace(spec, grasp_peg=inst[0], grasp_hole=inst[1])
        elif kind is VariationKind.PEG_HOLE_SHAPE:
            spec = replace(spec, shape=inst)
        elif kind is VariationKind.OBJECT_BODY_SHAPE:
            spec = replace(spec, body=inst)
        elif kind is VariationKind.SCENE_APPEARANCE:
            spec = replace(spec, appearance=inst)
        elif kind is VariationKind.CAMERA_POSE:
            spec = replace(spec, camera=inst)
        elif kind is VariationKind.SENSOR_NOISE:
            spec = replace(spec, noise=inst)
    if spec.body.peg_thin:
        # Thin bodies shrink the reachable lateral grasp range with them.
        spec = replace(
            spec,
            grasp_peg=replace(spec.grasp_peg, t_x=spec.grasp_peg.t_x * THIN_WIDTH_FACTOR),
        )
    return spec


def parse_kinds(text: str) -> frozenset:
    """Comma-separated CLI names ('grasp,shape') to a kind set."""
    if not text or text.lower() in ("none", "canonical"):
        return frozenset()
    if text.lower() == "all":
        return frozenset(KIND_ORDER)
    out = []
    for name in text.split(","):
        name = name.strip().lower()
        match = [k for k in KIND_ORDER if k.value == name]
        if not match:
            raise ValueError(f"unknown variation kind {name!r}")
        out.append(match[0])
    return frozenset(out)
