"""Demonstration recording, on-disk storage, and the two augmentation modes.

A demonstration is one successful episode stored as stacked per-step arrays
plus the metadata needed to reproduce it. Trajectory-replay augmentation
re-runs a demonstration's exact action sequence from its exact initial
offset under freshly sampled variation instances, one instance per replica;
replicas whose replay does not end in success are dropped and counted. The
offline-style mode instead re-samples the visual scene at every single step
and rescales the force-torque window by a per-step constant, on purpose
breaking per-demonstration consistency.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rollout import EpisodeRecord, noise_rng_for, replay_episode, run_episode
from .sensors import FT_COLS, FT_ROWS, IMG_SIZE, PROPRIO_DIM, Observation, apply_noise
from .simcore import SimConfig
from .variations import (
    SensorNoiseInstance,
    Split,
    VariationKind,
    VariationSpec,
    compose_spec,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_MAGIC = "pegbench-demos"
DEMO_MAGIC = "pegbench-demo"
FORMAT_VERSION = 1

FT_SCALE_RANGE = (0.1, 2.0)

_DTYPES = {"uint8": np.dtype("u1"), "float32": np.dtype("<f4")}


class FormatError(Exception):
    """Stored dataset bytes do not match the expected layout."""


class DuplicateId(Exception):
    """Two demonstrations with the same id in one dataset."""


class EpisodeFailed(Exception):
    """Recording-for-training hit a failed episode."""


@dataclass
class Demonstration:
    """One episode as stacked arrays; images hold the (left, right) pair."""

    demo_id: str
    seed: int
    spec: VariationSpec
    initial_offset: tuple[float, float]
    source: str  # expert | teleop | replay
    images: np.ndarray  # (N, 2, 84, 84, 3) uint8
    ft: np.ndarray  # (N, 32, 12) float32
    proprio: np.ndarray  # (N, 14) float32
    actions: np.ndarray  # (N, action_dims) float32
    parent_id: str | None = None
    success: bool = True

    def __post_init__(self):
        n = self.actions.shape[0]
        if n < 1:
            raise ValueError("a demonstration needs at least one step")
        if self.source not in ("expert", "teleop", "replay"):
            raise ValueError(f"unknown source {self.source!r}")
        assert self.images.shape == (n, 2, IMG_SIZE, IMG_SIZE, 3)
        assert self.ft.shape == (n, FT_ROWS, FT_COLS)
        assert self.proprio.shape == (n, PROPRIO_DIM)
        assert self.images.dtype == np.uint8
        assert self.ft.dtype == np.float32
        assert self.proprio.dtype == np.float32
        assert self.actions.dtype == np.float32

    @property
    def steps(self) -> int:
        return self.actions.shape[0]

    def observation(self, t: int) -> Observation:
        return Observation(
            image_left=self.images[t, 0],
            image_right=self.images[t, 1],
            ft=self.ft[t],
            proprio=self.proprio[t],
        )

    @classmethod
    def from_record(
        cls,
        rec: EpisodeRecord,
        demo_id: str,
        seed: int,
        spec: VariationSpec,
        source: str,
        parent_id: str | None = None,
    ) -> "Demonstration":
        images = np.stack(
            [np.stack([o.image_left, o.image_right]) for o in rec.observations]
        )
        return cls(
            demo_id=demo_id,
            seed=seed,
            spec=spec,
            initial_offset=rec.initial_offset,
            source=source,
            images=images,
            ft=np.stack([o.ft for o in rec.observations]),
            proprio=np.stack([o.proprio for o in rec.observations]),
            actions=np.stack(rec.actions),
            parent_id=parent_id,
            success=rec.success,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (
            self.demo_id == other.demo_id
            and self.seed == other.seed
            and self.spec == other.spec
            and self.initial_offset == other.initial_offset
            and self.source == other.source
            and self.parent_id == other.parent_id
            and self.success == other.success
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.ft, other.ft)
            and np.array_equal(self.proprio, other.proprio)
            and np.array_equal(self.actions, other.actions)
        )


@dataclass
class Dataset:
    demos: list[Demonstration] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        ids = [d.demo_id for d in self.demos]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateId(f"duplicate demonstration ids: {dupes}")

    def __len__(self) -> int:
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)

    def ids(self) -> list[str]:
        return [d.demo_id for d in self.demos]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self.demos) == len(other.demos) and all(
            a == b for a, b in zip(self.demos, other.demos)
        )


# ---------------------------------------------------------------- recording


def record_demo(
    policy,
    spec: VariationSpec,
    seed: int,
    config: SimConfig,
    source: str = "expert",
    demo_id: str | None = None,
    require_success: bool = True,
) -> Demonstration:
    """Roll one episode and package it as a demonstration.

    Training data must come from successful episodes, so a failure raises
    EpisodeFailed unless require_success is off.
    """
    rec = run_episode(policy, spec, seed, config, record=True)
    if require_success and not rec.success:
        raise EpisodeFailed(f"episode seed={seed} failed: {rec.failure}")
    if demo_id is None:
        demo_id = f"{source}-{seed:05d}"
    return Demonstration.from_record(rec, demo_id, seed, spec, source)


def collect_demos(
    policy,
    n: int,
    kinds: set[VariationKind],
    split: Split,
    config: SimConfig,
    start_seed: int = 0,
) -> Dataset:
    """Collect n successful demonstrations over sequential seeds.

    Failed episodes are skipped (their seed is consumed), so the result
    always holds exactly n demos.
    """
    demos: list[Demonstration] = []
    seed = start_seed
    while len(demos) < n:
        spec = compose_spec(kinds, split, seed)
        try:
            demos.append(record_demo(policy, spec, seed, config))
        except EpisodeFailed as exc:
            log.info("skipping failed recording: %s", exc)
        seed += 1
    return Dataset(demos)


# ------------------------------------------------------------- augmentation


def replay_augment(
    demo: Demonstration,
    kinds: set[VariationKind],
    T: int,
    split: Split = Split.TRAIN,
    base_seed: int = 0,
    config: SimConfig | None = None,
) -> list[Demonstration]:
    """T trajectory replays of one demonstration, a fresh variation instance
    per replica, each instance held fixed for the whole replay.

    Empty kinds means the identity transformation: the replay runs under the
    parent's own spec and reproduces it bit-exactly. Replicas that do not
    end in success are dropped (and counted in the log), never returned.
    """
    if demo.source not in ("expert", "teleop"):
        raise ValueError("replay augmentation expects a first-generation demo")
    if T < 1:
        raise ValueError("T must be >= 1")
    config = config or SimConfig()
    out: list[Demonstration] = []
    drops = 0
    for t in range(1, T + 1):
        if kinds:
            spec_t = compose_spec(kinds, split, base_seed + t)
            noise_rng = noise_rng_for(base_seed + t)
            seed_t = base_seed + t
        else:
            spec_t = demo.spec
            noise_rng = noise_rng_for(demo.seed)
            seed_t = demo.seed
        rep = replay_episode(
            demo.initial_offset,
            demo.actions.astype(np.float64),
            spec_t,
            config,
            noise_rng=noise_rng,
        )
        if not rep.success:
            drops += 1
            continue
        out.append(
            Demonstration.from_record(
                rep,
                demo_id=f"{demo.demo_id}-r{t}",
                seed=seed_t,
                spec=spec_t,
                source="replay",
                parent_id=demo.demo_id,
            )
        )
    if drops:
        log.warning("replay_augment dropped %d/%d failed replicas of %s", drops, T, demo.demo_id)
    return out


def draw_ft_scale(rng: np.random.Generator) -> float:
    """Per-step force-torque scaling constant."""
    return float(rng.uniform(*FT_SCALE_RANGE))


def sample_step_visuals(
    base_seed: int, replica: int, n_steps: int, split: Split = Split.TRAIN
) -> list[VariationSpec]:
    """Independent per-step scene + camera draws for one offline replica."""
    seed_rng = np.random.default_rng(np.random.SeedSequence((base_seed, replica, 104729)))
    step_seeds = seed_rng.integers(0, 2**63 - 1, size=n_steps)
    kinds = {VariationKind.SCENE_APPEARANCE, VariationKind.CAMERA_POSE}
    return [compose_spec(kinds, split, int(s)) for s in step_seeds]


def offline_style_augment(
    demo: Demonstration,
    T: int,
    base_seed: int = 0,
    config: SimConfig | None = None,
    ft_scale_range: tuple[float, float] = FT_SCALE_RANGE,
    noise: SensorNoiseInstance | None = None,
    resample_visuals: bool = True,
) -> list[Demonstration]:
    """Per-frame augmentation baseline: scene and camera re-sampled at every
    step, force-torque history scaled by a per-step constant, Gaussian sensor
    noise added. Actions are untouched. With the scale range pinned to 1, the
    noise zeroed, and visual re-sampling off, the output equals the input.
    """
    if demo.source not in ("expert", "teleop"):
        raise ValueError("offline augmentation expects a first-generation demo")
    if T < 1:
        raise ValueError("T must be >= 1")
    config = config or SimConfig()
    if noise is None:
        noise = SensorNoiseInstance()
    base_active = frozenset(demo.spec.active - {VariationKind.SENSOR_NOISE})
    out: list[Demonstration] = []
    for t in range(1, T + 1):
        if resample_visuals:
            visuals = sample_step_visuals(base_seed, t, demo.steps)
            step_specs = [
                dataclasses.replace(
                    demo.spec, active=base_active, appearance=v.appearance, camera=v.camera
                )
                for v in visuals
            ]
        else:
            step_specs = [dataclasses.replace(demo.spec, active=base_active)] * demo.steps
        rep = replay_episode(
            demo.initial_offset,
            demo.actions.astype(np.float64),
            demo.spec,
            config,
            noise_rng=noise_rng_for(demo.seed),
            spec_per_step=lambda i: step_specs[i],
        )
        scale_rng = np.random.default_rng(np.random.SeedSequence((base_seed, t, 222333)))
        observations = []
        for obs in rep.observations:
            c = float(scale_rng.uniform(*ft_scale_range))
            obs = dataclasses.replace(obs, ft=(obs.ft.astype(np.float64) * c).astype(np.float32))
            if not noise.is_zero():
                obs = apply_noise(obs, noise, scale_rng)
            observations.append(obs)
        rep = dataclasses.replace(rep, observations=observations)
        out.append(
            Demonstration.from_record(
                rep,
                demo_id=f"{demo.demo_id}-o{t}",
                seed=base_seed + t,
                spec=demo.spec,
                source="replay",
                parent_id=demo.demo_id,
            )
        )
    return out


# ------------------------------------------------------------------ storage


def _demo_to_bytes(demo: Demonstration) -> bytes:
    tensors = {
        "images": demo.images,
        "ft": demo.ft,
        "proprio": demo.proprio,
        "actions": demo.actions,
    }
    table = []
    offset = 0
    for name, arr in tensors.items():
        dtype = "uint8" if arr.dtype == np.uint8 else "float32"
        table.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset}
        )
        offset += arr.nbytes
    header = {
        "magic": DEMO_MAGIC,
        "version": FORMAT_VERSION,
        "meta": {
            "id": demo.demo_id,
            "seed": demo.seed,
            "spec": demo.spec.to_json(),
            "initial_offset": list(demo.initial_offset),
            "source": demo.source,
            "parent_id": demo.parent_id,
            "success": demo.success,
        },
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [len(blob).to_bytes(4, "little"), blob]
    for arr in tensors.values():
        data = arr if arr.dtype == np.uint8 else arr.astype("<f4", copy=False)
        parts.append(np.ascontiguousarray(data).tobytes())
    return b"".join(parts)


def _demo_from_bytes(raw: bytes, path: Path) -> Demonstration:
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for a header length")
    hlen = int.from_bytes(raw[:4], "little")
    if len(raw) < 4 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("magic") != DEMO_MAGIC:
        raise FormatError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: version {header.get('version')} unsupported (want {FORMAT_VERSION})"
        )
    body = raw[4 + hlen :]
    arrays = {}
    expected_end = 0
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise FormatError(f"{path}: unknown dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * dtype.itemsize
        start = entry["offset"]
        if start + nbytes > len(body):
            raise FormatError(f"{path}: truncated tensor {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(body[start : start + nbytes], dtype=dtype).reshape(shape).copy()
        )
        expected_end = max(expected_end, start + nbytes)
    if expected_end != len(body):
        raise FormatError(f"{path}: {len(body) - expected_end} trailing bytes")
    meta = header["meta"]
    return Demonstration(
        demo_id=meta["id"],
        seed=meta["seed"],
        spec=VariationSpec.from_json(meta["spec"]),
        initial_offset=tuple(meta["initial_offset"]),
        source=meta["source"],
        images=arrays["images"],
        ft=arrays["ft"].astype(np.float32),
        proprio=arrays["proprio"].astype(np.float32),
        actions=arrays["actions"].astype(np.float32),
        parent_id=meta["parent_id"],
        success=meta["success"],
    )


def save(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset directory: manifest.json plus one record per demo."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "magic": MANIFEST_MAGIC,
        "version": FORMAT_VERSION,
        "count": len(dataset),
        "demos": [
            {"id": d.demo_id, "file": f"{d.demo_id}.bin", "steps": d.steps}
            for d in dataset
        ],
    }
    for demo in dataset:
        (root / f"{demo.demo_id}.bin").write_bytes(_demo_to_bytes(demo))
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load(path: str | Path) -> Dataset:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"{manifest_path} not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: unreadable: {exc}") from exc
    if manifest.get("magic") != MANIFEST_MAGIC:
        raise FormatError(f"{manifest_path}: bad magic {manifest.get('magic')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(
            f"{manifest_path}: version {manifest.get('version')} unsupported"
        )
    demos = []
    for entry in manifest["demos"]:
        file_path = root / entry["file"]
        demo = _demo_from_bytes(file_path.read_bytes(), file_path)
        if demo.demo_id != entry["id"]:
            raise FormatError(f"{file_path}: id {demo.demo_id!r} != manifest {entry['id']!r}")
        demos.append(demo)
    if manifest["count"] != len(demos):
        raise FormatError(f"{manifest_path}: count {manifest['count']} != {len(demos)}")
    return Dataset(demos)


def load_demo(path: str | Path) -> Demonstration:
    """Read one stored demonstration record (a single .bin file)."""
    file_path = Path(path)
    if not file_path.is_file():
        raise FormatError(f"{file_path} not found")
    return _demo_from_bytes(file_path.read_bytes(), file_path)


def merge(d1: Dataset, d2: Dataset) -> Dataset:
    """Union in (d1, d2) order; ids must stay unique."""
    overlap = set(d1.ids()) & set(d2.ids())
    if overlap:
        raise DuplicateId(f"ids present in both datasets: {sorted(overlap)}")
    return Dataset(list(d1.demos) + list(d2.demos))
