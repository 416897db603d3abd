"""Behavior-cloning loop, rollout-based checkpoint selection, the evaluation
harness, success-rate-change arithmetic, and the experiment matrices.

Checkpoint selection runs short rollout batches on train-split instances of
the training variation kinds every rollout_every steps and keeps the
highest-success parameters, ties going to the later step. Final evaluation
always draws eval-split instances. Success-rate changes are computed per
seed first, then averaged.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import ndnet as nd
from .model import EncoderConfig, ModalityMask, VisuotactilePolicy
from .rollout import expert_policy, run_episode, run_episodes_lockstep
from .simcore import FailureCause, SimConfig
from .variations import KIND_ORDER, Split, VariationKind, compose_spec

log = logging.getLogger(__name__)

# The dynamics-facing factors; the usual augmentation recipe.
BASE_KINDS = frozenset(
    {VariationKind.GRASP_POSE, VariationKind.PEG_HOLE_SHAPE, VariationKind.OBJECT_BODY_SHAPE}
)
ALL_KINDS = frozenset(KIND_ORDER)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 25_000
    rollout_every: int = 1_250
    rollouts_per_eval: int = 50
    seeds: int = 6
    batch: int = 16
    lr: float = 1e-4
    mask: ModalityMask = ModalityMask()
    training_kinds: frozenset = frozenset()
    encoder: EncoderConfig = EncoderConfig()
    selection_seed_base: int = 900_000

    def __post_init__(self):
        if self.total_steps % self.rollout_every:
            raise ValueError("rollout_every must divide total_steps")
        if self.batch < 1 or self.total_steps < 1:
            raise ValueError("batch and total_steps must be positive")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """CPU-budget scale used by the acceptance checks."""
        base = dict(
            total_steps=2_000,
            rollout_every=250,
            rollouts_per_eval=10,
            seeds=3,
            batch=16,
            lr=3e-4,
        )
        base.update(overrides)
        return cls(**base)

    def to_json(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "rollout_every": self.rollout_every,
            "rollouts_per_eval": self.rollouts_per_eval,
            "seeds": self.seeds,
            "batch": self.batch,
            "lr": self.lr,
            "mask": dataclasses.asdict(self.mask),
            "training_kinds": sorted(k.value for k in self.training_kinds),
            "encoder": self.encoder.to_json(),
            "selection_seed_base": self.selection_seed_base,
        }


@dataclass
class TrainResult:
    model: VisuotactilePolicy
    seed: int
    best_step: int
    best_success: float
    log: list = field(default_factory=list)  # JSON-able {step, loss} / {step, eval_success}


@dataclass
class ConditionStats:
    attempts: int = 0
    successes: int = 0
    horizon_failures: int = 0
    ft_failures: int = 0
    total_steps: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    @property
    def mean_steps(self) -> float:
        return self.total_steps / self.attempts if self.attempts else 0.0

    def add(self, record) -> None:
        self.attempts += 1
        self.total_steps += record.steps
        if record.success:
            self.successes += 1
        elif record.failure == FailureCause.HORIZON.value:
            self.horizon_failures += 1
        elif record.failure == FailureCause.FORCE_TORQUE.value:
            self.ft_failures += 1

    def to_json(self) -> dict:
        return {
            "attempts": self.attempts,
            "successes": self.successes,
            "horizon_failures": self.horizon_failures,
            "ft_failures": self.ft_failures,
            "success_rate": self.success_rate,
            "mean_steps": self.mean_steps,
        }


def model_policy_batch(model: VisuotactilePolicy, mask: ModalityMask):
    """Wrap a trained model in the batched rollout-policy interface."""

    def policy_batch(observations, states):
        return model.act_batch(observations, mask)

    return policy_batch


# ----------------------------------------------------------------- training


def _flatten_dataset(dataset: ds.Dataset):
    images = np.concatenate([d.images for d in dataset], axis=0)
    ft = np.concatenate([d.ft for d in dataset], axis=0)
    proprio = np.concatenate([d.proprio for d in dataset], axis=0)
    actions = np.concatenate([d.actions for d in dataset], axis=0)
    return images, ft, proprio, actions


def _selection_success(
    model: VisuotactilePolicy, config: TrainConfig, sim_config: SimConfig
) -> float:
    n = config.rollouts_per_eval
    seeds = [config.selection_seed_base + i for i in range(n)]
    specs = [compose_spec(set(config.training_kinds), Split.TRAIN, s) for s in seeds]
    records = run_episodes_lockstep(
        model_policy_batch(model, config.mask), specs, seeds, sim_config
    )
    return sum(r.success for r in records) / n


def train(
    dataset: ds.Dataset,
    config: TrainConfig,
    seed: int,
    sim_config: SimConfig | None = None,
) -> TrainResult:
    """Minibatch L2 behavior cloning with rollout-selected checkpointing."""
    if len(dataset) == 0:
        raise ValueError("training needs a nonempty dataset")
    sim_config = sim_config or SimConfig()
    images, ft, proprio, actions = _flatten_dataset(dataset)
    m = actions.shape[0]
    if m < config.batch:
        raise ValueError(f"dataset has {m} steps, batch is {config.batch}")
    model = VisuotactilePolicy(config.encoder, action_dim=actions.shape[1], seed=seed)
    adam = nd.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 443221)))

    order = rng.permutation(m)
    cursor = 0
    best: tuple[float, int, list[np.ndarray] | None] = (-1.0, -1, None)
    entries: list[dict] = []
    for step in range(1, config.total_steps + 1):
        if cursor + config.batch > m:
            order = rng.permutation(m)
            cursor = 0
        idx = order[cursor : cursor + config.batch]
        cursor += config.batch
        loss = model.train_step(
            images[idx], ft[idx], proprio[idx], actions[idx], config.mask, adam
        )
        entries.append({"step": step, "loss": loss})
        if step % config.rollout_every == 0:
            rate = _selection_success(model, config, sim_config)
            entries.append({"step": step, "eval_success": rate})
            log.info("seed %d step %d: loss %.5f, selection success %.2f", seed, step, loss, rate)
            if rate >= best[0]:  # ties go to the later step
                best = (rate, step, [p.data.copy() for p in model.parameters()])

    rate, best_step, snapshot = best
    assert snapshot is not None
    for p, data in zip(model.parameters(), snapshot):
        p.data = data
    return TrainResult(model=model, seed=seed, best_step=best_step, best_success=rate, log=entries)


# --------------------------------------------------------------- evaluation


def evaluate(
    policy_batch,
    kinds: set[VariationKind] | frozenset,
    split: Split,
    n: int,
    seed_base: int,
    sim_config: SimConfig | None = None,
) -> ConditionStats:
    """n rollouts with fresh per-episode variation instances."""
    sim_config = sim_config or SimConfig()
    seeds = [seed_base + i for i in range(n)]
    specs = [compose_spec(set(kinds), split, s) for s in seeds]
    stats = ConditionStats()
    for record in run_episodes_lockstep(policy_batch, specs, seeds, sim_config):
        stats.add(record)
    return stats


def pct_change(canonical_success: float, variation_success: float) -> float:
    """Relative success-rate change; undefined (NaN) when the baseline is 0."""
    if canonical_success == 0:
        return float("nan")
    return (variation_success - canonical_success) / canonical_success


def pct_change_per_seed(canonical: list[float], variation: list[float]) -> float:
    """Per-seed changes first, then the average."""
    if len(canonical) != len(variation):
        raise ValueError("per-seed lists must align")
    return float(np.mean([pct_change(c, v) for c, v in zip(canonical, variation)]))


# ------------------------------------------------------------------ reports


@dataclass
class ConditionResult:
    condition: str
    kinds: tuple[str, ...]
    split: str
    group: str  # which trained model family (mask name, subset name, ...)
    model_seed: int
    stats: ConditionStats


@dataclass
class EvalReport:
    rows: list[ConditionResult] = field(default_factory=list)

    def conditions(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.condition not in seen:
                seen.append(r.condition)
        return seen

    def groups(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.group not in seen:
                seen.append(r.group)
        return seen

    def _per_seed_rates(self, group: str, condition: str) -> dict[int, float]:
        return {
            r.model_seed: r.stats.success_rate
            for r in self.rows
            if r.group == group and r.condition == condition
        }

    def aggregate(self, baseline: str = "canonical") -> list[dict]:
        out = []
        for group in self.groups():
            base_rates = self._per_seed_rates(group, baseline)
            for condition in self.conditions():
                rates = self._per_seed_rates(group, condition)
                if not rates:
                    continue
                values = list(rates.values())
                row = {
                    "group": group,
                    "condition": condition,
                    "seeds": len(values),
                    "mean_success": float(np.mean(values)),
                    "std_success": float(np.std(values)),
                }
                shared = sorted(set(rates) & set(base_rates))
                if shared and condition != baseline:
                    row["mean_pct_change"] = pct_change_per_seed(
                        [base_rates[s] for s in shared], [rates[s] for s in shared]
                    )
                out.append(row)
        return out

    def to_json(self) -> dict:
        return {
            "rows": [
                {
                    "condition": r.condition,
                    "kinds": list(r.kinds),
                    "split": r.split,
                    "group": r.group,
                    "model_seed": r.model_seed,
                    **r.stats.to_json(),
                }
                for r in self.rows
            ],
            "aggregates": self.aggregate(),
        }


def write_report(
    report: EvalReport,
    out_dir: str | Path,
    training_logs: dict | None = None,
    attention_traces: dict | None = None,
) -> None:
    """Emit report/: summary.md, results.csv, results.json, training_log.jsonl,
    attention/*.jsonl."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    payload = report.to_json()
    (root / "results.json").write_text(json.dumps(payload, indent=2, sort_keys=True))

    with open(root / "results.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "group",
                "condition",
                "split",
                "model_seed",
                "attempts",
                "successes",
                "success_rate",
                "horizon_failures",
                "ft_failures",
                "mean_steps",
            ]
        )
        for r in report.rows:
            s = r.stats
            writer.writerow(
                [
                    r.group,
                    r.condition,
                    r.split,
                    r.model_seed,
                    s.attempts,
                    s.successes,
                    f"{s.success_rate:.4f}",
                    s.horizon_failures,
                    s.ft_failures,
                    f"{s.mean_steps:.2f}",
                ]
            )

    lines = ["# Evaluation summary", ""]
    lines.append("| group | condition | mean success | std | % change |")
    lines.append("|---|---|---|---|---|")
    for agg in payload["aggregates"]:
        pct = agg.get("mean_pct_change")
        pct_text = "-" if pct is None else ("undefined" if math.isnan(pct) else f"{pct:+.1%}")
        lines.append(
            f"| {agg['group']} | {agg['condition']} | {agg['mean_success']:.3f} "
            f"| {agg['std_success']:.3f} | {pct_text} |"
        )
    lines.append("")
    lines.append("Success-rate changes are computed per seed, then averaged.")
    (root / "summary.md").write_text("\n".join(lines) + "\n")

    if training_logs:
        with open(root / "training_log.jsonl", "w") as f:
            for name, entries in training_logs.items():
                for entry in entries:
                    f.write(json.dumps({"run": name, **entry}) + "\n")

    if attention_traces:
        attn_dir = root / "attention"
        attn_dir.mkdir(exist_ok=True)
        for name, steps in attention_traces.items():
            with open(attn_dir / f"{name}.jsonl", "w") as f:
                for entry in steps:
                    f.write(json.dumps(entry) + "\n")


def trace_attention(
    model: VisuotactilePolicy,
    mask: ModalityMask,
    kinds: set[VariationKind] | frozenset,
    split: Split,
    seed: int,
    sim_config: SimConfig | None = None,
) -> list[dict]:
    """One rollout's per-step attention report, JSON-able."""
    sim_config = sim_config or SimConfig()
    steps: list[dict] = []

    def policy(obs, state):
        action, rep = model.act_with_attention(obs, mask)
        steps.append({"step": len(steps), **rep})
        return action

    run_episode(policy, compose_spec(set(kinds), split, seed), seed, sim_config)
    return steps


# -------------------------------------------------------------- experiments


def _augmented_dataset(
    demos: ds.Dataset,
    kinds: frozenset,
    per_demo: int,
    sim_config: SimConfig,
    base_seed: int = 100_000,
) -> ds.Dataset:
    replays: list[ds.Demonstration] = []
    for j, demo in enumerate(demos):
        replays.extend(
            ds.replay_augment(
                demo,
                set(kinds),
                per_demo,
                Split.TRAIN,
                base_seed + 1_000 * j,
                sim_config,
            )
        )
    return ds.merge(demos, ds.Dataset(replays))


_DIFFICULTY_CONDITIONS: list[tuple[str, frozenset, Split]] = [
    ("canonical", frozenset(), Split.CANONICAL),
    *[(k.value, frozenset({k}), Split.EVAL) for k in KIND_ORDER],
    ("all", ALL_KINDS, Split.EVAL),
]


def run_experiment(
    matrix: str,
    out_dir: str | Path,
    train_config: TrainConfig | None = None,
    sim_config: SimConfig | None = None,
    demo_count: int = 50,
    eval_n: int = 50,
    aug_per_demo: int = 6,
    eval_seed_base: int = 500_000,
) -> EvalReport:
    """Train the matrix's model set and evaluate it across conditions.

    matrix: difficulty | training-sets | aug-sweep | ablation.
    """
    tc = train_config or TrainConfig.desk()
    sim_config = sim_config or SimConfig()
    out_dir = Path(out_dir)
    demos = ds.collect_demos(
        expert_policy(sim_config), demo_count, set(), Split.CANONICAL, sim_config
    )
    log.info("collected %d demos", len(demos))

    # (group name, training dataset, train-config) triples.
    if matrix == "difficulty":
        groups = [("canonical-trained", demos, tc)]
    elif matrix == "training-sets":
        groups = [
            ("canonical-only", demos, tc),
            (
                "base-augmented",
                _augmented_dataset(demos, BASE_KINDS, aug_per_demo, sim_config),
                dataclasses.replace(tc, training_kinds=BASE_KINDS),
            ),
            (
                "all-augmented",
                _augmented_dataset(demos, ALL_KINDS, aug_per_demo, sim_config),
                dataclasses.replace(tc, training_kinds=ALL_KINDS),
            ),
        ]
    elif matrix == "aug-sweep":
        groups = [
            (
                f"aug-T{t}",
                _augmented_dataset(demos, BASE_KINDS, t, sim_config),
                dataclasses.replace(tc, training_kinds=BASE_KINDS),
            )
            for t in (2, 6, 10)
        ]
    elif matrix == "ablation":
        from .model import MASK_PRESETS

        groups = [
            (f"mask-{name}", demos, dataclasses.replace(tc, mask=mask))
            for name, mask in MASK_PRESETS.items()
        ]
    else:
        raise ValueError(f"unknown matrix {matrix!r}")

    report = EvalReport()
    training_logs: dict[str, list] = {}
    attention_traces: dict[str, list] = {}
    for group, data, group_tc in groups:
        for seed in range(group_tc.seeds):
            result = train(data, group_tc, seed, sim_config)
            training_logs[f"{group}-seed{seed}"] = result.log
            policy_batch = model_policy_batch(result.model, group_tc.mask)
            for condition, kinds, split in _DIFFICULTY_CONDITIONS:
                stats = evaluate(
                    policy_batch, kinds, split, eval_n, eval_seed_base, sim_config
                )
                report.rows.append(
                    ConditionResult(
                        condition=condition,
                        kinds=tuple(sorted(k.value for k in kinds)),
                        split=split.value,
                        group=group,
                        model_seed=seed,
                        stats=stats,
                    )
                )
            attention_traces[f"{group}-seed{seed}"] = trace_attention(
                result.model, group_tc.mask, frozenset(), Split.CANONICAL, 990_000 + seed, sim_config
            )
            result.model.save(
                out_dir / f"{group}-seed{seed}.ckpt",
                meta={
                    "group": group,
                    "seed": seed,
                    "best_step": result.best_step,
                    "best_selection_success": result.best_success,
                    "train_config": group_tc.to_json(),
                },
            )
    write_report(report, out_dir / "report", training_logs, attention_traces)
    return report
