"""Command-line entry point for the whole pipeline.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 runtime failure.
Every subcommand logs its complete effective configuration (including the
PEGBENCH_SEED_OFFSET environment offset) so a run is reproducible from its
log line alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset as ds
from .model import MASK_PRESETS, VisuotactilePolicy
from .rollout import expert_policy, noise_rng_for, replay_episode
from .simcore import SimConfig
from .trainer import (
    ConditionResult,
    EvalReport,
    TrainConfig,
    evaluate,
    model_policy_batch,
    run_experiment,
    train,
    write_report,
)
from .variations import KIND_ORDER, Split, VariationKind, compose_spec, parse_kinds

log = logging.getLogger("pegbench.cli")

SEED_OFFSET_ENV = "PEGBENCH_SEED_OFFSET"

USAGE_ERROR = 1
DATA_ERROR = 2
RUNTIME_ERROR = 3

CONDITION_NAMES = ["canonical"] + [k.value for k in KIND_ORDER] + ["all"]


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this artifact reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def seed_offset() -> int:
    raw = os.environ.get(SEED_OFFSET_ENV, "0")
    try:
        return int(raw)
    except ValueError as exc:
        raise SystemExit(USAGE_ERROR) from exc


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    cfg = json.loads(text)
    if not isinstance(cfg, dict):
        raise ds.FormatError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - {"sim", "train"}
    if unknown:
        raise ds.FormatError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


def _sim_config(cfg: dict) -> SimConfig:
    section = dict(cfg.get("sim", {}))
    if "success_thresholds" in section:
        section["success_thresholds"] = tuple(section["success_thresholds"])
    return SimConfig(**section)


def _train_config(cfg: dict, desk: bool = True) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if "mask" in section:
        section["mask"] = MASK_PRESETS[section["mask"]]
    if "training_kinds" in section:
        section["training_kinds"] = frozenset(
            VariationKind(k) for k in section["training_kinds"]
        )
    return TrainConfig.desk(**section) if desk else TrainConfig(**section)


def _log_effective(command: str, payload: dict) -> None:
    log.info(
        "effective config: %s",
        json.dumps({"command": command, SEED_OFFSET_ENV: seed_offset(), **payload},
                   sort_keys=True, default=str),
    )


def _parse_conditions(text: str) -> list[tuple[str, frozenset, bool]]:
    """-> [(name, kinds, is_canonical)] in the order given."""
    out = []
    for name in text.split(","):
        name = name.strip()
        if name == "canonical":
            out.append((name, frozenset(), True))
        elif name == "all":
            out.append((name, frozenset(KIND_ORDER), False))
        else:
            out.append((name, frozenset({VariationKind(name)}), False))
    return out


# ------------------------------------------------------------- subcommands


def cmd_collect(args) -> int:
    cfg = _load_config_file(args.config)
    sim = _sim_config(cfg)
    kinds = parse_kinds(args.variations)
    split = Split(args.split) if args.split else (Split.TRAIN if kinds else Split.CANONICAL)
    if kinds and split is Split.CANONICAL:
        print("collect: --variations needs --split train or eval", file=sys.stderr)
        return USAGE_ERROR
    seed = args.seed + seed_offset()
    _log_effective("collect", {
        "policy": args.policy, "n": args.n, "seed": seed, "out": args.out,
        "variations": sorted(k.value for k in kinds), "split": split.value,
        "sim": sim.to_json(),
    })
    data = ds.collect_demos(expert_policy(sim), args.n, set(kinds), split, sim, start_seed=seed)
    ds.save(data, args.out)
    print(f"collected {len(data)} demonstrations -> {args.out}")
    return 0


def cmd_augment(args) -> int:
    cfg = _load_config_file(args.config)
    sim = _sim_config(cfg)
    kinds = parse_kinds(args.kinds)
    if args.mode == "replay" and not kinds:
        print("augment: --mode replay needs --kinds", file=sys.stderr)
        return USAGE_ERROR
    seed = args.seed + seed_offset()
    _log_effective("augment", {
        "in": getattr(args, "in"), "out": args.out, "kinds": sorted(k.value for k in kinds),
        "per_demo": args.per_demo, "mode": args.mode, "seed": seed, "sim": sim.to_json(),
    })
    data = ds.load(getattr(args, "in"))
    replicas: list[ds.Demonstration] = []
    for j, demo in enumerate(data):
        base_seed = seed + 1_000 * j
        if args.mode == "replay":
            replicas.extend(
                ds.replay_augment(demo, set(kinds), args.per_demo, Split.TRAIN, base_seed, sim)
            )
        else:
            replicas.extend(ds.offline_style_augment(demo, args.per_demo, base_seed, sim))
    merged = ds.merge(data, ds.Dataset(replicas))
    ds.save(merged, args.out)
    print(
        f"augmented {len(data)} demos with {len(replicas)} replicas "
        f"({args.mode}) -> {args.out} ({len(merged)} records)"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    sim = _sim_config(cfg)
    tc = _train_config(cfg, desk=args.desk_scale)
    tc = dataclasses.replace(tc, mask=MASK_PRESETS[args.mask])
    data = ds.load(args.data)
    # Selection rollouts mirror whatever variation kinds the data was
    # recorded or augmented under.
    data_kinds = frozenset().union(*(d.spec.active for d in data)) if len(data) else frozenset()
    tc = dataclasses.replace(tc, training_kinds=data_kinds)
    seed = args.seed + seed_offset()
    _log_effective("train", {
        "data": args.data, "out": args.out, "seed": seed,
        "train": tc.to_json(), "sim": sim.to_json(),
    })
    result = train(data, tc, seed, sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"model-seed{seed}.ckpt"
    result.model.save(ckpt, meta={
        "seed": seed,
        "best_step": result.best_step,
        "best_selection_success": result.best_success,
        "train_config": tc.to_json(),
    })
    with open(out / f"training_log-seed{seed}.jsonl", "w") as f:
        for entry in result.log:
            f.write(json.dumps(entry) + "\n")
    print(
        f"trained seed {seed}: best step {result.best_step} "
        f"(selection success {result.best_success:.2f}) -> {ckpt}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config_file(args.config)
    sim = _sim_config(cfg)
    model, meta = VisuotactilePolicy.load(args.checkpoint)
    mask_name = meta.get("train_config", {}).get("mask")
    mask = MASK_PRESETS[args.mask] if args.mask else _mask_from_meta(mask_name)
    split = Split(args.split)
    seed = args.seed + seed_offset()
    conditions = _parse_conditions(args.conditions)
    _log_effective("eval", {
        "checkpoint": args.checkpoint, "conditions": args.conditions, "split": split.value,
        "n": args.n, "seed": seed, "out": args.out, "sim": sim.to_json(),
    })
    policy_batch = model_policy_batch(model, mask)
    report = EvalReport()
    for name, kinds, is_canonical in conditions:
        stats = evaluate(
            policy_batch, kinds, Split.CANONICAL if is_canonical else split, args.n, seed, sim
        )
        report.rows.append(ConditionResult(
            condition=name,
            kinds=tuple(sorted(k.value for k in kinds)),
            split=(Split.CANONICAL if is_canonical else split).value,
            group=Path(args.checkpoint).stem,
            model_seed=int(meta.get("seed", 0)),
            stats=stats,
        ))
        print(f"{name}: {stats.successes}/{stats.attempts} "
              f"(horizon {stats.horizon_failures}, force-torque {stats.ft_failures})")
    write_report(report, Path(args.out) / "report")
    print(f"report -> {Path(args.out) / 'report'}")
    return 0


def _mask_from_meta(mask_json) -> "ModalityMask":
    from .model import ModalityMask

    if isinstance(mask_json, dict):
        return ModalityMask(**mask_json)
    return MASK_PRESETS["full"]


def cmd_experiment(args) -> int:
    cfg = _load_config_file(args.config)
    sim = _sim_config(cfg)
    tc = _train_config(cfg, desk=args.desk_scale)
    _log_effective("experiment", {
        "matrix": args.matrix, "out": args.out, "desk_scale": args.desk_scale,
        "train": tc.to_json(), "sim": sim.to_json(),
    })
    report = run_experiment(args.matrix, args.out, tc, sim)
    aggs = report.aggregate()
    for agg in aggs:
        print(f"{agg['group']} / {agg['condition']}: mean success {agg['mean_success']:.3f}")
    print(f"report -> {Path(args.out) / 'report'}")
    return 0


def cmd_replay(args) -> int:
    cfg = _load_config_file(args.config)
    sim = _sim_config(cfg)
    demo = ds.load_demo(args.demo)
    _log_effective("replay", {"demo": args.demo, "trace": args.trace, "sim": sim.to_json()})
    rec = replay_episode(
        demo.initial_offset, demo.actions, demo.spec, sim, noise_rng=noise_rng_for(demo.seed)
    )
    trace = []
    for t in range(rec.steps):
        obs = rec.observations[t]
        trace.append({
            "step": t,
            "action": [float(a) for a in demo.actions[t]],
            "ft_newest": [float(v) for v in obs.ft[-1]],
            "proprio": [float(v) for v in obs.proprio],
        })
    summary = {
        "demo_id": demo.demo_id,
        "stored_steps": demo.steps,
        "replayed_steps": rec.steps,
        "success": rec.success,
        "failure": rec.failure,
        "initial_offset": [float(v) for v in demo.initial_offset],
    }
    if args.trace:
        out_stream = open(args.out, "w") if args.out else sys.stdout
        try:
            for entry in trace:
                print(json.dumps(entry), file=out_stream)
        finally:
            if args.out:
                out_stream.close()
    print(json.dumps(summary))
    if rec.steps != demo.steps:
        print(
            f"replay diverged: stored {demo.steps} steps, replayed {rec.steps}",
            file=sys.stderr,
        )
        return RUNTIME_ERROR
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .serve import build_app

    cfg = _load_config_file(args.config)
    sim = _sim_config(cfg)
    static = args.static
    if static is None and Path("frontend/dist").is_dir():
        static = "frontend/dist"
    _log_effective("serve", {
        "port": args.port, "mode": args.mode, "checkpoint": args.checkpoint,
        "data": args.data, "static": static, "sim": sim.to_json(),
    })
    app = build_app(
        mode=args.mode,
        sim_config=sim,
        checkpoint=args.checkpoint,
        data_dir=args.data,
        static_dir=static,
    )
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="info")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> _Parser:
    parser = _Parser(prog="pegbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="record demonstrations")
    p.add_argument("--policy", choices=["expert"], default="expert")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--variations", default="", help="comma list: grasp,shape,body,scene,camera,noise")
    p.add_argument("--split", choices=[s.value for s in Split], default=None)
    p.add_argument("--config")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("augment", help="expand a dataset with replay or offline-style replicas")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", default="", help="comma list, e.g. grasp,shape,body")
    p.add_argument("--per-demo", type=int, default=6, dest="per_demo")
    p.add_argument("--mode", choices=["replay", "offline"], default="replay")
    p.add_argument("--seed", type=int, default=100_000)
    p.add_argument("--config")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="behavior-clone a policy from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--mask", choices=sorted(MASK_PRESETS), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--desk-scale", action="store_true", dest="desk_scale")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint across variation conditions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conditions", default=",".join(CONDITION_NAMES))
    p.add_argument("--split", choices=["train", "eval"], default="eval")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=500_000)
    p.add_argument("--mask", choices=sorted(MASK_PRESETS), default=None,
                   help="override the mask stored in the checkpoint")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a full trained-model matrix")
    p.add_argument("--matrix", required=True,
                   choices=["difficulty", "training-sets", "aug-sweep", "ablation"])
    p.add_argument("--desk-scale", action="store_true", dest="desk_scale")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("replay", help="re-simulate a stored demonstration")
    p.add_argument("--demo", required=True, help="path to one .bin demonstration record")
    p.add_argument("--trace", action="store_true", help="print the per-step trace as JSON lines")
    p.add_argument("--out", default=None, help="write the trace here instead of stdout")
    p.add_argument("--config")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="WebSocket session endpoint for the browser UI")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--mode", choices=["teleop", "replay"], default="teleop")
    p.add_argument("--checkpoint", default=None, help="policy whose attention replay mode shows")
    p.add_argument("--data", default=None, help="dataset directory: teleop saves here, replay reads")
    p.add_argument("--static", default=None, help="browser client asset directory to serve at /")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ds.FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (json.JSONDecodeError, ds.DuplicateId) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except KeyboardInterrupt:
        return RUNTIME_ERROR
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything
        log.exception("runtime failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
