"""Command-line entry point.

Exit codes: 0 success, 2 input/config error, 3 retrieval-domain error
(unknown micro skill).  Every run logs its fully resolved configuration to
stderr.  The default dataset path can be set via TRAJTRANSFER_DATASET.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import demos as demos_mod
from . import stats as stats_mod
from .errors import (
    ConfigError,
    DuplicateId,
    MalformedFile,
    TrajTransferError,
    UnknownSkill,
)
from .policies import export_trajectory_rows, simulate_alignment_trajectories
from .registration import estimate_delta
from .retrieval import hierarchical_retrieve, rank_candidates
from .se3 import Pose, PointCloud, transform_cloud
from .simbench import (
    Benchmark,
    RenderSpec,
    default_task,
    generate_object,
    randomize_scene,
    render_partial_cloud,
    run_rollout,
)

ENV_DATASET = "TRAJTRANSFER_DATASET"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RETRIEVAL = 3


def _read_cloud_file(path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    try:
        n = int(lines[0])
        pts = [[float(v) for v in lines[1 + i].split()] for i in range(n)]
        pts = np.array(pts, dtype=np.float64).reshape(n, 3)
    except (IndexError, ValueError) as e:
        raise MalformedFile(f"{path}: bad cloud file: {e}") from e
    return PointCloud(pts)


def _write_cloud_file(cloud: PointCloud, path) -> None:
    lines = [str(len(cloud))]
    for p in cloud.points:
        lines.append(" ".join(repr(float(v)) for v in p))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_trajectory_file(path):
    states = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 9:
            raise MalformedFile(f"{path}:{lineno}: expected 9 columns, got {len(parts)}")
        try:
            states.append(
                demos_mod.EndEffectorState(
                    Pose.from_row([float(v) for v in parts[1:8]]),
                    int(parts[8]),
                    int(parts[0]),
                )
            )
        except ValueError as e:
            raise MalformedFile(f"{path}:{lineno}: {e}") from e
    return states


def _load_or_new_dataset(path) -> demos_mod.Dataset:
    path = Path(path)
    if (path / "dataset.json").exists():
        return demos_mod.load_dataset(path)
    return demos_mod.Dataset()


def _require_dataset(path) -> demos_mod.Dataset:
    path = Path(path)
    if not (path / "dataset.json").exists():
        raise MalformedFile(f"{path}: no dataset found")
    return demos_mod.load_dataset(path)


def cmd_ingest(args) -> int:
    dataset = _load_or_new_dataset(args.dataset)
    cloud = _read_cloud_file(args.cloud)
    traj = _read_trajectory_file(args.trajectory)
    demo = dataset.ingest(args.description, cloud, traj, demo_id=args.id)
    demos_mod.save_dataset(dataset, args.dataset)
    print(demo.id)
    return EXIT_OK


def cmd_retrieve(args) -> int:
    dataset = _require_dataset(args.dataset)
    cloud = _read_cloud_file(args.cloud)
    if args.top > 1:
        ranking = rank_candidates(dataset, args.description, cloud)[: args.top]
        print(json.dumps([{"demo_id": i, "similarity": s} for i, s in ranking]))
    else:
        result = hierarchical_retrieve(dataset, args.description, cloud)
        print(json.dumps(result.to_dict()))
    return EXIT_OK


def cmd_register(args) -> int:
    dataset = _require_dataset(args.dataset)
    if args.demo_id not in dataset.demos:
        raise MalformedFile(f"demo id {args.demo_id!r} not in dataset")
    demo = dataset.demos[args.demo_id]
    cloud = _read_cloud_file(args.cloud)
    result = estimate_delta(demo, cloud)
    if args.dump_aligned:
        aligned = transform_cloud(result.delta, demo.object_cloud)
        _write_cloud_file(aligned, args.dump_aligned + "_demo_aligned.txt")
        _write_cloud_file(cloud, args.dump_aligned + "_test.txt")
    print(json.dumps(result.to_dict()))
    return EXIT_OK


def cmd_rollout(args) -> int:
    task = default_task(args.family)
    instance = generate_object(args.family, args.instance_seed)
    bench = Benchmark(demos_mod.Dataset())
    demo_scene = randomize_scene(task, instance, "controlled", args.seed)
    bench.record_demonstration(task, demo_scene)
    traces = []
    successes = 0
    for i in range(args.count):
        scene = randomize_scene(task, instance, args.mode, args.seed + 1 + i)
        res = run_rollout(bench, task, scene)
        successes += int(res.success)
        trace = res.to_trace_dict()
        trace["condition"] = f"rollout/{args.family}"
        traces.append(trace)
    if args.output:
        with open(args.output, "a") as f:
            for t in traces:
                f.write(json.dumps(t, sort_keys=True) + "\n")
    print(json.dumps({"family": args.family, "successes": successes, "trials": args.count}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{args.config}: cannot read config: {e}") from e
    if isinstance(raw, dict) and "config" in raw:  # accept a summary.json echo
        raw = raw["config"]
    config = stats_mod.ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        config.seed = args.seed
    table, trace_path = stats_mod.run_experiment(config, args.output, jobs=args.jobs)
    stats_mod.emit_report(table, config, trace_path, args.output)
    for row in table.rows:
        lo, hi = row.ci
        print(f"{row.label}: {row.k}/{row.n} = {row.phat:.3f} [{lo:.3f}, {hi:.3f}]")
    return EXIT_OK


def cmd_report(args) -> int:
    table = stats_mod.table_from_traces(args.traces)
    config = None
    if args.config:
        config = stats_mod.ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    stats_mod.emit_report(table, config, args.traces, args.output)
    print(f"report written to {args.output}")
    return EXIT_OK


def cmd_gen_scene(args) -> int:
    task = default_task(args.family)
    instance = generate_object(args.family, args.instance_seed)
    scene = randomize_scene(task, instance, args.mode, args.seed)
    if args.cloud_out:
        cloud = render_partial_cloud(instance, scene.object_pose, spec=RenderSpec(seed=args.seed))
        _write_cloud_file(cloud, args.cloud_out)
    print(
        json.dumps(
            {
                "category": args.family,
                "instance_seed": args.instance_seed,
                "object_pose": scene.object_pose.as_row(),
                "rotation_range": scene.rotation_range,
                "rng_seed": scene.rng_seed,
            }
        )
    )
    return EXIT_OK


def cmd_gen_align_data(args) -> int:
    dataset = _require_dataset(args.dataset)
    if args.demo_id not in dataset.demos:
        raise MalformedFile(f"demo id {args.demo_id!r} not in dataset")
    demo = dataset.demos[args.demo_id]
    out = simulate_alignment_trajectories(demo, count=args.count, rng_seed=args.seed)
    with open(args.output, "w") as f:
        for traj in out.trajectories:
            f.write(f"trajectory {len(traj)}\n")
            f.write(export_trajectory_rows(traj))
    print(f"{len(out.trajectories)} trajectories written to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajtransfer",
        description="Demonstration retrieval, registration and trajectory transfer toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    default_dataset = os.environ.get(ENV_DATASET, "dataset")

    p = sub.add_parser("ingest", help="add a demonstration to a dataset archive")
    p.add_argument("--dataset", default=default_dataset, help="dataset archive directory")
    p.add_argument("--description", required=True, help="task description text")
    p.add_argument("--cloud", required=True, help="object point cloud file (N, then x y z rows)")
    p.add_argument("--trajectory", required=True, help="trajectory file (t_index tx ty tz qw qx qy qz g rows)")
    p.add_argument("--id", default=None, help="demo id (default: content hash)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("retrieve", help="retrieve the best demonstration for a query")
    p.add_argument("--dataset", default=default_dataset, help="dataset archive directory")
    p.add_argument("--description", required=True, help="task description text")
    p.add_argument("--cloud", required=True, help="test object point cloud file")
    p.add_argument("--top", type=int, default=1, help="emit the top-N ranked candidates")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("register", help="estimate the relative object pose for a demo")
    p.add_argument("--dataset", default=default_dataset, help="dataset archive directory")
    p.add_argument("--demo-id", required=True, help="demonstration id")
    p.add_argument("--cloud", required=True, help="test object point cloud file")
    p.add_argument("--dump-aligned", default=None, help="prefix for aligned cloud file pair")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("rollout", help="run benchmark rollouts for one object family")
    p.add_argument("--family", required=True, help="object family name")
    p.add_argument("--instance-seed", type=int, default=0, help="instance seed")
    p.add_argument("--mode", default="controlled", choices=["controlled", "thousand"], help="scene randomization mode")
    p.add_argument("--seed", type=int, default=0, help="base rng seed")
    p.add_argument("--count", type=int, default=10, help="number of rollouts")
    p.add_argument("--output", default=None, help="JSON-lines trace file to append to")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("evaluate", help="run an experiment protocol from a config file")
    p.add_argument("--config", required=True, help="experiment config JSON file")
    p.add_argument("--output", required=True, help="output directory for reports and traces")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel rollout workers")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="regenerate report files from a trace file")
    p.add_argument("--traces", required=True, help="JSON-lines trace file")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--config", default=None, help="config JSON to echo into the summary")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-scene", help="sample a randomized scene")
    p.add_argument("--family", required=True, help="object family name")
    p.add_argument("--instance-seed", type=int, default=0, help="instance seed")
    p.add_argument("--mode", default="controlled", choices=["controlled", "thousand"], help="scene randomization mode")
    p.add_argument("--seed", type=int, default=0, help="scene rng seed")
    p.add_argument("--cloud-out", default=None, help="write the rendered partial cloud here")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("gen-align-data", help="export synthetic alignment trajectories")
    p.add_argument("--dataset", default=default_dataset, help="dataset archive directory")
    p.add_argument("--demo-id", required=True, help="demonstration id")
    p.add_argument("--count", type=int, default=1000, help="number of trajectories")
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--output", required=True, help="output file")
    p.set_defaults(func=cmd_gen_align_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    print(f"config: {json.dumps(resolved, sort_keys=True, default=str)}", file=sys.stderr)
    try:
        return args.func(args)
    except UnknownSkill as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RETRIEVAL
    except (MalformedFile, ConfigError, DuplicateId, TrajTransferError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
