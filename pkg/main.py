#!/usr/bin/env python3
"""
Command-line front end for the diffusion sampling lab
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

import geometry
from config import (
    build_run_config,
    dataset_rng,
    initial_noise,
    load_config_file,
    sample_rng,
    warmup_rng,
)
from database import RunDatabase
from dataset_loader import load_dataset
from denoiser import OptimalDenoiser
from errors import DomainError, InfeasibleError, LabError
from gits import METRICS, build_cost_matrix, build_teacher, dp_schedules, fine_grid
from schedules import GENERATORS, make_schedule, save_schedule, schedule_table
from solvers import METHODS, load_trajectory, sample_batch, save_trajectory

logger = logging.getLogger("main")

EXIT_OK = 0
EXIT_FAILURE = 1


def _out_dir(config):
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(config):
    return load_dataset(config.dataset, dataset_rng(config.seed))


def cmd_sample(config, progress=False):
    """Sample a batch of trajectories; one CSV per sample plus summary.json"""
    data = _dataset(config)
    denoiser = OptimalDenoiser(data)
    n_steps = config.solver.steps_for_nfe(config.nfe)
    schedule = make_schedule(config.schedule_kind, n_steps, config.t_min, config.t_max, **config.schedule_params())
    inits = [initial_noise(sample_rng(config.seed, i), data.d, config.t_max) for i in range(config.batch)]

    trajectories = sample_batch(config.solver, denoiser, schedule, inits, threads=config.threads, progress=progress)

    out = _out_dir(config)
    for i, traj in enumerate(trajectories):
        save_trajectory(traj, out / f"trajectory_{i:04d}.csv")
    save_schedule(schedule, out / "schedule.json")

    summary = {
        "solver": config.solver.label(),
        "schedule_kind": schedule.kind,
        "steps": schedule.n_steps,
        "nfe": trajectories[0].nfe,
        "expected_nfe": config.solver.expected_nfe(schedule.n_steps),
        "seed": int(config.seed),
        "dataset": config.dataset,
        "endpoint_norms": [float(np.linalg.norm(t.final)) for t in trajectories],
    }
    geometry.save_json(summary, out / "summary.json")

    if config.db_path:
        db = RunDatabase(config.db_path)
        run_id = db.record_run("sample", config)
        db.insert_endpoints(run_id, [(i, n, t.nfe) for i, (n, t) in enumerate(zip(summary["endpoint_norms"], trajectories))])

    logger.info("wrote %d trajectories (nfe %d each) to %s", len(trajectories), summary["nfe"], out)
    return summary


def _gits_once(config, denoiser, grid, warmup, progress):
    teachers = build_teacher(grid, denoiser, warmup, threads=config.threads, progress=progress)
    costs = build_cost_matrix(
        grid, denoiser, teachers, threads=config.threads, progress=progress, metric=config.metric
    )
    return costs, dp_schedules(costs, config.budgets, config.gamma, grid.grid_times)


def cmd_gits(config, progress=False, cost_csv=False):
    """Teacher, cost matrix and one DP fill for every requested budget"""
    too_big = [b for b in config.budgets if b > config.teacher_nfe]
    if too_big:
        raise InfeasibleError(f"budgets {too_big} exceed teacher_nfe={config.teacher_nfe}")
    data = _dataset(config)
    denoiser = OptimalDenoiser(data)
    grid = fine_grid(config.teacher_nfe, config.t_min, config.t_max, config.rho, config.teacher)
    warmup = [initial_noise(warmup_rng(config.seed, i), data.d, config.t_max) for i in range(config.warmup)]

    out = _out_dir(config)
    costs, results = _gits_once(config, denoiser, grid, warmup, progress)
    for budget, result in results.items():
        geometry.save_json(result.to_dict(), out / f"gits_nfe{budget}.json")
        logger.info("budget %d: path %s, cost %.6g", budget, result.path_indices, result.total_cost)
    if cost_csv:
        costs.save_csv(out / "cost_matrix.csv")

    per_sample = {}
    if config.per_sample:
        sample_dir = out / "per_sample"
        sample_dir.mkdir(exist_ok=True)
        for k, x in enumerate(warmup[: config.per_sample]):
            _, single = _gits_once(config, denoiser, grid, [x], progress=False)
            per_sample[k] = single
            for budget, result in single.items():
                geometry.save_json(result.to_dict(), sample_dir / f"sample_{k:04d}_nfe{budget}.json")

    if config.db_path:
        db = RunDatabase(config.db_path)
        run_id = db.record_run("gits", config)
        for result in results.values():
            db.insert_schedule(run_id, result)

    return results, per_sample


def _run_seed(paths):
    """Seed recorded in the summary.json of the sampling run that wrote paths[0]"""
    summary = Path(paths[0]).parent / "summary.json"
    try:
        return int(json.loads(summary.read_text())["seed"])
    except (OSError, ValueError, KeyError, TypeError):
        logger.warning("no sampling summary next to %s; rebuilding the dataset with seed 0", paths[0])
        return 0


def cmd_geometry(paths, dataset_source, bandwidths, out_dir, k_max=None, seed=None):
    """
    GeometryReport per trajectory plus one PcaReport over all of them.

    Synthetic datasets are rebuilt from the sampling run's seed unless one
    is given.
    """
    if seed is None:
        seed = _run_seed(paths)
    data = load_dataset(dataset_source, dataset_rng(seed))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    trajs = []
    rows = []
    for path in paths:
        traj = load_trajectory(path)
        if traj.d != data.d:
            raise DomainError(f"{path}: trajectory dimension {traj.d} does not match dataset dimension {data.d}")
        report = geometry.summarize(traj, data, bandwidths)
        stem = Path(path).stem
        geometry.save_json(report.to_dict(), out / f"geometry_{stem}.json")
        geometry.save_node_csv(report, out / f"nodes_{stem}.csv")
        trajs.append(traj)
        rows.append(
            {
                "trajectory": stem,
                "max_deviation_ratio": report.max_deviation_ratio,
                "length": report.length,
                "monotone": report.monotone,
                "stepwise_monotone": report.stepwise_monotone,
            }
        )

    k = k_max if k_max is not None else max(1, min(len(t) for t in trajs) - 2)
    pca = geometry.pca_reconstruct(trajs, k)
    geometry.save_json(pca.to_dict(), out / "pca.json")
    return pd.DataFrame(rows), pca


def cmd_schedule(kind, nfes, t_min, t_max, as_json=False, **params):
    kinds = sorted(GENERATORS) if kind == "all" else [kind]
    if as_json:
        payload = {k: {n: list(make_schedule(k, n, t_min, t_max, **params).times) for n in nfes} for k in kinds}
        print(json.dumps(payload, indent=2))
        return
    for k in kinds:
        print(f"\n{k}")
        print(schedule_table(k, nfes, t_min, t_max, **params).to_string(index=False))


def cmd_verify(seed=0, only=None, quick=False):
    from verify import AcceptanceRunner

    runner = AcceptanceRunner(seed=seed, quick=quick)
    table = runner.run(only)
    print(table.to_string(index=False))
    return EXIT_OK if table["passed"].all() else EXIT_FAILURE


def cmd_runs(db_path):
    db = RunDatabase(db_path)
    runs = db.list_runs()
    if runs.empty:
        print("No runs recorded.")
        return
    print("Runs:")
    print(runs.to_string(index=False))
    summary = db.endpoint_summary()
    if not summary.empty:
        print("\nEndpoint norms per sampling run:")
        print(summary.to_string(index=False))
    schedules = db.get_schedules()
    if not schedules.empty:
        print("\nGITS schedules:")
        print(schedules[["run_id", "budget", "gamma", "total_cost", "path"]].to_string(index=False))


def _run_flags(parser):
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--dataset", help="csv:<path> | gmm:modes=2,d=2,... | plane:m=2,d=512 | corners:d=1024")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("--db", dest="db_path", help="record the run in this SQLite registry")
    parser.add_argument("--t-min", dest="t_min", type=float)
    parser.add_argument("--t-max", dest="t_max", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="main.py", description=__doc__.strip())
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--quiet", action="store_true", help="no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a batch of trajectories")
    _run_flags(p)
    p.add_argument("--solver", choices=METHODS)
    p.add_argument("--order", type=int)
    p.add_argument("--formulation", choices=["native", "generalized"])
    p.add_argument("--afs", action="store_true", default=None)
    p.add_argument("--schedule-kind", dest="schedule_kind", choices=sorted(GENERATORS))
    p.add_argument("--nfe", type=int, help="denoiser evaluation budget; the schedule gets as many steps as fit")
    p.add_argument("--batch", type=int)

    p = sub.add_parser("gits", help="build a GITS schedule")
    _run_flags(p)
    p.add_argument("--teacher-nfe", dest="teacher_nfe", type=int)
    p.add_argument("--budget", dest="budgets", nargs="+", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--metric", choices=METRICS, help="jump cost: plain L2 gap or the gap carried to t_min")
    p.add_argument("--warmup", type=int)
    p.add_argument("--per-sample", dest="per_sample", type=int, help="also schedule the first K warmup samples alone")
    p.add_argument("--cost-csv", action="store_true", help="dump the cost matrix")

    p = sub.add_parser("geometry", help="analyse trajectory CSV files")
    p.add_argument("trajectories", nargs="+")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, help="dataset seed; defaults to the seed in the sampling run's summary.json")
    p.add_argument("--bandwidths", nargs="+", type=float, default=list(geometry.DEFAULT_BANDWIDTHS))
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--out", dest="out_dir", default="geometry_out")

    p = sub.add_parser("schedule", help="print handcrafted schedules")
    p.add_argument("--schedule-kind", dest="schedule_kind", choices=sorted(GENERATORS) + ["all"], default="all")
    p.add_argument("--nfe", nargs="+", type=int, default=list(range(3, 11)))
    p.add_argument("--t-min", dest="t_min", type=float, default=0.002)
    p.add_argument("--t-max", dest="t_max", type=float, default=80.0)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", nargs="+", type=int, help="criterion numbers to run")
    p.add_argument("--quick", action="store_true", help="fewer GITS repetitions")

    p = sub.add_parser("runs", help="list the run registry")
    p.add_argument("--db", dest="db_path", default="runs.db")
    return parser


RUN_KEYS = (
    "seed", "dataset", "threads", "out_dir", "db_path", "t_min", "t_max", "solver", "order",
    "formulation", "afs", "schedule_kind", "nfe", "batch", "teacher_nfe", "budgets", "gamma", "metric",
    "warmup", "per_sample",
)


def _run_config(args, parser):
    flags = {k: getattr(args, k) for k in RUN_KEYS if hasattr(args, k)}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        return build_run_config(file_values, flags)
    except DomainError as exc:
        parser.error(str(exc))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    progress = not args.quiet and sys.stderr.isatty()

    try:
        if args.command == "sample":
            summary = cmd_sample(_run_config(args, parser), progress)
            print(f"Sampled {len(summary['endpoint_norms'])} trajectories, nfe {summary['nfe']} each")
        elif args.command == "gits":
            results, _ = cmd_gits(_run_config(args, parser), progress, cost_csv=args.cost_csv)
            table = pd.DataFrame(
                [{"budget": b, "total_cost": r.total_cost, "path": r.path_indices} for b, r in results.items()]
            )
            print(table.to_string(index=False))
        elif args.command == "geometry":
            table, pca = cmd_geometry(args.trajectories, args.dataset, args.bandwidths, args.out_dir, args.k_max, args.seed)
            print(table.to_string(index=False))
            print(f"\nPCA reconstruction error by k: {[round(e, 6) for e in pca.recon_error]}")
        elif args.command == "schedule":
            cmd_schedule(args.schedule_kind, args.nfe, args.t_min, args.t_max, as_json=args.json)
        elif args.command == "verify":
            return cmd_verify(args.seed, args.only, args.quick)
        elif args.command == "runs":
            cmd_runs(args.db_path)
    except (LabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
