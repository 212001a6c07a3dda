"""Command-line entry points: bench, noise, tune, trial, serve.

Every run writes its artifacts (CSV tables, JSON summaries) into the output
directory with the resolved config hash embedded, so two artifacts with the
same hash carry byte-identical numeric content. Exit codes: 0 success,
2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .config import RunConfig, config_hash, load_config
from .errors import ConfigError

log = logging.getLogger("collabmpc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _setup_logging():
    level = os.environ.get("COLLABMPC_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        key, _, val = item.partition("=")
        if not val:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key] = val
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _prepare_out(cfg: RunConfig) -> str:
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create output directory: {exc}")
    return cfg.out_dir


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def cmd_bench(args) -> int:
    from . import sim

    cfg = _resolve_config(args)
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    out = _prepare_out(cfg)
    chash = config_hash(cfg)
    policies = tuple(args.policies.split(","))
    for p in policies:
        if p not in sim.POLICIES:
            raise ConfigError(f"unknown policy {p!r}")
    log.info("benchmark: %d trials, policies %s, seed %d",
             args.trials, policies, cfg.seed)

    def progress(i, n):
        if i % 10 == 0 or i == n:
            log.info("trial %d/%d", i, n)

    rows, agg = sim.run_benchmark(args.trials, policies, cfg.seed, cfg,
                                  progress=progress)
    csv_path = os.path.join(out, f"bench_trials_{chash}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "policy", "success", "t_uncontrolled",
                         "t_success", "handover_time_normalized",
                         "trajectory_length_error", "mean_acceleration",
                         "mean_jerk", "seed"])
        for i, row in enumerate(rows):
            for p in policies:
                r = row[p]
                writer.writerow([i, p, int(r.success), r.t_uncontrolled,
                                 _fmt(r.t_success),
                                 _fmt(r.handover_time_normalized),
                                 _fmt(r.trajectory_length_error),
                                 _fmt(r.mean_acceleration),
                                 _fmt(r.mean_jerk), r.seed])
    _write_json(os.path.join(out, f"bench_summary_{chash}.json"),
                {"config": cfg.to_dict(), "config_hash": chash,
                 "aggregate": agg})
    log.info("wrote %s", csv_path)
    for p in policies:
        e = agg["policies"][p]
        log.info("%-11s success %.1f%%  time %s  len-err %s  jerk %s",
                 p, 100 * e["success_rate"],
                 _fmt(e["handover_time_normalized"]["mean"]),
                 _fmt(e["trajectory_length_error"]["mean"]),
                 _fmt(e["mean_jerk"]["mean"]))
    return EXIT_OK


def cmd_noise(args) -> int:
    from . import sim

    cfg = _resolve_config(args)
    sigmas = [float(s) for s in args.sigmas.split(",")]
    if args.per < 1:
        raise ConfigError("--per must be >= 1")
    out = _prepare_out(cfg)
    chash = config_hash(cfg)
    table = sim.run_noise_sweep(sigmas, args.per, cfg.seed, cfg,
                                progress=lambda i, n: log.info(
                                    "sigma %d/%d done", i, n))
    csv_path = os.path.join(out, f"noise_sweep_{chash}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma_cm", "success_rate"])
        for row in table:
            writer.writerow([_fmt(row["sigma_cm"]), _fmt(row["success_rate"])])
    _write_json(os.path.join(out, f"noise_summary_{chash}.json"),
                {"config": cfg.to_dict(), "config_hash": chash,
                 "table": table})
    for row in table:
        log.info("sigma %4.1f cm -> %.1f%%", row["sigma_cm"],
                 100 * row["success_rate"])
    return EXIT_OK


def cmd_tune(args) -> int:
    from . import sim

    cfg = _resolve_config(args)
    out = _prepare_out(cfg)
    chash = config_hash(cfg)
    if args.grid == "default":
        grid = sim.default_grid()
    elif args.grid == "quick":
        full = sim.default_grid()
        grid = {k: full[k][:2] for k in list(full)[:3]}
    else:
        raise ConfigError(f"unknown grid {args.grid!r} (default|quick)")
    truth = {k: v[1] if len(v) > 1 else v[0] for k, v in sim.default_grid().items()}
    dataset = sim.make_reach_dataset(args.recordings, truth, cfg.seed, cfg,
                                     noise_m=args.noise / 100.0)
    log.info("grid search over %d configurations on %d synthetic reaches",
             int(np.prod([len(v) for v in grid.values()])), len(dataset))

    def progress(i, n):
        if i % 500 == 0 or i == n:
            log.info("evaluated %d/%d", i, n)

    best, leaderboard = sim.grid_search_tune(grid, dataset, cfg.mpc.dt,
                                             progress=progress)
    csv_path = os.path.join(out, f"tune_leaderboard_{chash}.csv")
    names = list(leaderboard[0][1].keys())
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "loss_cm"] + names)
        for rank, (loss, params) in enumerate(leaderboard):
            writer.writerow([rank, _fmt(loss)] + [_fmt(params[n]) for n in names])
    _write_json(os.path.join(out, f"tune_best_{chash}.json"),
                {"config": cfg.to_dict(), "config_hash": chash,
                 "best": best, "evaluations": len(leaderboard)})
    log.info("best loss %.3f cm with %s", leaderboard[0][0], best)
    return EXIT_OK


def cmd_trial(args) -> int:
    from . import sim

    cfg = _resolve_config(args)
    out = _prepare_out(cfg)
    chash = config_hash(cfg)
    sc, replay = sim._scenario_with_plan(args.index, cfg)
    result, paths = sim.run_trial(sc, args.policy, args.noise, cfg,
                                  replay=replay, collect_paths=True)
    payload = {"config_hash": chash, "policy": result.policy,
               "success": result.success,
               "t_uncontrolled": result.t_uncontrolled,
               "t_success": result.t_success, "seed": result.seed,
               "handover_time_normalized": result.handover_time_normalized,
               "trajectory_length_error": result.trajectory_length_error,
               "mean_acceleration": result.mean_acceleration,
               "mean_jerk": result.mean_jerk}
    _write_json(os.path.join(out, f"trial_{args.index}_{args.policy}_{chash}.json"),
                payload)
    if args.dump_paths:
        path_csv = os.path.join(
            out, f"trial_{args.index}_{args.policy}_paths_{chash}.csv")
        with open(path_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "ee_x", "ee_y", "ee_z",
                             "agent_x", "agent_y", "agent_z"])
            for i, (ee, ag) in enumerate(zip(paths["ee"], paths["agent"])):
                writer.writerow([i] + [_fmt(v) for v in ee]
                                + [_fmt(v) for v in ag])
        log.info("wrote %s", path_csv)
    log.info("trial %d policy %s: success=%s t=%s/%s", args.index,
             args.policy, result.success, result.t_success,
             result.t_uncontrolled)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import serve

    cfg = _resolve_config(args)
    return serve(cfg, host=args.host, port=args.port, rate_hz=args.rate)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collabmpc",
        description="Collaborative handover MPC: benchmarks, calibration, "
                    "and the live sandbox service.")
    parser.add_argument("--config", help="INI config file", default=None)
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VAL",
                        help="override a config value")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run the policy benchmark")
    b.add_argument("--trials", type=int, default=300)
    b.add_argument("--policies", default="ours,robot_only,attractor")
    b.set_defaults(fn=cmd_bench)

    n = sub.add_parser("noise", help="observation-noise robustness sweep")
    n.add_argument("--sigmas", default="2,5,7,10,15", help="cm, comma-separated")
    n.add_argument("--per", type=int, default=50, help="trials per sigma")
    n.set_defaults(fn=cmd_noise)

    t = sub.add_parser("tune", help="grid-search the partner-model weights")
    t.add_argument("--grid", default="default", help="default|quick")
    t.add_argument("--recordings", type=int, default=3,
                   help="synthetic reach recordings")
    t.add_argument("--noise", type=float, default=0.5,
                   help="recording noise, cm")
    t.set_defaults(fn=cmd_tune)

    tr = sub.add_parser("trial", help="run and dump a single trial")
    tr.add_argument("--index", type=int, default=0)
    tr.add_argument("--policy", default="ours")
    tr.add_argument("--noise", type=float, default=0.0, help="sigma, cm")
    tr.add_argument("--dump-paths", action="store_true")
    tr.set_defaults(fn=cmd_trial)

    s = sub.add_parser("serve", help="serve the interactive sandbox")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--rate", type=float, default=10.0, help="MPC rate, Hz")
    s.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (IOError, OSError) as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
