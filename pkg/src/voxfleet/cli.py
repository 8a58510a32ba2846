"""Command-line front end: generate scenario files and run missions.

Exit codes: 0 all runs completed, 1 at least one run ended incomplete,
2 the scenario or arguments were invalid.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
from dataclasses import replace

from voxfleet import scenario as scn
from voxfleet.sim import MODE_FIX, MODE_PRE, MODE_SLEI3D, Simulation
from voxfleet.scenario import ScenarioError


def _parse_failures(items: list[str]) -> list[tuple[int, int]]:
    out = []
    for item in items:
        try:
            rid, tick = item.split(":")
            out.append((int(rid), int(tick)))
        except ValueError:
            raise ScenarioError(
                f"--fail expects robot_id:tick, got {item!r}") from None
    return out


def _write_csv(path: str, rows: list[dict]) -> None:
    if not rows:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("")
        return
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _run_one(cfg, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    metrics, log = Simulation(cfg).run()
    with open(os.path.join(out_dir, "events.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(log.to_jsonl())
    summary = metrics.summary()
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_csv(os.path.join(out_dir, "ticks.csv"), metrics.tick_rows)
    _write_csv(os.path.join(out_dir, "meetings.csv"), metrics.meeting_rows)
    _write_csv(os.path.join(out_dir, "soei.csv"), metrics.soei_rows)
    return summary


def _apply_overrides(cfg, args) -> "scn.SimConfig":
    if args.mode is not None:
        cfg = replace(cfg, mode=args.mode)
    if args.ticks is not None:
        cfg = replace(cfg, tick_budget=args.ticks)
    if args.energy:
        cfg = replace(cfg, energy_enabled=True)
    if args.no_priors:
        cfg = replace(cfg, priors_enabled=False)
    if args.fail:
        cfg = replace(cfg, failures=list(cfg.failures) + _parse_failures(args.fail))
    return cfg


def cmd_run(args) -> int:
    seeds = args.seeds if args.seeds else [args.seed]
    out_root = args.out or "runs"
    modes = ([MODE_SLEI3D, MODE_FIX, MODE_PRE] if args.compare
             else [None])
    results: dict[str, list[dict]] = {}
    any_incomplete = False
    for mode in modes:
        label_runs = []
        for seed in seeds:
            if args.scenario:
                cfg = scn.load_scenario_file(args.scenario)
                cfg = replace(cfg, seed=seed)
            else:
                cfg = scn.gen_scenario(seed=seed)
            cfg = _apply_overrides(cfg, args)
            if mode is not None:
                cfg = replace(cfg, mode=mode)
            label = cfg.mode if args.compare else "run"
            run_dir = os.path.join(out_root, f"{label}-seed{seed}")
            summary = _run_one(cfg, run_dir)
            label_runs.append(summary)
            state = "completed" if summary["completed"] else (
                f"incomplete ({summary['incomplete_reason']})")
            print(f"[{label} seed={seed}] {state} finish_tick={summary['finish_tick']} "
                  f"finish_rate={summary['finish_rate']:.1f}% "
                  f"idle={summary['total_idle']:.0f} -> {run_dir}")
            if not summary["completed"]:
                any_incomplete = True
        results[mode or "run"] = label_runs

    if args.compare:
        comp = {}
        for mode, runs in results.items():
            finished = [r["finish_tick"] for r in runs if r["completed"]]
            comp[mode] = {
                "runs": len(runs),
                "completed": sum(1 for r in runs if r["completed"]),
                "mean_finish_tick": statistics.mean(finished) if finished else None,
                "mean_total_idle": statistics.mean(r["total_idle"] for r in runs),
                "mean_finish_rate": statistics.mean(r["finish_rate"] for r in runs),
            }
        path = os.path.join(out_root, "compare.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(comp, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"comparison -> {path}")
        for mode, row in sorted(comp.items()):
            mean = row["mean_finish_tick"]
            print(f"  {mode}: {row['completed']}/{row['runs']} completed, "
                  f"mean finish {mean if mean is not None else 'n/a'}, "
                  f"mean idle {row['mean_total_idle']:.0f}")
    return 1 if any_incomplete else 0


def cmd_gen(args) -> int:
    cfg = scn.gen_scenario(
        size=tuple(args.size),
        n_bboxes=args.bboxes,
        n_features=args.features,
        fleet=tuple(args.fleet),
        seed=args.seed,
        energy=args.energy,
    )
    scn.save_scenario(cfg, args.out)
    print(f"wrote {args.out}: world {cfg.world.dims}, {len(cfg.bboxes)} boxes, "
          f"{len(cfg.features)} features, {len(cfg.robots)} robots")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxfleet",
                                description="fleet exploration/inspection simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one or more missions")
    run.add_argument("--scenario", help="scenario JSON file (default: generated)")
    run.add_argument("--seed", type=int, default=0, help="run seed")
    run.add_argument("--seeds", type=int, nargs="+",
                     help="run once per seed instead of --seed")
    run.add_argument("--mode", choices=[MODE_SLEI3D, MODE_FIX, MODE_PRE],
                     help="override the scenario's coordination mode")
    run.add_argument("--ticks", type=int, help="override the tick budget")
    run.add_argument("--out", help="output directory root (default: runs/)")
    run.add_argument("--energy", action="store_true",
                     help="enable the energy model")
    run.add_argument("--no-priors", action="store_true",
                     help="hide the prior search boxes from the fleet")
    run.add_argument("--fail", action="append", metavar="ROBOT:TICK",
                     help="schedule a robot failure; repeatable")
    run.add_argument("--compare", action="store_true",
                     help="run all three modes over the seeds and aggregate")
    run.set_defaults(func=cmd_run)

    gen = sub.add_parser("gen", help="generate a scenario file")
    gen.add_argument("--out", required=True, help="output JSON path")
    gen.add_argument("--size", type=int, nargs=3, default=[20, 20, 8],
                     metavar=("NX", "NY", "NZ"))
    gen.add_argument("--bboxes", type=int, default=2)
    gen.add_argument("--features", type=int, default=4)
    gen.add_argument("--fleet", type=int, nargs=3, default=[1, 2, 2],
                     metavar=("GCS", "EXPLORERS", "INSPECTORS"))
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--energy", action="store_true",
                     help="include the energy block enabled")
    gen.set_defaults(func=cmd_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
