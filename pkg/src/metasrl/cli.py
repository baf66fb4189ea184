"""Command-line entry points: gen-tasks, run, report.

Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .errors import InvalidInput


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def cmd_gen_tasks(args):
    from .taskgen import GridSpec, TaskSequenceConfig, write_task_sequence

    doc = _load_json(args.config)
    source = doc.get("task_source", doc)
    cfg = TaskSequenceConfig(
        mode=source["mode"], num_tasks=source["num_tasks"],
        base=GridSpec(**source.get("base", {})),
        low_sim_prob_range=tuple(source.get("low_sim_prob_range", (0.3, 0.7))),
        seed=source.get("seed", 0))
    write_task_sequence(cfg, args.out)
    print(f"wrote {cfg.num_tasks} tasks to {args.out}")
    return 0


def cmd_run(args):
    from .harness import ExperimentConfig, export_report, run_experiment

    config = ExperimentConfig.from_json(_load_json(args.config))
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.strategy is not None:
        config = dataclasses.replace(config, strategies=(args.strategy,))
    records, reports = run_experiment(config)
    n_costs = max(len(r.tacv) for r in reports.values()) if reports else 1
    written = export_report(records, reports, args.out, fmt="csv",
                            config=config, n_costs=n_costs)
    print("\n".join(written))
    return 0


def cmd_report(args):
    """Re-aggregate regret summaries from a run directory into one table."""
    in_dir = args.in_dir
    names = sorted(n for n in os.listdir(in_dir)
                   if n.startswith("regret_") and n.endswith(".json"))
    if not names:
        raise InvalidInput(f"no regret files under {in_dir}")
    merged = {}
    for name in names:
        strategy = name[len("regret_"):-len(".json")]
        merged[strategy] = _load_json(os.path.join(in_dir, name))
    if args.format == "json":
        print(json.dumps(merged, sort_keys=True, indent=2))
    else:
        fields = ["taog", "static_regret", "dynamic_regret", "d_hat_sq",
                  "v_hat_sq", "path_length", "sq_path_length"]
        print("strategy," + ",".join(fields) + ",tacv")
        for strategy in sorted(merged):
            doc = merged[strategy]
            tacv = ";".join(str(v) for v in doc["tacv"])
            print(strategy + "," + ",".join(str(doc[f]) for f in fields)
                  + "," + tacv)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="metasrl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasks", help="generate a task sequence directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("run", help="run strategies over a task sequence")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strategy", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize an existing run directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInput, KeyError, ValueError, TypeError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
