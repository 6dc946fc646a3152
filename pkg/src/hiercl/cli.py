"""Command-line front end.

Subcommands: `run` (permutation sweep from a config file and/or flags),
`audit` (quick property self-checks), `gen` (dump a synthetic dataset),
`report` (summarize a results CSV). Flags override config-file values.
"""

from __future__ import annotations

import argparse
import sys

from .config import build_experiment_config, parse_config_text
from .experiment import make_tasks, run_experiment, run_property_audits
from .metrics import format_summary, read_records, summarize
from .tasks import dump_tasks

# command-line flag -> config key it overrides
_FLAG_KEYS = (
    ("dataset", "dataset.kind"),
    ("learner", "learner.kind"),
    ("group_size", "run.group_size"),
    ("levels", "run.levels"),
    ("lam", "run.lambda"),
    ("eta", "run.eta"),
    ("catchup", "run.catchup"),
    ("curvature", "run.curvature"),
    ("perms", "run.perms"),
    ("out", "run.out"),
)


def _add_override_flags(p: argparse.ArgumentParser):
    p.add_argument("--dataset", choices=("gaussians", "permuted", "sine"))
    p.add_argument("--learner", choices=("sgd", "er", "ewc"))
    p.add_argument("--group-size", dest="group_size", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--catchup", type=int)
    p.add_argument("--curvature")
    p.add_argument("--perms", help="'all' or an integer budget")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiercl",
        description="Grouped continual learning with second-order consolidation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a permutation-sweep experiment")
    run_p.add_argument("--config", help="key=value config file")
    _add_override_flags(run_p)

    audit_p = sub.add_parser("audit", help="run the property self-checks")
    audit_p.add_argument("--seed", type=int, default=0)

    gen_p = sub.add_parser("gen", help="generate and dump a synthetic dataset")
    gen_p.add_argument("--config", help="config file supplying dataset sizes")
    gen_p.add_argument("--dataset", choices=("gaussians", "permuted", "sine"))
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.add_argument("--out", required=True)

    report_p = sub.add_parser("report", help="summarize a results CSV")
    report_p.add_argument("csv", help="path to a results CSV")
    return parser


def _load_kv(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    with open(path) as fh:
        return parse_config_text(fh.read())


def _cmd_run(args) -> int:
    kv = _load_kv(args.config)
    for flag, key in _FLAG_KEYS:
        value = getattr(args, flag)
        if value is not None:
            kv[key] = str(value)
    if args.seed is not None:
        kv["run.seeds"] = str(args.seed)
    cfg = build_experiment_config(kv)
    records, summary = run_experiment(cfg)
    print(format_summary(summary))
    print(f"wrote {len(records)} records to {cfg.out}")
    return 0


def _cmd_audit(args) -> int:
    failed = False
    for name, ok, detail in run_property_audits(args.seed):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed = failed or not ok
    return 1 if failed else 0


def _cmd_gen(args) -> int:
    kv = _load_kv(args.config)
    if args.dataset is not None:
        kv["dataset.kind"] = args.dataset
    cfg = build_experiment_config(kv)
    tasks = make_tasks(cfg.dataset, args.seed)
    dump_tasks(tasks, args.out)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def _cmd_report(args) -> int:
    print(format_summary(summarize(read_records(args.csv))))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "audit": _cmd_audit,
               "gen": _cmd_gen, "report": _cmd_report}[args.command]
    try:
        return handler(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
