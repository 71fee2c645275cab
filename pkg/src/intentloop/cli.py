"""Command-line surface over TaskService.

Every subcommand maps to one service method, so the CLI and the HTTP API
cannot diverge. Exit codes: 0 success, 1 domain error (the stable error code
is printed on stderr), 2 usage error (argparse's convention).

The task home directory comes from --home, then INTENTLOOP_HOME, then
./intentloop_home. ``serve`` picks its port from --port, then
INTENTLOOP_PORT, then 8000.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import IntentLoopError
from .loop import export_trajectory_csv, ledger_table, render_test_report_text
from .service import TaskService, TuneParams
from .stats import BootstrapConfig


def _default_home() -> str:
    return os.environ.get("INTENTLOOP_HOME", "./intentloop_home")


def _service(args) -> TaskService:
    return TaskService(Path(args.home))


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_parse(args) -> int:
    if args.file:
        text = Path(args.file).read_text(encoding="utf-8")
    else:
        text = args.request or ""
    if not text.strip():
        print("error[unrecognized_request]: empty request", file=sys.stderr)
        return 1
    _print_json(_service(args).create_task(text))
    return 0


def cmd_list(args) -> int:
    _print_json(_service(args).list_tasks())
    return 0


def cmd_show(args) -> int:
    _print_json(_service(args).describe(args.task_id))
    return 0


def cmd_confirm(args) -> int:
    updates = None
    if args.spec_file:
        updates = json.loads(Path(args.spec_file).read_text(encoding="utf-8"))
    _print_json(_service(args).confirm_spec(args.task_id, updates))
    return 0


def cmd_init(args) -> int:
    overrides = json.loads(args.sim_overrides) if args.sim_overrides else None
    _print_json(_service(args).initialize(
        args.task_id, seed=args.seed, mode=args.mode, sim_overrides=overrides,
        n_train=args.n_train, n_val=args.n_val, n_test=args.n_test))
    return 0


def cmd_tune(args) -> int:
    params = TuneParams(total_runs=args.runs,
                        run_budget_seconds=args.budget,
                        grace_seconds=args.grace, mode=args.mode)
    service = _service(args)
    # The CLI tunes in the foreground; interactive adjudications arrive from
    # a second invocation of `decide`, which appends to the same sidecar.
    service.start_tuning(args.task_id, params, wait=True)
    _print_json(service.describe(args.task_id))
    return 0


def cmd_ledger(args) -> int:
    result = _service(args).ledger_entries(args.task_id)
    if args.json:
        _print_json(result["entries"])
    else:
        print(ledger_table(result["entries"]))
    return 0


def cmd_decide(args) -> int:
    _print_json(_service(args).submit_decision(
        args.task_id, args.entry_id, args.choice, by=args.by))
    return 0


def cmd_test(args) -> int:
    bootstrap = None
    if args.replicates is not None:
        bootstrap = BootstrapConfig(replicates=args.replicates,
                                    seed=args.bootstrap_seed)
    report = _service(args).run_test(args.task_id,
                                     budget_seconds=args.budget,
                                     bootstrap=bootstrap)
    if args.json:
        _print_json(report)
    else:
        print(render_test_report_text(report))
    return 0


def cmd_report(args) -> int:
    report = _service(args).report(args.task_id)
    if args.json:
        _print_json(report)
    else:
        print(render_test_report_text(report))
    return 0


def cmd_trajectory(args) -> int:
    service = _service(args)
    entries = service.ledger_entries(args.task_id)["entries"]
    export_trajectory_csv(entries, Path(args.out))
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .api import make_app

    service = _service(args)
    static = Path(args.console_dir) if args.console_dir else None
    app = make_app(service, static_dir=static)
    port = args.port or int(os.environ.get("INTENTLOOP_PORT", "8000"))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentloop",
        description="clinician-driven model tuning harness")
    parser.add_argument("--home", default=_default_home(),
                        help="task home directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="turn a free-text request into a task")
    p.add_argument("request", nargs="?", help="request text")
    p.add_argument("--file", help="read the request from a file")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("list", help="list tasks")
    p.set_defaults(fn=cmd_list)

    p = sub.add_parser("show", help="describe one task")
    p.add_argument("task_id")
    p.set_defaults(fn=cmd_show)

    p = sub.add_parser("confirm", help="confirm (optionally amend) the spec")
    p.add_argument("task_id")
    p.add_argument("--spec-file", help="JSON file of spec field updates")
    p.set_defaults(fn=cmd_confirm)

    p = sub.add_parser("init", help="build the task workspace")
    p.add_argument("task_id")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("mock", "agent"), default="mock")
    p.add_argument("--sim-overrides", help="JSON overrides for the simulator")
    p.add_argument("--n-train", type=int, default=600)
    p.add_argument("--n-val", type=int, default=400)
    p.add_argument("--n-test", type=int, default=400)
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("tune", help="run the tuning loop to budget")
    p.add_argument("task_id")
    p.add_argument("--runs", type=int, default=30,
                   help="total executions including the baseline")
    p.add_argument("--budget", type=float, default=2400.0,
                   help="per-run wall-clock budget, seconds")
    p.add_argument("--grace", type=float, default=10.0)
    p.add_argument("--mode", choices=("batch", "interactive"), default="batch")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("ledger", help="print the decision ledger")
    p.add_argument("task_id")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_ledger)

    p = sub.add_parser("decide", help="adjudicate a parked guard violation")
    p.add_argument("task_id")
    p.add_argument("entry_id")
    p.add_argument("choice", choices=("accept", "reject"))
    p.add_argument("--by", default="clinician")
    p.set_defaults(fn=cmd_decide)

    p = sub.add_parser("test", help="run the one-shot held-out evaluation")
    p.add_argument("task_id")
    p.add_argument("--budget", type=float, default=120.0)
    p.add_argument("--replicates", type=int, default=None,
                   help="bootstrap replicates (default 2000)")
    p.add_argument("--bootstrap-seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_test)

    p = sub.add_parser("report", help="print the stored test report")
    p.add_argument("task_id")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("trajectory", help="export the tuning trajectory as CSV")
    p.add_argument("task_id")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_trajectory)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--console-dir", default=None,
                   help="static console build to mount at /console")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except IntentLoopError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
