"""Operator command line.

Subcommands:
    policy lint   — parse a policy pack and print diagnostics
    run           — execute a scenario and report transcript + metrics
    labels kappa  — inter-rater agreement audit between two label files
    serve         — host the ask-approval HTTP API for a browser console

Exit codes: 0 ok; 1 an escalating invocation executed; 2 usage error;
3 data error (unparseable files, coverage mismatch, bind failure).
Defaults may come from ``AGENT_WARDEN_*`` environment variables; explicit
flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .engine import AskChoice, PolicyDB
from .harness import Mode, escalation_oracle, load_scenario, run_scenario
from .labels import CoverageMismatch, LabelError, LabelSet, kappa_report
from .policy import PolicyError, lint_policies, parse_policy_pack
from .serve import ServeApp

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_DATA = 3


def _env_default(name: str, fallback: str | None = None) -> str | None:
    return os.environ.get(f"AGENT_WARDEN_{name}", fallback)


def _emit(doc: dict, fmt: str, human: str) -> None:
    if fmt == "json":
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(human)


def cmd_policy_lint(args: argparse.Namespace) -> int:
    try:
        with open(args.pack, "r", encoding="utf-8") as fh:
            policies = parse_policy_pack(fh.read())
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PolicyError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    diags = lint_policies(policies)
    doc = {
        "policies": len(policies),
        "diagnostics": [
            {"code": d.code, "message": d.message, "policy_index": d.policy_index}
            for d in diags
        ],
    }
    lines = [f"{len(policies)} policies parsed, {len(diags)} diagnostics"]
    lines += [f"  [{d.code}] policy #{d.policy_index}: {d.message}" for d in diags]
    _emit(doc, args.format, "\n".join(lines))
    return EXIT_OK


def _terminal_responder(decision):
    print(decision.explanation)
    answer = input("disallow / allow_once / always_allow [disallow]: ").strip()
    try:
        return AskChoice(answer)
    except ValueError:
        return AskChoice.DISALLOW


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, harness.ScenarioError, LabelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    policy_db = None
    if args.policies:
        try:
            with open(args.policies, "r", encoding="utf-8") as fh:
                policy_db = PolicyDB.from_policies(parse_policy_pack(fh.read()))
        except (OSError, PolicyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA

    responder = None
    if args.responder == "terminal":
        responder = _terminal_responder
    elif args.responder == "scripted":
        choice = AskChoice(_env_default("ASK_CHOICE", "disallow"))
        responder = lambda decision: choice

    try:
        transcript, metrics = run_scenario(
            scenario, mode=args.mode, responder=responder, policy_db=policy_db,
            ask_deadline=args.ask_deadline,
        )
    except harness.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    violations = escalation_oracle(transcript)
    executed = [v for v in violations if v.executed and v.kind == "invoke"]
    doc = {
        "scenario": scenario.name,
        "mode": args.mode,
        "metrics": {"asr": metrics.asr, "par": metrics.par,
                    "fpr": metrics.fpr, "correctness": metrics.correctness},
        "violations": [
            {"round": v.round_index, "kind": v.kind, "subject": v.subject,
             "args": dict(v.args), "executed": v.executed}
            for v in violations
        ],
        "rounds": [
            {"user": r.spec.user, "query": r.spec.query,
             "decisions": r.decisions}
            for r in transcript.rounds
        ],
    }
    lines = [
        f"scenario {scenario.name} ({args.mode}): "
        f"ASR={metrics.asr:.2f} PAR={metrics.par:.2f} "
        f"FPR={metrics.fpr:.2f} correctness={metrics.correctness:.2f}",
    ]
    for v in violations:
        state = "EXECUTED" if v.executed else "attempted"
        lines.append(f"  escalation ({state}) round {v.round_index}: "
                     f"{v.kind} {v.subject} {dict(v.args)}")
    _emit(doc, args.format, "\n".join(lines))
    return EXIT_VIOLATION if executed else EXIT_OK


def cmd_labels_kappa(args: argparse.Namespace) -> int:
    try:
        set_a = LabelSet.from_file(args.file_a)
        set_b = LabelSet.from_file(args.file_b)
        report = kappa_report(set_a, set_b)
    except (OSError, CoverageMismatch, LabelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    doc = {
        "per_attribute": {k: round(v, 4) for k, v in report.per_attribute.items()},
        "overall": round(report.overall, 4),
        "items": report.item_count,
    }
    lines = [f"{report.item_count} subjects"]
    lines += [f"  {attr:<12} {kappa:.4f}" for attr, kappa in report.per_attribute.items()]
    lines.append(f"  {'overall':<12} {report.overall:.4f}")
    _emit(doc, args.format, "\n".join(lines))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.policies:
            scenario = harness.Scenario(
                name=scenario.name, topology=scenario.topology,
                agents=scenario.agents, tools=scenario.tools, dbs=scenario.dbs,
                entry_agent=scenario.entry_agent, rounds=scenario.rounds,
                policy_pack=args.policies,
                memory_selectors=scenario.memory_selectors,
                use_memory=scenario.use_memory,
            )
    except (OSError, harness.ScenarioError, LabelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    host, _, port = args.bind.partition(":")
    try:
        app = ServeApp(scenario, host=host or "127.0.0.1",
                       port=int(port or 0), ask_deadline=args.ask_deadline)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return EXIT_DATA
    app.start()
    print(f"serving on http://{app.address[0]}:{app.address[1]}", flush=True)
    try:
        app.wait()
        while True:
            import time
            time.sleep(3600)
    except KeyboardInterrupt:
        app.stop()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agent-warden",
        description="Flow-graph access control monitor for scripted agent systems",
    )
    parser.add_argument("--format", choices=("text", "json"),
                        default=_env_default("FORMAT", "text"))
    sub = parser.add_subparsers(dest="command", required=True)

    policy = sub.add_parser("policy", help="policy pack utilities")
    policy_sub = policy.add_subparsers(dest="policy_command", required=True)
    lint = policy_sub.add_parser("lint", help="parse and check a policy pack")
    lint.add_argument("pack")
    lint.set_defaults(func=cmd_policy_lint)

    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("scenario")
    run.add_argument("--mode", choices=(Mode.NAIVE, Mode.GUARDED),
                     default=Mode.GUARDED)
    run.add_argument("--policies", default=_env_default("POLICIES"))
    run.add_argument("--responder", choices=("scripted", "terminal"),
                     default="scripted")
    run.add_argument("--ask-deadline", type=float,
                     default=float(_env_default("ASK_DEADLINE", "120") or 120))
    run.set_defaults(func=cmd_run)

    labels = sub.add_parser("labels", help="label-set utilities")
    labels_sub = labels.add_subparsers(dest="labels_command", required=True)
    kappa = labels_sub.add_parser("kappa", help="inter-rater agreement audit")
    kappa.add_argument("file_a")
    kappa.add_argument("file_b")
    kappa.set_defaults(func=cmd_labels_kappa)

    serve = sub.add_parser("serve", help="host the approval console API")
    serve.add_argument("--bind", default=_env_default("BIND", "127.0.0.1:0"))
    serve.add_argument("--scenario", required=True)
    serve.add_argument("--policies", default=_env_default("POLICIES"))
    serve.add_argument("--ask-deadline", type=float,
                       default=float(_env_default("ASK_DEADLINE", "120") or 120))
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
