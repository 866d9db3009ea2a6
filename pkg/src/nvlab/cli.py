"""Command-line surface.

Subcommands::

    nvlab run              execute a plan against a chat endpoint (or with a
                           scripted agent), persisting every round
    nvlab simulate         same pipeline, scripted agents only, no network
    nvlab report           compute all tables and figure data from run stores
    nvlab validate-prompts render the pinned contexts and diff against the
                           golden prompt files

Exit codes: 0 success, 2 configuration error, 3 transport failure,
4 parse-ambiguity failure, 5 store-integrity failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import runner as runner_mod
from .agents import LLM, SCRIPTED_KINDS, AgentSpec
from .config import ConfigError, RunConfig, build_plan
from .llm import ChatClient, TokenBucket, TransportError
from .prompts import validate_golden
from .report import ReportError, build_report
from .store import IntegrityError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_PARSE = 4
EXIT_INTEGRITY = 5

AGENT_CHOICES = ("llm",) + SCRIPTED_KINDS


def _build_agents(args, config: RunConfig) -> list[AgentSpec]:
    agents = []
    for kind in args.agent:
        if kind == LLM:
            for model_name in config.models:
                agents.append(AgentSpec(LLM, model_name=model_name,
                                        temperature=config.temperature))
        elif kind == "mean-anchor":
            agents.append(AgentSpec(kind, anchor_weight=args.anchor_weight))
        elif kind == "demand-chaser":
            agents.append(AgentSpec(kind, chase_rate=args.chase_rate,
                                    switch_round=args.switch_round))
        else:
            agents.append(AgentSpec(kind))
    return agents


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    data = config.to_dict()
    if args.experiment:
        data["experiments"] = args.experiment
    if args.dist:
        data["distributions"] = args.dist
    if args.order:
        data["order_conditions"] = args.order
    if args.reps is not None:
        data["repetitions"] = args.reps
    if args.rounds is not None:
        data["rounds"] = args.rounds
    if args.seed is not None:
        data["base_seed"] = args.seed
    if args.out is not None:
        data["output_dir"] = str(args.out)
    return RunConfig.from_dict(data)


def _client_factory(config: RunConfig, api_key: str):
    bucket = None
    if config.rate_limit_per_minute:
        bucket = TokenBucket(config.rate_limit_per_minute / 60.0)

    def factory(agent: AgentSpec) -> ChatClient:
        return ChatClient(
            endpoint=config.endpoint,
            model=agent.model_name,
            api_key=api_key,
            temperature=agent.temperature,
            max_retries=config.max_retries,
            backoff_base=config.backoff_base,
            rate_limiter=bucket,
            request_budget=config.request_budget,
        )

    return factory


def _execute_plans(config: RunConfig, agents, client_factory, resume_dir) -> int:
    if resume_dir is not None:
        outcomes = [runner_mod.resume(resume_dir, client_factory=client_factory,
                                      progress=lambda msg: print(msg, flush=True))]
    else:
        outcomes = []
        for agent in agents:
            plan = build_plan(config, [agent])
            run_dir = Path(config.output_dir) / plan.run_id()
            print(f"running {agent.label} -> {run_dir}", flush=True)
            outcome = runner_mod.run_plan(
                plan, run_dir, client_factory=client_factory,
                progress=lambda msg: print(msg, flush=True),
            )
            outcomes.append(outcome)

    status = EXIT_OK
    for outcome in outcomes:
        complete = [t for t in outcome.trajectories if t.complete]
        print(
            f"{outcome.run_id}: {len(complete)} complete trajectories, "
            f"{len(outcome.failures)} unresolved rounds -> {outcome.store.run_dir}"
        )
        for failure in outcome.failures:
            print(
                f"  unresolved: condition={failure.condition_index} rep={failure.repetition} "
                f"block={failure.block_index} round={failure.round_index} "
                f"({failure.kind}): {failure.message}",
                file=sys.stderr,
            )
            status = EXIT_PARSE if failure.kind == "parse" else EXIT_TRANSPORT
    return status


def _print_config(config: RunConfig, agents):
    resolved = {"config": config.to_dict(), "plans": []}
    for agent in agents:
        plan = build_plan(config, [agent])
        resolved["plans"].append({
            "agent": agent.label,
            "run_id": plan.run_id(),
            "plan": plan.to_dict(),
        })
    print(json.dumps(resolved, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    config = _apply_overrides(config, args)
    agents = _build_agents(args, config)
    if args.print_config:
        _print_config(config, agents)
        return EXIT_OK
    client_factory = None
    if any(a.kind == LLM for a in agents):
        api_key = os.environ.get(config.credential_env)
        if not api_key:
            raise ConfigError(
                f"credential_env: environment variable {config.credential_env!r} is not set"
            )
        client_factory = _client_factory(config, api_key)
    return _execute_plans(config, agents, client_factory, args.resume)


def cmd_simulate(args) -> int:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    config = _apply_overrides(config, args)
    if LLM in args.agent:
        raise ConfigError("agent: 'llm' needs the run command; simulate is offline-only")
    agents = _build_agents(args, config)
    if args.print_config:
        _print_config(config, agents)
        return EXIT_OK
    return _execute_plans(config, agents, None, args.resume)


def cmd_report(args) -> int:
    bundle = build_report(args.run_dirs, args.out, compare_humans=args.compare_humans)
    for name in sorted(bundle.files):
        print(f"wrote {bundle.files[name]}")
    return EXIT_OK


def cmd_validate_prompts(args) -> int:
    failed = False
    for check in validate_golden():
        status = "ok" if check.ok else "MISMATCH"
        print(f"{status}: {check.name} ({check.golden_file})")
        if not check.ok:
            failed = True
            print(check.diff)
    return EXIT_CONFIG if failed else EXIT_OK


def _add_grid_arguments(parser, scripted_only=False):
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--experiment", action="append",
                        help="experiment variant (E1, E2, E3); repeatable")
    parser.add_argument("--dist", action="append",
                        help="demand distribution (uniform, normal, lognormal); repeatable")
    parser.add_argument("--order", action="append", choices=("high-first", "low-first"),
                        help="presentation order; repeatable")
    parser.add_argument("--reps", type=int, help="repetitions per condition")
    parser.add_argument("--rounds", type=int, help="rounds per scenario block")
    parser.add_argument("--seed", type=int, help="base seed for demand sequences")
    parser.add_argument("--out", type=Path, help="output directory for run stores")
    default_agents = list(SCRIPTED_KINDS) if scripted_only else ["llm"]
    parser.add_argument("--agent", action="append", choices=AGENT_CHOICES,
                        default=None, help=f"agent kind; repeatable (default: {default_agents})")
    parser.add_argument("--anchor-weight", type=float, default=0.5,
                        help="mean-anchor adjustment fraction w in [0, 1]")
    parser.add_argument("--chase-rate", type=float, default=1.0,
                        help="demand-chaser rate alpha >= 0")
    parser.add_argument("--switch-round", type=int, default=None,
                        help="demand-chaser: start chasing at this round (0 before)")
    parser.add_argument("--resume", type=Path, default=None,
                        help="resume an existing run directory instead of starting fresh")
    parser.add_argument("--print-config", action="store_true",
                        help="print the fully-resolved config and plan, then exit")
    parser.set_defaults(default_agents=default_agents)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvlab",
        description="Dynamic newsvendor ordering experiments and bias metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute a plan (LLM or scripted agents)")
    _add_grid_arguments(run_parser)
    run_parser.set_defaults(handler=cmd_run)

    sim_parser = sub.add_parser("simulate", help="offline pipeline with scripted agents")
    _add_grid_arguments(sim_parser, scripted_only=True)
    sim_parser.set_defaults(handler=cmd_simulate)

    report_parser = sub.add_parser("report", help="emit tables and figure data from run stores")
    report_parser.add_argument("run_dirs", nargs="+", type=Path)
    report_parser.add_argument("--out", type=Path, required=True)
    report_parser.add_argument("--compare-humans", action="store_true",
                               help="append the embedded human reference rows")
    report_parser.set_defaults(handler=cmd_report)

    validate_parser = sub.add_parser("validate-prompts",
                                     help="diff rendered prompts against the golden files")
    validate_parser.set_defaults(handler=cmd_validate_prompts)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "agent", None) is None and hasattr(args, "default_agents"):
        args.agent = list(args.default_agents)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
