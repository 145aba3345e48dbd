"""Command-line entry points.

Subcommands: ``simulate`` (refinement-chain curves), ``curate`` (raw problem
cleanup), ``synthesize`` (hinted critique dataset), ``eval`` (critique-
revision batches against live endpoints), ``judge`` (pairwise majority
vote), and ``train-toy`` (GRPO on the built-in bandit).  Settings resolve
flag > config file > built-in default.  Exit codes: 0 success, 1 operational
failure (endpoint, sandbox, file), 2 usage error.  With ``--json``, errors
are emitted to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

from critloop import dataset, grpo, hints, loop, metrics, sim
from critloop.client import ClientError, EndpointConfig, RoleConfig
from critloop.config import AppConfig, RoleSettings, load_config
from critloop.critique import Solution
from critloop.sandbox import SandboxError

logger = logging.getLogger(__name__)

# Scenario grid for `simulate`: three critique strengths (none = revisions
# that never move off the initial success rate) by two verifier strengths.
CRITIQUE_CHAINS = {
    "none": sim.ChainParams(p_init=0.1, p_cc=0.1, p_cw=0.1),
    "weak": sim.ChainParams(p_init=0.1, p_cc=0.7, p_cw=0.15),
    "strong": sim.ChainParams(p_init=0.1, p_cc=0.9, p_cw=0.3),
}
VERIFIER_DISCS = {
    "strong": sim.DiscParams(tpr=0.7, fpr=0.2),
    "weak": sim.DiscParams(tpr=0.6, fpr=0.3),
}

# Default bandit for `train-toy`: one clearly best arm per context.
def _default_toy_env() -> grpo.ToyEnv:
    rows = []
    for context in range(4):
        row = [0.2, 0.1, 0.15, 0.1, 0.05]
        row[context % 5] = 0.95
        rows.append(tuple(row))
    return grpo.ToyEnv(reward_probs=tuple(rows))


def _role_config(settings: RoleSettings, args, prefix: str) -> RoleConfig:
    """Apply `--{prefix}-url` / `--{prefix}-model` / `--api-key-env` flags."""
    overrides = {}
    url = getattr(args, f"{prefix}_url", None)
    model = getattr(args, f"{prefix}_model", None)
    if url:
        overrides["base_url"] = url
    if model:
        overrides["model"] = model
    if getattr(args, "api_key_env", None):
        overrides["api_key_env_var"] = args.api_key_env
    settings = replace(settings, **overrides)
    endpoint = EndpointConfig(
        base_url=settings.base_url,
        api_key_env_var=settings.api_key_env_var,
        timeout_ms=settings.timeout_ms,
        max_retries=settings.max_retries,
    )
    return RoleConfig(
        endpoint=endpoint,
        model=settings.model,
        temperature=settings.temperature,
        max_tokens=settings.max_tokens,
    )


def _sandbox_parts(config: AppConfig, args) -> tuple[tuple[str, ...], object]:
    interpreter = tuple(args.interpreter) if getattr(args, "interpreter", None) else config.sandbox.interpreter
    return interpreter, config.sandbox.limits()


# -- handlers ------------------------------------------------------------------

def _cmd_simulate(config: AppConfig, args) -> int:
    if any(v is not None for v in (args.p_init, args.p_cc, args.p_cw, args.tpr, args.fpr)):
        missing = [
            name
            for name, value in (
                ("--p-init", args.p_init),
                ("--p-cc", args.p_cc),
                ("--p-cw", args.p_cw),
                ("--tpr", args.tpr),
                ("--fpr", args.fpr),
            )
            if value is None
        ]
        if missing:
            raise ValueError(f"custom simulation needs all chain flags; missing {', '.join(missing)}")
        if not args.out:
            raise ValueError("custom simulation needs --out for its CSV")
        cfg = sim.SimConfig(
            chain=sim.ChainParams(p_init=args.p_init, p_cc=args.p_cc, p_cw=args.p_cw),
            disc=sim.DiscParams(tpr=args.tpr, fpr=args.fpr),
            max_attempts=args.max_attempts,
            trials=args.trials,
            seed=args.seed,
        )
        curve = sim.simulate_chain(cfg)
        sim.emit_curve(curve, args.out)
        print(f"wrote {args.out} ({len(curve)} points)")
        return 0

    os.makedirs(args.out_dir, exist_ok=True)
    manifest = {
        "trials": args.trials,
        "max_attempts": args.max_attempts,
        "seed": args.seed,
        "scenarios": [],
    }
    for critique_name, chain in CRITIQUE_CHAINS.items():
        for verifier_name, disc in VERIFIER_DISCS.items():
            cfg = sim.SimConfig(
                chain=chain,
                disc=disc,
                max_attempts=args.max_attempts,
                trials=args.trials,
                seed=args.seed,
            )
            curve = sim.simulate_chain(cfg)
            filename = f"curve_{critique_name}_critique_{verifier_name}_verifier.csv"
            sim.emit_curve(curve, os.path.join(args.out_dir, filename))
            manifest["scenarios"].append(
                {
                    "critique": critique_name,
                    "verifier": verifier_name,
                    "chain": {"p_init": chain.p_init, "p_cc": chain.p_cc, "p_cw": chain.p_cw},
                    "disc": {"tpr": disc.tpr, "fpr": disc.fpr},
                    "file": filename,
                }
            )
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(manifest['scenarios'])} scenario curves and {manifest_path}")
    return 0


def _cmd_curate(config: AppConfig, args) -> int:
    records = dataset.load_raw_records(args.raw)
    eval_ids: list[str] = []
    eval_descriptions: list[str] = []
    if args.eval_ids:
        with open(args.eval_ids, encoding="utf-8") as fh:
            eval_ids = [line.strip() for line in fh if line.strip()]
    if args.eval_problems:
        held = dataset.load_problems(args.eval_problems)
        eval_ids.extend(p.id for p in held)
        eval_descriptions.extend(p.description for p in held)
    problems, report = dataset.curate(records, eval_ids=eval_ids, eval_descriptions=eval_descriptions)
    dataset.save_problems(problems, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(dataset.report_to_dict(report), fh, indent=2)
            fh.write("\n")
    print(
        f"curated {report.input_count} records -> {report.retained} problems "
        f"({report.malformed_removed} malformed, {report.unusable_tests_removed} unusable, "
        f"{report.deduped} duplicates, {report.decontaminated} held out, "
        f"{report.tests_dropped} tests dropped)"
    )
    return 0


def _cmd_synthesize(config: AppConfig, args) -> int:
    problems = dataset.load_problems(args.problems)
    generator = _role_config(config.generator, args, "generator")
    critic = _role_config(config.critic, args, "critic")
    interpreter, limits = _sandbox_parts(config, args)
    patterns = tuple(args.leakage_pattern) if args.leakage_pattern else hints.DEFAULT_LEAKAGE_PATTERNS
    records, report = hints.synthesize_sft_dataset(
        problems,
        generator,
        critic,
        interpreter=interpreter,
        limits=limits,
        leakage_patterns=patterns,
        workers=args.workers if args.workers else config.loop.workers,
    )
    hints.save_sft_records(records, args.out)
    if args.report:
        payload = {
            "problems": report.problems,
            "produced": report.produced,
            "rejected_empty": report.rejected_empty,
            "rejected_leakage": report.rejected_leakage,
            "failed": report.failed,
            "hints_by_class": report.hints_by_class,
            "failures": [{"problem_id": f.problem_id, "error": f.error} for f in report.failures],
        }
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    by_class = ", ".join(f"{k}={v}" for k, v in sorted(report.hints_by_class.items())) or "none"
    print(
        f"synthesized {report.produced}/{report.problems} records "
        f"({report.rejected_empty} empty, {report.rejected_leakage} leaking, "
        f"{report.failed} failed); hints: {by_class}"
    )
    return 0


def _cmd_eval(config: AppConfig, args) -> int:
    problems = dataset.load_problems(args.problems)
    generator = _role_config(config.generator, args, "generator")
    critic = _role_config(config.critic, args, "critic")
    interpreter, limits = _sandbox_parts(config, args)
    loop_config = loop.LoopConfig(
        critic=critic, generator=generator, interpreter=interpreter, limits=limits
    )
    rounds = args.rounds if args.rounds else config.loop.rounds
    workers = args.workers if args.workers else config.loop.workers
    report = loop.evaluate_dataset(problems, rounds, loop_config, workers=workers)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(loop.report_to_dict(report), fh, indent=2)
        fh.write("\n")
    if args.trajectories:
        loop.save_trajectories(report.trajectories, args.trajectories)
    final = rounds
    print(
        f"evaluated {len(report.trajectories)} problems over {rounds} round(s): "
        f"initial {report.initial_pass_rate:.3f} -> final {report.pass_at_1[final]:.3f} "
        f"(up {report.delta_up[final]:.3f}, down {report.delta_down[final]:.3f}, "
        f"timeouts {report.timeout_rate:.3f}, {len(report.failures)} failed)"
    )
    return 0


def _cmd_judge(config: AppConfig, args) -> int:
    problems = {p.id: p for p in dataset.load_problems(args.problems)}
    critic = _role_config(config.critic, args, "critic")
    results = []
    labeled = correct = 0
    with open(args.pairs, encoding="utf-8") as fh:
        pairs = [json.loads(line) for line in fh if line.strip()]
    for pair in pairs:
        problem = problems.get(pair["problem_id"])
        if problem is None:
            raise ValueError(f"pair references unknown problem id {pair['problem_id']!r}")
        preference = metrics.majority_vote_judge(
            problem,
            Solution(source=pair["solution_a"]),
            Solution(source=pair["solution_b"]),
            critic,
            votes=args.votes,
        )
        row = {"problem_id": problem.id, "preference": preference.value}
        if "label" in pair:
            labeled += 1
            correct += pair["label"] == preference.value
            row["label"] = pair["label"]
        results.append(row)
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in results:
            fh.write(json.dumps(row) + "\n")
    summary = f"judged {len(results)} pairs with {args.votes} vote(s) each"
    if labeled:
        summary += f"; accuracy {correct / labeled:.3f} on {labeled} labeled pairs"
    print(summary)
    return 0


def _cmd_train_toy(config: AppConfig, args) -> int:
    overrides = {}
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    if args.train_batch_size is not None:
        overrides["train_batch_size"] = args.train_batch_size
    if args.mini_batch_size is not None:
        overrides["mini_batch_size"] = args.mini_batch_size
    if args.group_size is not None:
        overrides["group_size"] = args.group_size
    hyper = replace(config.rl, **overrides)
    result = grpo.train_toy(_default_toy_env(), hyper, steps=args.steps, seed=args.seed)
    grpo.export_training_csv(result.curve, args.out)
    print(
        f"trained {args.steps} steps (seed {args.seed}): expected reward "
        f"{result.curve[0].expected_reward:.3f} -> {result.curve[-1].expected_reward:.3f}; "
        f"wrote {args.out}"
    )
    return 0


# -- parser ---------------------------------------------------------------------

def _add_role_flags(parser: argparse.ArgumentParser, roles: Sequence[str]) -> None:
    for role in roles:
        parser.add_argument(f"--{role}-url", help=f"{role} endpoint base URL")
        parser.add_argument(f"--{role}-model", help=f"{role} model name")
    parser.add_argument(
        "--api-key-env",
        help="NAME of the environment variable holding the API key (never the key itself)",
    )


def _add_sandbox_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--interpreter",
        nargs="+",
        metavar="ARGV",
        help="interpreter argv for sandboxed runs (default from config)",
    )
    parser.add_argument("--workers", type=int, help="parallel problems (default from config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="critloop",
        description="Critique-revision loops, hinted critique synthesis, and toy GRPO.",
    )
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--json", action="store_true", help="emit errors as JSON on stderr")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("simulate", help="refinement-chain success curves")
    p.add_argument("--out-dir", default="sim_out", help="directory for the scenario grid")
    p.add_argument("--out", help="CSV path (custom single run)")
    p.add_argument("--p-init", type=float, help="initial success probability")
    p.add_argument("--p-cc", type=float, help="P(correct stays correct) per round")
    p.add_argument("--p-cw", type=float, help="P(wrong becomes correct) per round")
    p.add_argument("--tpr", type=float, help="verifier true-positive rate")
    p.add_argument("--fpr", type=float, help="verifier false-positive rate")
    p.add_argument("--max-attempts", type=int, default=8)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_simulate)

    p = commands.add_parser("curate", help="clean raw problems into suites")
    p.add_argument("--raw", required=True, help="raw problems JSONL")
    p.add_argument("--out", required=True, help="curated problems JSONL")
    p.add_argument("--eval-ids", help="file of held-out problem ids, one per line")
    p.add_argument("--eval-problems", help="held-out problems JSONL (ids and descriptions)")
    p.add_argument("--report", help="write curation counts as JSON")
    p.set_defaults(handler=_cmd_curate)

    p = commands.add_parser("synthesize", help="hinted critiques -> SFT records")
    p.add_argument("--problems", required=True, help="curated problems JSONL")
    p.add_argument("--out", required=True, help="SFT records JSONL")
    p.add_argument("--report", help="write synthesis counts as JSON")
    p.add_argument(
        "--leakage-pattern",
        action="append",
        help="case-insensitive rejection substring (repeatable; default built-ins)",
    )
    _add_role_flags(p, ["generator", "critic"])
    _add_sandbox_flags(p)
    p.set_defaults(handler=_cmd_synthesize)

    p = commands.add_parser("eval", help="critique-revision batch evaluation")
    p.add_argument("--problems", required=True, help="curated problems JSONL")
    p.add_argument("--rounds", type=int, help="revision rounds per problem")
    p.add_argument("--out", required=True, help="write the batch report JSON here")
    p.add_argument("--trajectories", help="also write raw trajectories JSONL")
    _add_role_flags(p, ["generator", "critic"])
    _add_sandbox_flags(p)
    p.set_defaults(handler=_cmd_eval)

    p = commands.add_parser("judge", help="pairwise preference by critic majority vote")
    p.add_argument("--problems", required=True, help="curated problems JSONL")
    p.add_argument("--pairs", required=True, help="JSONL of {problem_id, solution_a, solution_b[, label]}")
    p.add_argument("--votes", type=int, default=1, help="votes per solution (odd)")
    p.add_argument("--out", required=True, help="write preferences JSONL here")
    _add_role_flags(p, ["critic"])
    p.set_defaults(handler=_cmd_judge)

    p = commands.add_parser("train-toy", help="GRPO on the built-in bandit")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="train_curve.csv", help="training curve CSV")
    p.add_argument("--learning-rate", type=float, help="override [rl] learning_rate")
    p.add_argument("--train-batch-size", type=int, help="override [rl] train_batch_size")
    p.add_argument("--mini-batch-size", type=int, help="override [rl] mini_batch_size")
    p.add_argument("--group-size", type=int, help="override [rl] group_size")
    p.set_defaults(handler=_cmd_train_toy)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "judge" and (args.votes < 1 or args.votes % 2 == 0):
        parser.error("--votes must be a positive odd integer")
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    try:
        config = load_config(args.config)
        return args.handler(config, args)
    except (ClientError, SandboxError, OSError, ValueError) as exc:
        if args.json:
            print(
                json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                file=sys.stderr,
            )
        else:
            print(f"critloop: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
