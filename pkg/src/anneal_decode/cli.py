"""Command-line entry point: ``anneal-decode <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (including failed oracle
tolerances), 2 usage error. Settings resolve as flags > ``--config`` JSON
file > defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .client import RemoteBackend, RemoteEndpoint
from .core import AnnealDecodeError, GenerationBudget, Vocabulary, sample_continuation, sequence_logprob
from .harness import atomic_write, emit_report, evaluate, generate_synthetic, load_vignettes, write_vignettes
from .models import TabularModel, load_tabular, ngram_from_file
from .plots import trace_svg
from .sampler import (
    DEFAULT_COT_TEMPLATE,
    DEFAULT_STRATEGIES,
    ChainConfig,
    ChainState,
    acceptance_rate,
    mh_step,
    parse_strategies,
    read_trace,
    run_chain,
    trace_to_csv,
)
from .schedules import constant, parse_schedule
from .scripted import scripted_backend

log = logging.getLogger("anneal_decode")

DEFAULTS = {
    "steps": 10,
    "blocks": 16,
    "max_new_tokens": 512,
    "proposal_temp": None,
    "granularity": "block",
    "mode": "whole",
    "out": "out",
    "order": 3,
    "tokenize": "char",
    "smoothing": 1.0,
    "model": "default",
    "timeout_ms": 60_000,
    "retries": 2,
    "strategies": DEFAULT_STRATEGIES,
    "cot_template": DEFAULT_COT_TEMPLATE,
    "workers": os.cpu_count() or 1,
    "alpha": 2.0,
    "chain_steps": 200_000,
    "burn_in": 1000,
    "tv_tol": 0.02,
}
COMMAND_DEFAULTS = {
    "sample": {"schedule": "const:0.25"},
    "anneal": {"schedule": "exp:0.90:0.25"},
    "oracle-check": {"granularity": "token", "out": None},
    "plot": {"out": None},
}


class UsageError(Exception):
    pass


def _add_budget(p):
    p.add_argument("--steps", type=int, help="MCMC steps K (default 10)")
    p.add_argument("--blocks", type=int, help="block count (default 16)")
    p.add_argument("--max-new-tokens", type=int, help="generation budget (default 512)")
    p.add_argument("--proposal-temp", type=float,
                   help="fixed proposal temperature (default: follow the schedule)")
    p.add_argument("--granularity", choices=["token", "block"], help="proposal boundaries (default block)")
    p.add_argument("--mode", choices=["whole", "per_block"], help="run K steps once or after every block")


def _add_backend(p, required=True):
    p.add_argument("--backend", required=required,
                   help="tabular:FILE|M2|M2prime, ngram:CORPUS, remote:URL or scripted:KIND")
    p.add_argument("--order", type=int, help="n-gram order (default 3)")
    p.add_argument("--tokenize", choices=["char", "whitespace"], help="n-gram corpus tokenization")
    p.add_argument("--smoothing", type=float, help="n-gram add-k constant (default 1)")
    p.add_argument("--model", help="model id sent to remote servers")
    p.add_argument("--vocab", help="JSON vocabulary for remote backends: {symbols, joiner, eos}")
    p.add_argument("--timeout-ms", type=int)
    p.add_argument("--retries", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anneal-decode", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("sample", "fixed-temperature power sampling"), ("anneal", "simulated annealing")):
        p = sub.add_parser(name, help=help_)
        _add_backend(p)
        _add_budget(p)
        p.add_argument("--schedule", help=f"temperature schedule (default {COMMAND_DEFAULTS[name]['schedule']})")
        p.add_argument("--seed", type=int)
        p.add_argument("--prompt", help="prompt text (needs a backend vocabulary)")
        p.add_argument("--prompt-tokens", help="comma-separated prompt token ids")
        p.add_argument("--out", help="output directory (default ./out)")

    p = sub.add_parser("oracle-check", help="exact-oracle verification on a tabular model")
    _add_backend(p)
    p.add_argument("--alpha", type=float, help="power exponent (default 2)")
    p.add_argument("--proposal-temp", type=float, help="proposal temperature (default 1/alpha)")
    p.add_argument("--granularity", choices=["token", "block"], help="default token")
    p.add_argument("--chain-steps", type=int, help="sampled chain length (default 200000)")
    p.add_argument("--burn-in", type=int, help="discarded iterations (default 1000)")
    p.add_argument("--tv-tol", type=float, help="TV tolerance (default 0.02)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("eval", help="ToM vignette evaluation")
    _add_backend(p)
    _add_budget(p)
    p.add_argument("--vignettes", required=True, help="JSONL vignette file")
    p.add_argument("--strategies", help=f"comma-separated (default {DEFAULT_STRATEGIES})")
    p.add_argument("--cot-template", help="appended to CoT prompts")
    p.add_argument("--seed", help="seed or comma-separated seeds")
    p.add_argument("--workers", type=int, help="worker threads (default: CPU count)")
    p.add_argument("--exclude-failures", action="store_true",
                   help="drop failed instances from accuracy denominators")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("plot", help="SVG chart of a trace CSV")
    p.add_argument("trace")
    p.add_argument("--out", help="SVG path (default: trace path with .svg)")

    p = sub.add_parser("synth", help="write synthetic TB/FB vignettes")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    return parser


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from the config file, then the defaults."""
    config = {}
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
    defaults = dict(DEFAULTS, **COMMAND_DEFAULTS.get(args.command, {}))
    for key, value in vars(args).items():
        if value is None:
            key_cfg = key.replace("_", "-")
            if key in config:
                setattr(args, key, config[key])
            elif key_cfg in config:
                setattr(args, key, config[key_cfg])
            elif key in defaults:
                setattr(args, key, defaults[key])
    return args


def make_backend(args):
    kind, _, target = args.backend.partition(":")
    if not target:
        raise UsageError(f"backend spec {args.backend!r} needs KIND:TARGET")
    if kind == "tabular":
        return load_tabular(target)
    if kind == "ngram":
        return ngram_from_file(target, args.order, args.smoothing, args.tokenize)
    if kind == "remote":
        codec = None
        if args.vocab:
            spec = json.loads(Path(args.vocab).read_text(encoding="utf-8"))
            codec = Vocabulary(spec["symbols"], spec.get("joiner", ""), spec.get("eos"))
        endpoint = RemoteEndpoint.from_env(target, timeout_ms=args.timeout_ms, retries=args.retries,
                                           model=args.model)
        return RemoteBackend(endpoint, codec=codec)
    if kind == "scripted":
        try:
            return scripted_backend(target)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    raise UsageError(f"unknown backend kind {kind!r}")


def _chain_config(args) -> ChainConfig:
    try:
        budget = GenerationBudget(args.max_new_tokens, args.blocks, args.steps)
        return ChainConfig(budget, args.granularity, args.proposal_temp, args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _prompt(args, backend) -> list[int]:
    if args.prompt is not None and args.prompt_tokens is not None:
        raise UsageError("give --prompt or --prompt-tokens, not both")
    if args.prompt_tokens:
        try:
            return [int(t) for t in args.prompt_tokens.split(",") if t.strip()]
        except ValueError:
            raise UsageError(f"malformed --prompt-tokens {args.prompt_tokens!r}") from None
    if args.prompt:
        if backend.codec is None:
            raise UsageError(f"backend {backend.name} has no vocabulary; use --prompt-tokens")
        return backend.codec.encode(args.prompt)
    return []


def _require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} requires --seed")


def cmd_chain(args) -> int:
    _require_seed(args)
    config = _chain_config(args)
    K = config.budget.mcmc_steps
    try:
        schedule = parse_schedule(args.schedule, max(K, 1))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    label = str(schedule)
    if K == 0:
        # init sample at tau_0 only
        schedule = constant(schedule.tau_start, 0)
    backend = make_backend(args)
    prompt = _prompt(args, backend)
    rng = np.random.default_rng(args.seed)
    state, trace = run_chain(backend, prompt, schedule, config, rng)
    seq = state.seq
    result = {
        "seed": args.seed,
        "schedule": label,
        "steps": len(trace),
        "prompt_len": seq.prompt_len,
        "tokens": list(seq.generated),
        "terminated": seq.terminated,
        "logp": sequence_logprob(seq),
        "acceptance_rate": acceptance_rate(trace) if trace else None,
        "text": backend.codec.decode(seq.generated) if backend.codec else None,
    }
    out = Path(args.out)
    atomic_write(out / "trace.csv", trace_to_csv(trace))
    atomic_write(out / "result.json", json.dumps(result, sort_keys=True, indent=2) + "\n")
    print(f"{args.command}: {len(trace)} steps, logp={result['logp']:.6g}, wrote {out}/")
    return 0


def cmd_oracle_check(args) -> int:
    backend = make_backend(args)
    if not isinstance(backend, TabularModel):
        raise UsageError("oracle-check needs a tabular backend")
    alpha = args.alpha
    granularity = args.granularity
    tau = 1.0 / alpha
    prop = args.proposal_temp if args.proposal_temp is not None else tau
    seed = 0 if args.seed is None else args.seed
    budget = GenerationBudget(max(backend.max_len, 1), 1, args.chain_steps)

    dist = oracle.enumerate_joint(backend, backend.max_len)
    naive = oracle.naive_marginal(backend, alpha)
    correct = oracle.correct_marginal(dist, alpha)
    full, P = oracle.exact_transition_matrix(backend, alpha, prop, granularity, 1, budget.max_new_tokens)
    pi = oracle.power_distribution(full, alpha).probs
    residual = oracle.stationarity_residual(pi, P)
    balance = oracle.detailed_balance_error(pi, P)
    row_err = float(np.abs(P.sum(axis=1) - 1).max())

    config = ChainConfig(budget, granularity, prop)
    rng = np.random.default_rng(seed)
    samples = []
    state = ChainState(sample_continuation(backend, [], tau, budget.max_new_tokens, rng))
    for k in range(1, args.chain_steps + 1):
        state, _ = mh_step(backend, state, tau, config, rng)
        if k >= args.burn_in:
            samples.append(state.seq.generated)
    empirical = oracle.empirical_distribution(samples, full.support)
    tv = oracle.tv_distance(empirical, oracle.power_distribution(full, alpha))

    checks = {
        "rows_sum_to_one": row_err < 1e-9,
        "stationarity": residual < 1e-9,
        "detailed_balance": balance < 1e-9,
        "chain_tv": tv <= args.tv_tol,
    }
    report = oracle.oracle_report(
        dist, alpha, naive, correct, tv,
        stationarity_residual=residual, detailed_balance_error=balance, row_sum_error=row_err,
        chain_steps=args.chain_steps, burn_in=args.burn_in, seed=seed, proposal_temp=prop,
        granularity=granularity, checks=checks,
    )
    text = oracle.report_json(report)
    if args.out:
        atomic_write(Path(args.out) / "oracle.json", text)
    sys.stdout.write(text)
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        print(f"oracle-check FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    if args.seed is None:
        raise UsageError("eval requires --seed")
    try:
        seeds = [int(s) for s in str(args.seed).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"malformed --seed {args.seed!r}") from None
    config = _chain_config(args)
    try:
        strategies = parse_strategies(args.strategies, config, args.cot_template)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    vignettes = load_vignettes(args.vignettes)
    if not vignettes:
        raise AnnealDecodeError(f"{args.vignettes} has no vignettes")
    backend = make_backend(args)
    report = evaluate(vignettes, strategies, backend, seeds, workers=max(1, args.workers),
                      exclude_failures=args.exclude_failures)
    out = Path(args.out)
    emit_report(report, out / "report.csv", "csv")
    emit_report(report, out / "report.json", "json")
    sys.stdout.write(report.to_csv())
    return 0


def cmd_plot(args) -> int:
    trace_path = Path(args.trace)
    trace = read_trace(trace_path.read_text(encoding="utf-8"))
    if not trace:
        raise AnnealDecodeError(f"{trace_path}: trace has no rows")
    out = Path(args.out) if args.out else trace_path.with_suffix(".svg")
    atomic_write(out, trace_svg(trace))
    print(f"wrote {out}")
    return 0


def cmd_synth(args) -> int:
    write_vignettes(generate_synthetic(args.count, args.seed), args.out)
    return 0


COMMANDS = {
    "sample": cmd_chain,
    "anneal": cmd_chain,
    "oracle-check": cmd_oracle_check,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolve(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (AnnealDecodeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
