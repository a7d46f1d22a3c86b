"""Metropolis-Hastings power sampling with suffix-resampling proposals.

A proposal picks a boundary ``t`` uniformly among the eligible positions of
the current generated region, keeps the tokens before it and regenerates
everything after it at the proposal temperature. The target is
``p(x) ** alpha`` over generated suffixes, so only base log-likelihoods and
the two proposal log-probabilities enter the acceptance ratio.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .core import (
    AnnealDecodeError,
    GenerationBudget,
    ModelBackend,
    ScoredSequence,
    Vocabulary,
    score_continuation,
    sample_continuation,
    sequence_logprob,
)
from .schedules import ScheduleSpec, constant, parse_schedule, temperature_at

GRANULARITIES = ("token", "block")
DEFAULT_COT_TEMPLATE = "Let's think step by step."


class NumericError(AnnealDecodeError, ArithmeticError):
    pass


class PreconditionError(AnnealDecodeError, ValueError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    """How proposals are built.

    ``proposal_temp=None`` proposes at the current schedule temperature;
    a number fixes it. ``mode="per_block"`` grows the sequence one block at a
    time and runs ``mcmc_steps`` MH steps after each block.
    """

    budget: GenerationBudget = field(default_factory=GenerationBudget)
    granularity: str = "block"
    proposal_temp: float | None = None
    mode: str = "whole"

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        if self.mode not in ("whole", "per_block"):
            raise ValueError(f"mode must be 'whole' or 'per_block', got {self.mode!r}")
        if self.proposal_temp is not None and not self.proposal_temp > 0:
            raise ValueError("proposal_temp must be > 0")

    @property
    def block_size(self) -> int:
        return self.budget.block_size if self.granularity == "block" else 1


@dataclass(frozen=True)
class ChainState:
    seq: ScoredSequence
    iteration: int = 0
    accepted: int = 0


@dataclass(frozen=True)
class Proposal:
    boundary: int
    new_seq: ScoredSequence
    log_q_fwd: float
    log_q_rev: float
    proposal_tau: float


@dataclass(frozen=True)
class MHRecord:
    iteration: int
    tau: float
    alpha: float
    boundary: int
    proposal_len: int
    logp_current: float
    logp_proposed: float
    logq_fwd: float
    logq_rev: float
    log_accept_ratio: float
    accepted: bool


TRACE_HEADER = [f.name for f in fields(MHRecord)]


def eligible_boundaries(n_generated: int, granularity: str = "token", block_size: int = 1) -> list[int]:
    """Generated-region indices a proposal may restart from."""
    step = block_size if granularity == "block" else 1
    return list(range(0, n_generated, step))


def propose(
    backend: ModelBackend,
    state: ChainState,
    tau: float,
    rng: np.random.Generator,
    *,
    granularity: str = "token",
    block_size: int = 1,
    max_new_tokens: int = 512,
    boundary: int | None = None,
) -> Proposal:
    """Resample the suffix after a uniformly chosen boundary.

    ``boundary`` forces the restart position (it must be eligible) and
    skips the random draw.
    """
    seq = state.seq
    eligible = eligible_boundaries(seq.n_generated, granularity, block_size)
    if not eligible:
        raise PreconditionError("cannot propose from a state with no generated tokens")
    if boundary is None:
        t = eligible[int(rng.integers(len(eligible)))]
    elif boundary in eligible:
        t = boundary
    else:
        raise PreconditionError(f"boundary {boundary} is not eligible (eligible: {eligible[:8]}...)")

    cut = seq.prompt_len + t
    prefix = list(seq.tokens[:cut])
    suffix, tempered = backend.sample(prefix, tau, max_new_tokens - t, rng)
    new_seq = ScoredSequence(
        seq.prompt_len,
        suffix.tokens,
        seq.base_logps[:t] + suffix.base_logps,
        suffix.terminated,
    )
    old_scores = score_continuation(backend, prefix, seq.tokens[cut:], tau)
    n_new = len(eligible_boundaries(new_seq.n_generated, granularity, block_size))
    log_q_fwd = -math.log(len(eligible)) + math.fsum(tempered)
    log_q_rev = -math.log(n_new) + math.fsum(old_scores)
    return Proposal(t, new_seq, log_q_fwd, log_q_rev, tau)


def acceptance_log_ratio(state: ChainState, proposal: Proposal, alpha: float) -> float:
    """``alpha * (logp(x') - logp(x)) + log q(x|x') - log q(x'|x)``.

    A proposal with zero base probability gives ``-inf`` (certain rejection);
    a non-finite current state or forward proposal probability is an error.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha!r}")
    lp_cur = sequence_logprob(state.seq)
    lp_new = sequence_logprob(proposal.new_seq)
    values = (lp_cur, lp_new, proposal.log_q_fwd, proposal.log_q_rev)
    if any(math.isnan(v) or v == math.inf for v in values) or not math.isfinite(lp_cur) \
            or not math.isfinite(proposal.log_q_fwd):
        raise NumericError(f"non-finite acceptance inputs {values}")
    if lp_new == -math.inf or proposal.log_q_rev == -math.inf:
        return -math.inf
    if proposal.new_seq.tokens == state.seq.tokens:
        return 0.0
    return alpha * (lp_new - lp_cur) + proposal.log_q_rev - proposal.log_q_fwd


def mh_step(
    backend: ModelBackend,
    state: ChainState,
    tau_k: float,
    config: ChainConfig,
    rng: np.random.Generator,
    *,
    max_new_tokens: int | None = None,
    boundary: int | None = None,
) -> tuple[ChainState, MHRecord]:
    """One MH transition targeting ``p ** (1 / tau_k)``.

    Always consumes exactly one uniform for the accept test.
    """
    alpha = 1.0 / tau_k
    prop_tau = config.proposal_temp if config.proposal_temp is not None else tau_k
    limit = config.budget.max_new_tokens if max_new_tokens is None else max_new_tokens
    proposal = propose(
        backend, state, prop_tau, rng,
        granularity=config.granularity,
        block_size=config.block_size,
        max_new_tokens=limit,
        boundary=boundary,
    )
    delta = acceptance_log_ratio(state, proposal, alpha)
    u = rng.random()
    accepted = delta >= 0 or u < math.exp(delta)
    iteration = state.iteration + 1
    record = MHRecord(
        iteration=iteration,
        tau=tau_k,
        alpha=alpha,
        boundary=proposal.boundary,
        proposal_len=proposal.new_seq.n_generated,
        logp_current=sequence_logprob(state.seq),
        logp_proposed=sequence_logprob(proposal.new_seq),
        logq_fwd=proposal.log_q_fwd,
        logq_rev=proposal.log_q_rev,
        log_accept_ratio=delta,
        accepted=accepted,
    )
    seq = proposal.new_seq if accepted else state.seq
    return ChainState(seq, iteration, state.accepted + accepted), record


def run_chain(
    backend: ModelBackend,
    prompt: Sequence[int],
    schedule: ScheduleSpec,
    config: ChainConfig,
    rng: np.random.Generator,
) -> tuple[ChainState, list[MHRecord]]:
    """Initialize from a fresh sample at tau_0, then take K MH steps.

    Step ``k`` (1..K) uses ``temperature_at(schedule, k)``, so the whole
    schedule tau_0..tau_K is visited once and the last step runs at tau_end.
    A constant schedule without its own step count runs
    ``config.budget.mcmc_steps`` steps.
    """
    K = config.budget.mcmc_steps if schedule.steps is None else schedule.steps
    if config.mode == "per_block":
        return _run_per_block(backend, prompt, schedule, K, config, rng)
    tau0 = temperature_at(schedule, 0)
    init = sample_continuation(backend, prompt, tau0, config.budget.max_new_tokens, rng)
    state = ChainState(init)
    trace = []
    for k in range(1, K + 1):
        state, record = mh_step(backend, state, temperature_at(schedule, k), config, rng)
        trace.append(record)
    return state, trace


def _run_per_block(backend, prompt, schedule, K, config, rng):
    block = config.budget.block_size
    tau0 = temperature_at(schedule, 0)
    state = ChainState(ScoredSequence(len(prompt), tuple(prompt), ()))
    trace = []
    for b in range(1, config.budget.block_count + 1):
        limit = b * block
        seq = state.seq
        if not seq.terminated and seq.n_generated < limit:
            ext = sample_continuation(backend, seq.tokens, tau0, limit - seq.n_generated, rng)
            seq = ScoredSequence(seq.prompt_len, ext.tokens, seq.base_logps + ext.base_logps, ext.terminated)
            state = ChainState(seq, state.iteration, state.accepted)
        if seq.n_generated == 0:
            break
        for k in range(1, K + 1):
            state, record = mh_step(
                backend, state, temperature_at(schedule, k), config, rng, max_new_tokens=limit
            )
            trace.append(record)
    return state, trace


def acceptance_rate(trace: Sequence[MHRecord]) -> float:
    return sum(r.accepted for r in trace) / len(trace) if trace else float("nan")


# Decoding strategies ------------------------------------------------------

STRATEGY_KINDS = ("direct", "cot", "power_fixed", "annealed")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    tau: float | None = None
    schedule: ScheduleSpec | None = None
    chain: ChainConfig = field(default_factory=ChainConfig)
    cot_template: str = DEFAULT_COT_TEMPLATE
    name: str = ""

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "power_fixed" and not (self.tau is not None and self.tau > 0):
            raise ValueError("power_fixed needs tau > 0")
        if self.kind == "annealed" and self.schedule is None:
            raise ValueError("annealed needs a schedule")
        if not self.name:
            object.__setattr__(self, "name", self._default_name())

    def _default_name(self):
        if self.kind == "power_fixed":
            return f"power:{self.tau:.2f}"
        if self.kind == "annealed":
            return f"anneal:{self.schedule}"
        return self.kind

    @property
    def greedy(self) -> bool:
        return self.kind in ("direct", "cot")

    def chain_schedule(self) -> ScheduleSpec:
        K = self.chain.budget.mcmc_steps
        if self.kind == "power_fixed":
            return constant(self.tau, K)
        if self.schedule.steps is None:
            return self.schedule.with_steps(K)
        return self.schedule


DEFAULT_STRATEGIES = "direct,cot,power:0.25,power:0.90,anneal:exp:0.90:0.25"


def parse_strategy(text: str, chain: ChainConfig | None = None, cot_template: str = DEFAULT_COT_TEMPLATE) -> StrategyConfig:
    """``direct``, ``cot``, ``power:T`` or ``anneal:<schedule>``."""
    chain = chain or ChainConfig()
    text = text.strip()
    head, _, rest = text.partition(":")
    if head in ("direct", "cot") and not rest:
        return StrategyConfig(head, chain=chain, cot_template=cot_template, name=text)
    if head == "power" and rest:
        try:
            tau = float(rest)
        except ValueError:
            raise ValueError(f"malformed strategy {text!r}") from None
        return StrategyConfig("power_fixed", tau=tau, chain=chain, name=text)
    if head == "anneal" and rest:
        return StrategyConfig("annealed", schedule=parse_schedule(rest, chain.budget.mcmc_steps),
                              chain=chain, name=text)
    raise ValueError(f"unknown strategy {text!r}; expected direct, cot, power:T or anneal:SCHEDULE")


def parse_strategies(text: str, chain: ChainConfig | None = None, cot_template: str = DEFAULT_COT_TEMPLATE) -> list[StrategyConfig]:
    out = [parse_strategy(s, chain, cot_template) for s in text.split(",") if s.strip()]
    if len({s.name for s in out}) != len(out):
        raise ValueError("duplicate strategy names")
    if not out:
        raise ValueError("no strategies given")
    return out


def _with_template(prompt: list[int], template: str, codec: Vocabulary | None) -> list[int]:
    if codec is None:
        raise PreconditionError("cot decoding needs a backend with a text vocabulary")
    ids = codec.encode(template)
    if ids and prompt[-len(ids):] == ids:
        return prompt
    return prompt + ids


def decode(
    strategy: StrategyConfig,
    backend: ModelBackend,
    prompt: Sequence[int],
    rng: np.random.Generator,
) -> ScoredSequence:
    """Run one decoding strategy and return its final sequence.

    ``cot`` appends the template unless the prompt already ends with it.
    """
    prompt = list(prompt)
    budget = strategy.chain.budget
    if strategy.kind == "direct":
        return backend.greedy(prompt, budget.max_new_tokens)
    if strategy.kind == "cot":
        return backend.greedy(_with_template(prompt, strategy.cot_template, backend.codec), budget.max_new_tokens)
    state, _ = run_chain(backend, prompt, strategy.chain_schedule(), strategy.chain, rng)
    return state.seq


# Trace files --------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def trace_to_csv(trace: Sequence[MHRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for rec in trace:
        writer.writerow([_fmt(getattr(rec, name)) for name in TRACE_HEADER])
    return buf.getvalue()


class TraceFormatError(AnnealDecodeError, ValueError):
    pass


def read_trace(text: str) -> list[MHRecord]:
    """Parse a trace CSV; errors name the offending row (header is row 1)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError("row 1: empty trace file") from None
    if header != TRACE_HEADER:
        raise TraceFormatError(f"row 1: unexpected header {header}")
    out = []
    for rownum, row in enumerate(reader, start=2):
        if len(row) != len(TRACE_HEADER):
            raise TraceFormatError(f"row {rownum}: expected {len(TRACE_HEADER)} fields, got {len(row)}")
        try:
            out.append(MHRecord(
                iteration=int(row[0]), tau=float(row[1]), alpha=float(row[2]),
                boundary=int(row[3]), proposal_len=int(row[4]),
                logp_current=float(row[5]), logp_proposed=float(row[6]),
                logq_fwd=float(row[7]), logq_rev=float(row[8]),
                log_accept_ratio=float(row[9]), accepted=_parse_flag(row[10]),
            ))
        except ValueError as exc:
            raise TraceFormatError(f"row {rownum}: {exc}") from None
    return out


def _parse_flag(text):
    if text in ("1", "true", "True"):
        return True
    if text in ("0", "false", "False"):
        return False
    raise ValueError(f"bad accepted flag {text!r}")
