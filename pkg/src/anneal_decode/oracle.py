"""Brute-force ground truth for small in-process backends.

Everything here enumerates the full sequence space and works from the raw
``conditional`` rows of a :class:`~anneal_decode.core.LocalBackend`; none of
it goes through the sampler's scoring or proposal code.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import AnnealDecodeError, LocalBackend

MAX_STATES = 10**7


class StateSpaceError(AnnealDecodeError):
    pass


@dataclass(frozen=True)
class ExactDistribution:
    """Probability mass over complete generated suffixes (prompt excluded)."""

    support: tuple[tuple[int, ...], ...]
    logp: np.ndarray
    vocab_size: int

    def __post_init__(self):
        if len(self.support) != len(self.logp):
            raise ValueError("support and logp lengths differ")
        if len(set(self.support)) != len(self.support):
            raise ValueError("duplicate sequences in support")

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(zip(self.support, self.probs.tolist()))

    def prob(self, seq: Sequence[int]) -> float:
        return self.as_dict().get(tuple(seq), 0.0)

    def index(self) -> dict[tuple[int, ...], int]:
        return {s: i for i, s in enumerate(self.support)}


def _key(seq) -> str:
    return ",".join(map(str, seq))


def _effective_len(backend: LocalBackend, prompt, max_len):
    n = max_len
    if backend.max_len is not None:
        n = min(n, backend.max_len - len(prompt))
    return max(n, 0)


def guard(backend: LocalBackend, n: int) -> None:
    count = backend.vocab_size ** n
    if count > MAX_STATES:
        raise StateSpaceError(
            f"refusing to enumerate {backend.vocab_size}^{n} = {count} sequences (limit {MAX_STATES})"
        )


def _tempered_row(backend, prefix, tau):
    logp = np.asarray(backend.conditional(list(prefix)), dtype=float)
    if tau == 1.0:
        return logp, logp
    return logp, logp / tau - logsumexp(logp / tau)


def _completions(backend, prefix, budget, tau) -> Iterator[tuple[tuple[int, ...], float, float]]:
    """All (suffix, base logp, tempered logp) reachable from ``prefix``.

    A branch ends at a terminal prefix or after ``budget`` tokens.
    """
    stack = [((), 0.0, 0.0)]
    while stack:
        suffix, lp, lq = stack.pop()
        full = list(prefix) + list(suffix)
        if len(suffix) >= budget or backend.is_terminal(full):
            yield suffix, lp, lq
            continue
        base, tempered = _tempered_row(backend, full, tau)
        for tok in range(backend.vocab_size - 1, -1, -1):
            if base[tok] == -np.inf:
                continue
            stack.append((suffix + (tok,), lp + base[tok], lq + tempered[tok]))


def enumerate_joint(
    backend: LocalBackend,
    max_len: int,
    prompt: Sequence[int] = (),
    include_truncated: bool = False,
) -> ExactDistribution:
    """Exact distribution over generated suffixes of length <= ``max_len``.

    Only sequences that end on their own are kept unless
    ``include_truncated``; the kept mass is renormalized (conditioning on
    termination within ``max_len``), which is a no-op for fixed-length
    tables.
    """
    n = _effective_len(backend, prompt, max_len)
    guard(backend, n)
    support, logps = [], []
    for suffix, lp, _ in _completions(backend, prompt, n, 1.0):
        if not include_truncated and not backend.is_terminal(list(prompt) + list(suffix)):
            continue
        support.append(suffix)
        logps.append(lp)
    if not support:
        raise StateSpaceError(f"no sequence terminates within {max_len} tokens")
    order = sorted(range(len(support)), key=lambda i: support[i])
    logp = np.array([logps[i] for i in order])
    logp -= logsumexp(logp)
    return ExactDistribution(tuple(support[i] for i in order), logp, backend.vocab_size)


def power_distribution(dist: ExactDistribution, alpha: float) -> ExactDistribution:
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if alpha == 1:
        return dist
    z = alpha * dist.logp
    return ExactDistribution(dist.support, z - logsumexp(z), dist.vocab_size)


def correct_marginal(dist: ExactDistribution, alpha: float, position: int = 0) -> np.ndarray:
    """Marginal of the token at ``position`` under the power-sharpened joint."""
    power = power_distribution(dist, alpha)
    out = np.zeros(dist.vocab_size)
    for seq, p in zip(power.support, power.probs):
        if len(seq) > position:
            out[seq[position]] += p
    return out


def naive_marginal(backend: LocalBackend, alpha: float, position: int = 0, prompt: Sequence[int] = ()) -> np.ndarray:
    """First-token distribution of per-step low-temperature sampling:
    ``p(x0) ** alpha`` renormalized over the vocabulary."""
    if position != 0:
        raise ValueError("only the first generated position has a context-free naive marginal")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    z = alpha * np.asarray(backend.conditional(list(prompt)), dtype=float)
    return np.exp(z - logsumexp(z))


def marginal_gap(backend: LocalBackend, alpha: float, max_len: int = 64) -> float:
    """Largest absolute difference between the naive and correct first-token marginals."""
    dist = enumerate_joint(backend, max_len, include_truncated=True)
    return float(np.abs(naive_marginal(backend, alpha) - correct_marginal(dist, alpha)).max())


def _eligible_count(n, granularity, block_size):
    step = block_size if granularity == "block" else 1
    return len(range(0, n, step))


def _moves(backend, alpha, proposal_tau, granularity, block_size, max_new_tokens, prompt):
    """Yield ``(a, b, proposal prob, acceptance prob)`` for every MH move.

    Self-proposals (``b == a``) are yielded with acceptance 1.
    """
    dist = enumerate_joint(backend, max_new_tokens, prompt, include_truncated=True)
    yield dist
    base_lp = dict(zip(dist.support, dist.logp))  # normalized; constants cancel in ratios
    step = block_size if granularity == "block" else 1
    cache: dict = {}
    for a in dist.support:
        log_e_a = math.log(_eligible_count(len(a), granularity, block_size))
        for t in range(0, len(a), step):
            head = a[:t]
            if head not in cache:
                cache[head] = {
                    suffix: lq
                    for suffix, _, lq in _completions(
                        backend, list(prompt) + list(head), max_new_tokens - t, proposal_tau
                    )
                }
            comps = cache[head]
            log_q_rev = comps[a[t:]]
            for suffix, lq in comps.items():
                b = head + suffix
                prop = math.exp(lq - log_e_a)
                if b == a:
                    yield a, b, prop, 1.0
                    continue
                log_e_b = math.log(_eligible_count(len(b), granularity, block_size))
                delta = (alpha * (base_lp[b] - base_lp[a])
                         + (log_q_rev - log_e_b) - (lq - log_e_a))
                yield a, b, prop, 1.0 if delta >= 0 else math.exp(delta)


def exact_transition_matrix(
    backend: LocalBackend,
    alpha: float,
    proposal_tau: float = 1.0,
    granularity: str = "token",
    block_size: int = 1,
    max_new_tokens: int = 512,
    prompt: Sequence[int] = (),
) -> tuple[ExactDistribution, np.ndarray]:
    """The MH kernel as a dense matrix over every reachable generated suffix.

    Returns the base distribution (its support orders the rows) and ``P``
    with ``P[a, b]`` = sum over boundaries of
    selection x proposal x acceptance; rejected mass stays on the diagonal.
    """
    moves = _moves(backend, alpha, proposal_tau, granularity, block_size, max_new_tokens, prompt)
    dist = next(moves)
    idx = dist.index()
    P = np.zeros((len(idx), len(idx)))
    for a, b, prop, acc in moves:
        i, j = idx[a], idx[b]
        P[i, j] += prop * acc
        P[i, i] += prop * (1.0 - acc)
    return dist, P


def rejection_mass(
    backend: LocalBackend,
    alpha: float,
    proposal_tau: float = 1.0,
    granularity: str = "token",
    block_size: int = 1,
    max_new_tokens: int = 512,
    prompt: Sequence[int] = (),
) -> tuple[ExactDistribution, np.ndarray]:
    """Per-state probability that one MH step rejects its proposal."""
    moves = _moves(backend, alpha, proposal_tau, granularity, block_size, max_new_tokens, prompt)
    dist = next(moves)
    idx = dist.index()
    out = np.zeros(len(idx))
    for a, _, prop, acc in moves:
        out[idx[a]] += prop * (1.0 - acc)
    return dist, out


def stationarity_residual(pi: np.ndarray, P: np.ndarray) -> float:
    """L1 norm of ``pi P - pi``."""
    return float(np.abs(pi @ P - pi).sum())


def detailed_balance_error(pi: np.ndarray, P: np.ndarray) -> float:
    """Largest entrywise ``|pi_a P_ab - pi_b P_ba|``."""
    flow = pi[:, None] * P
    return float(np.abs(flow - flow.T).max())


def expected_acceptance_rate(pi: np.ndarray, reject: np.ndarray) -> float:
    """Stationary acceptance rate given per-state rejection mass."""
    return float(pi @ (1.0 - reject))


def initial_distribution(
    backend: LocalBackend, tau: float, dist: ExactDistribution, prompt: Sequence[int] = (),
    max_new_tokens: int = 512,
) -> np.ndarray:
    """Distribution of a fresh autoregressive sample at temperature ``tau``,
    aligned with ``dist.support``."""
    comps = {s: lq for s, _, lq in _completions(backend, prompt, max_new_tokens, tau)}
    return np.array([math.exp(comps.get(s, -math.inf)) for s in dist.support])


def annealed_final_distribution(
    backend: LocalBackend,
    temperatures: Sequence[float],
    proposal_temp: float | None = None,
    granularity: str = "token",
    block_size: int = 1,
    max_new_tokens: int = 512,
) -> tuple[ExactDistribution, np.ndarray]:
    """Exact law of the chain's final state under a temperature sequence.

    ``temperatures[0]`` is the initialization temperature and each later
    entry drives one MH step, matching how chains are run.
    """
    dist = enumerate_joint(backend, max_new_tokens, include_truncated=True)
    law = initial_distribution(backend, temperatures[0], dist, max_new_tokens=max_new_tokens)
    kernels: dict = {}
    for tau in temperatures[1:]:
        prop = proposal_temp if proposal_temp is not None else tau
        if (tau, prop) not in kernels:
            kernels[(tau, prop)] = exact_transition_matrix(
                backend, 1.0 / tau, prop, granularity, block_size, max_new_tokens
            )[1]
        law = law @ kernels[(tau, prop)]
    return dist, law


def tv_distance(d1, d2) -> float:
    """Half the L1 distance. Accepts :class:`ExactDistribution` or mappings
    from sequence to probability; both must cover the same sequences."""
    m1, m2 = _as_mapping(d1), _as_mapping(d2)
    if set(m1) != set(m2):
        raise ValueError("distributions are defined over different sequence sets")
    return 0.5 * math.fsum(abs(m1[s] - m2[s]) for s in m1)


def _as_mapping(d) -> Mapping:
    if isinstance(d, ExactDistribution):
        return d.as_dict()
    return {tuple(k): float(v) for k, v in d.items()}


def empirical_distribution(samples, universe) -> dict[tuple[int, ...], float]:
    counts = {tuple(s): 0 for s in universe}
    n = 0
    for s in samples:
        s = tuple(s)
        if s not in counts:
            raise ValueError(f"sample {s} outside the universe")
        counts[s] += 1
        n += 1
    return {s: c / n for s, c in counts.items()}


def mode_of(dist, tol: float = 1e-12) -> set[tuple[int, ...]]:
    m = _as_mapping(dist)
    top = max(m.values())
    return {s for s, p in m.items() if p >= top - tol}


def oracle_report(dist: ExactDistribution, alpha: float, naive: np.ndarray, correct: np.ndarray,
                  tv: float | None = None, **extra) -> dict:
    power = power_distribution(dist, alpha)
    report = {
        "alpha": alpha,
        "distribution": {_key(s): p for s, p in zip(power.support, power.probs.tolist())},
        "mode": sorted(_key(s) for s in mode_of(power)),
        "naive_marginal": naive.tolist(),
        "correct_marginal": correct.tolist(),
        "naive_vs_correct_gap": float(np.abs(naive - correct).max()),
        "tv": tv,
    }
    report.update(extra)
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
