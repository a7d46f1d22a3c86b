"""Token/sequence data model and the backend interface the samplers consume.

All probabilities live in natural-log space. A backend is a deterministic
score function; randomness only ever comes from a caller-supplied
``numpy.random.Generator``.
"""
from __future__ import annotations

import abc
import bisect
import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class AnnealDecodeError(Exception):
    """Base class for errors raised by this package."""


class InvalidTokenError(AnnealDecodeError, ValueError):
    pass


class BackendError(AnnealDecodeError, RuntimeError):
    pass


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0 or math.isinf(tau):
        raise ValueError(f"temperature must be a positive finite real, got {tau!r}")
    return tau


@dataclass(frozen=True)
class ScoredSequence:
    """Prompt plus generated tokens, with untempered log-probs of the generated part."""

    prompt_len: int
    tokens: tuple[int, ...]
    base_logps: tuple[float, ...]
    terminated: bool = False

    def __post_init__(self):
        if len(self.base_logps) != len(self.tokens) - self.prompt_len:
            raise ValueError(
                f"{len(self.base_logps)} log-probs for "
                f"{len(self.tokens) - self.prompt_len} generated tokens"
            )

    @property
    def prompt(self) -> tuple[int, ...]:
        return self.tokens[: self.prompt_len]

    @property
    def generated(self) -> tuple[int, ...]:
        return self.tokens[self.prompt_len :]

    @property
    def n_generated(self) -> int:
        return len(self.tokens) - self.prompt_len


@dataclass(frozen=True)
class GenerationBudget:
    max_new_tokens: int = 512
    block_count: int = 16
    mcmc_steps: int = 10

    def __post_init__(self):
        # mcmc_steps=0 is allowed: the chain then returns its initial sample.
        for name, lowest in (("max_new_tokens", 1), ("block_count", 1), ("mcmc_steps", 0)):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < lowest:
                raise ValueError(f"{name} must be an integer >= {lowest}, got {value!r}")
        if self.max_new_tokens % self.block_count:
            raise ValueError(
                f"max_new_tokens={self.max_new_tokens} is not divisible by "
                f"block_count={self.block_count}"
            )

    @property
    def block_size(self) -> int:
        return self.max_new_tokens // self.block_count


class Vocabulary:
    """Bidirectional map between symbols and token ids.

    ``joiner`` is placed between decoded symbols ("" for characters, " " for
    whitespace tokens).
    """

    def __init__(self, symbols: Sequence[str], joiner: str = "", eos: str | None = None):
        self.symbols = list(symbols)
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")
        self.joiner = joiner
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self.eos_id = self.index[eos] if eos is not None else None

    def __len__(self):
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        pieces = list(text) if self.joiner == "" else text.split()
        try:
            return [self.index[p] for p in pieces]
        except KeyError as exc:
            raise InvalidTokenError(f"symbol {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        return self.joiner.join(
            self.symbols[i] for i in ids if i != self.eos_id
        )


class ModelBackend(abc.ABC):
    """Next-token scoring and tempered suffix sampling.

    Subclasses set ``vocab_size`` and optionally ``eos_id`` (end marker) and
    ``max_len`` (fixed total sequence length, prompt included).
    """

    vocab_size: int | None = None
    eos_id: int | None = None
    max_len: int | None = None
    codec: Vocabulary | None = None
    name: str = "backend"

    def is_terminal(self, tokens: Sequence[int]) -> bool:
        if self.max_len is not None and len(tokens) >= self.max_len:
            return True
        return self.eos_id is not None and len(tokens) > 0 and tokens[-1] == self.eos_id

    @abc.abstractmethod
    def score(self, prefix: Sequence[int], continuation: Sequence[int], tau: float) -> list[float]:
        """Tempered per-token log-probs of ``continuation`` given ``prefix``."""

    @abc.abstractmethod
    def sample(
        self, prefix: Sequence[int], tau: float, max_tokens: int, rng: np.random.Generator
    ) -> tuple[ScoredSequence, list[float]]:
        """Sample a continuation; returns the sequence and the tempered log-probs of its tokens."""

    @abc.abstractmethod
    def greedy(self, prefix: Sequence[int], max_tokens: int) -> ScoredSequence:
        """Argmax decoding, lowest token id on ties."""


@dataclass(frozen=True)
class _Row:
    base: tuple[float, ...]
    tempered: tuple[float, ...]
    cdf: list[float] = field(repr=False)
    argmax: int


def temper(logp: np.ndarray, tau: float) -> np.ndarray:
    """Renormalized ``p ** (1/tau)`` in log space. ``tau == 1`` is the identity."""
    if tau == 1.0:
        return logp
    x = logp / tau
    m = x.max()
    return x - (m + math.log(np.exp(x - m).sum()))


class LocalBackend(ModelBackend):
    """A backend whose conditionals are computed in-process.

    Subclasses implement :meth:`conditional`; tempered rows are cached per
    (context, tau). The cache only grows with distinct contexts, and dict
    operations are atomic, so instances can be shared across threads.
    """

    cache_limit = 200_000

    def __init__(self):
        self._cache: dict = {}
        self._lock = threading.Lock()

    @abc.abstractmethod
    def conditional(self, prefix: Sequence[int]) -> np.ndarray:
        """Untempered next-token log-probabilities, shape ``(vocab_size,)``."""

    def context_key(self, prefix: Sequence[int]):
        return tuple(prefix)

    def _row(self, prefix: Sequence[int], tau: float) -> _Row:
        key = (self.context_key(prefix), tau)
        row = self._cache.get(key)
        if row is None:
            base = np.asarray(self.conditional(prefix), dtype=float)
            tempered = temper(base, tau)
            probs = np.exp(tempered)
            row = _Row(
                base=tuple(base.tolist()),
                tempered=tuple(tempered.tolist()),
                cdf=list(itertools.accumulate(probs.tolist())),
                argmax=int(np.argmax(tempered)),
            )
            if len(self._cache) >= self.cache_limit:
                with self._lock:
                    self._cache.clear()
            self._cache[key] = row
        return row

    def _check_tokens(self, tokens: Sequence[int]) -> None:
        for tok in tokens:
            if not 0 <= tok < self.vocab_size:
                raise InvalidTokenError(
                    f"token id {tok} outside vocabulary of size {self.vocab_size}"
                )

    def score(self, prefix, continuation, tau):
        tau = _check_tau(tau)
        self._check_tokens(prefix)
        self._check_tokens(continuation)
        tokens = list(prefix)
        out = []
        for tok in continuation:
            out.append(self._row(tokens, tau).tempered[tok])
            tokens.append(tok)
        return out

    def sample(self, prefix, tau, max_tokens, rng):
        tau = _check_tau(tau)
        if max_tokens < 1:
            raise ValueError(f"budget must be >= 1, got {max_tokens}")
        self._check_tokens(prefix)
        tokens = list(prefix)
        base, tempered = [], []
        terminated = self.is_terminal(tokens)
        while not terminated and len(base) < max_tokens:
            row = self._row(tokens, tau)
            u = rng.random() * row.cdf[-1]
            tok = min(bisect.bisect_right(row.cdf, u), len(row.cdf) - 1)
            tokens.append(tok)
            base.append(row.base[tok])
            tempered.append(row.tempered[tok])
            terminated = self.is_terminal(tokens)
        seq = ScoredSequence(len(prefix), tuple(tokens), tuple(base), terminated)
        return seq, tempered

    def greedy(self, prefix, max_tokens, tau: float = 1.0):
        tau = _check_tau(tau)
        self._check_tokens(prefix)
        tokens = list(prefix)
        base = []
        terminated = self.is_terminal(tokens)
        while not terminated and len(base) < max_tokens:
            row = self._row(tokens, tau)
            tokens.append(row.argmax)
            base.append(row.base[row.argmax])
            terminated = self.is_terminal(tokens)
        return ScoredSequence(len(prefix), tuple(tokens), tuple(base), terminated)


def score_continuation(
    backend: ModelBackend, prefix: Sequence[int], continuation: Sequence[int], tau: float
) -> list[float]:
    """Per-token log-probs of ``continuation`` under the tempered conditional."""
    if not continuation:
        _check_tau(tau)
        return []
    return backend.score(list(prefix), list(continuation), tau)


def sample_continuation(
    backend: ModelBackend,
    prefix: Sequence[int],
    tau: float,
    budget: int,
    rng: np.random.Generator,
) -> ScoredSequence:
    """Draw a continuation token by token at temperature ``tau``.

    ``base_logps`` of the result are untempered: the power target needs the
    base likelihood whatever temperature generated the proposal.
    """
    try:
        seq, _ = backend.sample(list(prefix), tau, budget, rng)
    except (AnnealDecodeError, ValueError):
        raise
    except Exception as exc:
        raise BackendError(f"{backend.name}: sampling after {len(prefix)} tokens failed: {exc}") from exc
    return seq


def sequence_logprob(seq: ScoredSequence) -> float:
    return math.fsum(seq.base_logps) if seq.base_logps else 0.0
