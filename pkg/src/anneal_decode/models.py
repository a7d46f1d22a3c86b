"""Small backends whose distributions can be enumerated exactly."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import LocalBackend, Vocabulary

M2_SPEC = {
    "vocab_size": 2,
    "length": 2,
    "rows": {"": [0.75, 0.25], "0": [0.5, 0.5], "1": [0.9, 0.1]},
}
# Same as M2 but with a unique joint mode at (0, 0).
M2_PRIME_SPEC = {
    "vocab_size": 2,
    "length": 2,
    "rows": {"": [0.75, 0.25], "0": [0.6, 0.4], "1": [0.9, 0.1]},
}
BUILTIN_TABLES = {"M2": M2_SPEC, "M2prime": M2_PRIME_SPEC}


class TableError(ValueError):
    pass


class TabularModel(LocalBackend):
    """Fixed-length model given by an explicit conditional table per prefix."""

    def __init__(self, vocab_size: int, length: int, rows: Mapping[tuple[int, ...], Sequence[float]], name="tabular"):
        super().__init__()
        if vocab_size < 1 or length < 1:
            raise TableError("vocab_size and length must be >= 1")
        self.vocab_size = vocab_size
        self.max_len = length
        self.name = name
        self.rows: dict[tuple[int, ...], np.ndarray] = {}
        self._probs: dict[tuple[int, ...], np.ndarray] = {}
        for prefix, row in rows.items():
            prefix = tuple(int(t) for t in prefix)
            p = np.asarray(row, dtype=float)
            if p.shape != (vocab_size,):
                raise TableError(f"row for prefix {prefix} has {p.size} entries, expected {vocab_size}")
            if len(prefix) >= length or any(not 0 <= t < vocab_size for t in prefix):
                raise TableError(f"prefix {prefix} is not a valid prefix of a length-{length} sequence")
            if (p < 0).any() or not np.isfinite(p).all():
                raise TableError(f"row for prefix {prefix} has negative or non-finite entries")
            if abs(math.fsum(p) - 1.0) > 1e-12:
                raise TableError(f"row for prefix {prefix} sums to {math.fsum(p)!r}, not 1")
            self._probs[prefix] = p
            with np.errstate(divide="ignore"):
                self.rows[prefix] = np.log(p)
        self._check_reachable(())

    def _check_reachable(self, prefix):
        if len(prefix) >= self.max_len:
            return
        if prefix not in self.rows:
            raise TableError(f"reachable prefix {prefix} has no row")
        for tok in np.flatnonzero(self._probs[prefix] > 0):
            self._check_reachable(prefix + (int(tok),))

    def conditional(self, prefix):
        try:
            return self.rows[tuple(prefix)]
        except KeyError:
            raise TableError(f"prefix {tuple(prefix)} is unreachable under {self.name}") from None

    def to_spec(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "length": self.max_len,
            "rows": {
                ",".join(map(str, k)): v.tolist() for k, v in sorted(self._probs.items())
            },
        }


def _parse_prefix(key: str) -> tuple[int, ...]:
    key = key.strip()
    return tuple(int(t) for t in key.split(",")) if key else ()


def tabular_from_spec(spec: Mapping, name: str = "tabular") -> TabularModel:
    """Build a :class:`TabularModel` from ``{"vocab_size", "length", "rows"}``.

    ``rows`` maps a comma-joined prefix ("" for the empty prefix, "0,1", ...)
    to a probability row.
    """
    try:
        vocab_size = int(spec["vocab_size"])
        length = int(spec["length"])
        raw_rows = spec["rows"]
    except (KeyError, TypeError, ValueError) as exc:
        raise TableError(f"malformed table spec: {exc}") from None
    rows = {_parse_prefix(k): v for k, v in raw_rows.items()}
    return TabularModel(vocab_size, length, rows, name=name)


def load_tabular(path_or_name: str | Path) -> TabularModel:
    """Load a table spec file (JSON), or one of the builtin names ``M2`` / ``M2prime``."""
    path = Path(path_or_name)
    if not path.exists() and str(path_or_name) in BUILTIN_TABLES:
        return tabular_from_spec(BUILTIN_TABLES[str(path_or_name)], name=str(path_or_name))
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TableError(f"{path}: not a valid table spec: {exc}") from None
    return tabular_from_spec(spec, name=path.stem)


class NGramModel(LocalBackend):
    """Add-k smoothed n-gram model over a fixed vocabulary.

    Prefixes shorter than ``order - 1`` are left-padded with the end marker
    when there is one; without an end marker such contexts are unseen and
    get the uniform row.
    """

    def __init__(self, order, counts, vocab_size, smoothing=1.0, eos_id=None, codec=None, name="ngram"):
        super().__init__()
        if order < 1:
            raise ValueError("order must be >= 1")
        if not smoothing > 0:
            raise ValueError("smoothing constant must be > 0")
        self.order = order
        self.counts = counts
        self.vocab_size = vocab_size
        self.smoothing = float(smoothing)
        self.eos_id = eos_id
        self.codec = codec
        self.name = name

    def context_key(self, prefix):
        n = self.order - 1
        if n == 0:
            return ()
        ctx = tuple(prefix[-n:])
        if len(ctx) < n and self.eos_id is not None:
            ctx = (self.eos_id,) * (n - len(ctx)) + ctx
        return ctx

    def probs(self, prefix) -> np.ndarray:
        c = self.counts.get(self.context_key(prefix))
        k, v = self.smoothing, self.vocab_size
        if c is None:
            return np.full(v, 1.0 / v)
        return (c + k) / (c.sum() + k * v)

    def conditional(self, prefix):
        return np.log(self.probs(prefix))


def ngram_train(
    corpus: Sequence[int],
    order: int,
    smoothing: float = 1.0,
    vocab_size: int | None = None,
    eos_id: int | None = None,
    codec: Vocabulary | None = None,
) -> NGramModel:
    """Count ``order``-grams over a token stream; conditionals are
    ``(count + k) / (context_total + k * V)``."""
    corpus = [int(t) for t in corpus]
    if not corpus:
        raise ValueError("cannot train an n-gram model on an empty corpus")
    if order < 1:
        raise ValueError("order must be >= 1")
    if vocab_size is None:
        vocab_size = max(corpus) + 1
    if min(corpus) < 0 or max(corpus) >= vocab_size:
        raise ValueError("corpus contains token ids outside the vocabulary")
    n = order - 1
    stream = ([eos_id] * n if eos_id is not None else []) + corpus
    counts: dict[tuple[int, ...], np.ndarray] = defaultdict(lambda: np.zeros(vocab_size))
    for i in range(n, len(stream)):
        counts[tuple(stream[i - n : i])][stream[i]] += 1
    return NGramModel(order, dict(counts), vocab_size, smoothing, eos_id=eos_id, codec=codec)


EOS_WORD = "</s>"


def load_corpus(path: str | Path, mode: str = "char") -> tuple[list[int], Vocabulary]:
    """Tokenize a text file. Each line ends with the end marker ("\\n" in
    char mode, ``</s>`` in whitespace mode)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if mode == "char":
        symbols = sorted(set("".join(lines)) | {"\n"})
        vocab = Vocabulary(symbols, joiner="", eos="\n")
        pieces = [list(line) + ["\n"] for line in lines]
    elif mode == "whitespace":
        symbols = sorted({w for line in lines for w in line.split()} | {EOS_WORD})
        vocab = Vocabulary(symbols, joiner=" ", eos=EOS_WORD)
        pieces = [line.split() + [EOS_WORD] for line in lines]
    else:
        raise ValueError(f"unknown tokenization mode {mode!r} (expected 'char' or 'whitespace')")
    return [vocab.index[p] for line in pieces for p in line], vocab


def ngram_from_file(path, order=3, smoothing=1.0, mode="char") -> NGramModel:
    tokens, vocab = load_corpus(path, mode)
    if not tokens:
        raise ValueError(f"{path}: empty corpus")
    model = ngram_train(tokens, order, smoothing, len(vocab), eos_id=vocab.eos_id, codec=vocab)
    model.name = f"ngram{order}:{Path(path).name}"
    return model
