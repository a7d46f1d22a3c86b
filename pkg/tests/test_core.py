import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anneal_decode.core import (
    GenerationBudget,
    InvalidTokenError,
    ScoredSequence,
    sample_continuation,
    score_continuation,
    sequence_logprob,
    temper,
)
from anneal_decode.scripted import ConstantBackend
from support import random_table


def test_score_first_token_at_unit_temperature(m2):
    assert score_continuation(m2, [], [0], 1.0) == [math.log(0.75)]


def test_score_empty_continuation(m2):
    assert score_continuation(m2, [], [], 0.7) == []


def test_score_tempered_row(m2):
    # (0.9, 0.1) squared and renormalized: 0.81 / 0.82
    [lp] = score_continuation(m2, [1], [0], 0.5)
    assert lp == pytest.approx(math.log(0.81 / 0.82), abs=1e-12)
    assert lp == pytest.approx(-0.01227, abs=1e-5)


@pytest.mark.parametrize("tau", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_temperature(m2, tau):
    with pytest.raises(ValueError):
        score_continuation(m2, [], [0], tau)


def test_invalid_token(m2):
    with pytest.raises(InvalidTokenError):
        score_continuation(m2, [], [2], 1.0)
    with pytest.raises(InvalidTokenError):
        score_continuation(m2, [-1], [0], 1.0)


def test_unit_temperature_is_bitwise_identity(m2):
    for prefix in ([], [0], [1]):
        for tok in (0, 1):
            assert score_continuation(m2, prefix, [tok], 1.0)[0] == m2.conditional(prefix)[tok]


def test_sequence_logprob_values(m2):
    s00 = ScoredSequence(0, (0, 0), (math.log(0.75), math.log(0.5)), True)
    s11 = ScoredSequence(0, (1, 1), (math.log(0.25), math.log(0.1)), True)
    assert sequence_logprob(s00) == pytest.approx(math.log(0.375), abs=1e-15)
    assert sequence_logprob(s11) == pytest.approx(math.log(0.025), abs=1e-15)
    assert sequence_logprob(ScoredSequence(3, (1, 2, 3), ())) == 0


def test_scored_sequence_length_check():
    with pytest.raises(ValueError):
        ScoredSequence(1, (0, 1), ())


def test_budget_defaults_and_divisibility():
    b = GenerationBudget()
    assert (b.max_new_tokens, b.block_count, b.mcmc_steps, b.block_size) == (512, 16, 10, 32)
    with pytest.raises(ValueError):
        GenerationBudget(100, 16)
    with pytest.raises(ValueError):
        GenerationBudget(0, 1)


def test_sample_frequencies_match_joint(m2):
    rng = np.random.default_rng(0)
    n = 100_000
    hits = sum(sample_continuation(m2, [], 1.0, 2, rng).tokens == (0, 0) for _ in range(n))
    assert abs(hits / n - 0.375) < 0.01


def test_sample_tempered_first_token(m2):
    rng = np.random.default_rng(1)
    n = 20_000
    hits = sum(sample_continuation(m2, [1], 0.5, 1, rng).tokens[1] == 0 for _ in range(n))
    assert abs(hits / n - 0.81 / 0.82) < 0.01


def test_sample_single_token_vocab_fills_budget(rng):
    seq = sample_continuation(ConstantBackend(), [0], 0.8, 7, rng)
    assert seq.generated == (0,) * 7 and not seq.terminated
    assert seq.base_logps == (0.0,) * 7


def test_sample_records_untempered_logps_and_is_seeded(m2):
    a = sample_continuation(m2, [], 0.3, 5, np.random.default_rng(9))
    b = sample_continuation(m2, [], 0.3, 5, np.random.default_rng(9))
    assert a == b and a.terminated and a.n_generated == 2
    rescored = score_continuation(m2, [], a.generated, 1.0)
    assert list(a.base_logps) == rescored
    assert abs(sequence_logprob(a) - math.fsum(rescored)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.floats(0.05, 5.0))
def test_tempered_rows_normalize_and_keep_argmax(seed, V, tau):
    model = random_table(seed, V, 2)
    for prefix in ([], [0]):
        lps = [score_continuation(model, prefix, [t], tau)[0] for t in range(V)]
        assert abs(math.fsum(math.exp(x) for x in lps) - 1) < 1e-9
        base = model.conditional(prefix)
        if np.sort(base)[-1] - np.sort(base)[-2] > 1e-9:
            assert int(np.argmax(lps)) == int(np.argmax(base))


def test_temper_identity_at_one():
    x = np.log(np.array([0.2, 0.3, 0.5]))
    assert temper(x, 1.0) is x
