import json
import math
import urllib.request
from collections import Counter

import numpy as np
import pytest

from anneal_decode.client import (
    TOKEN_ENV,
    ProtocolError,
    RemoteBackend,
    RemoteEndpoint,
    TransportError,
    remote_sample,
    remote_score,
)
from anneal_decode.core import GenerationBudget
from anneal_decode.sampler import ChainConfig, run_chain
from anneal_decode.schedules import exponential
from anneal_decode.scripted import FAULTS, ConstantBackend, ScriptedServer


def endpoint(server, **kw):
    kw.setdefault("retries", 0)
    return RemoteEndpoint(server.url, **kw)


def test_score_first_token(m2):
    with ScriptedServer(m2) as srv:
        assert remote_score(endpoint(srv), [], [0], 1.0) == [math.log(0.75)]


def test_empty_continuation_skips_network(m2):
    with ScriptedServer(m2) as srv:
        assert remote_score(endpoint(srv), [0], [], 0.5) == []
        assert srv.requests == 0


def test_single_token_vocabulary():
    with ScriptedServer(ConstantBackend()) as srv:
        seq, _ = remote_sample(endpoint(srv), [], 1.0, 7, seed=3)
        assert seq.generated == (0,) * 7 and not seq.terminated


@pytest.mark.parametrize("fault", ["extra_logprob", "echo_mismatch", "missing_logprobs", "not_json"])
def test_score_faults(m2, fault):
    with ScriptedServer(m2, faults=[fault]) as srv:
        with pytest.raises(ProtocolError):
            remote_score(endpoint(srv), [], [0, 1], 1.0)


@pytest.mark.parametrize("fault", ["omit_terminated", "missing_logprobs", "not_json"])
def test_sample_faults(m2, fault):
    with ScriptedServer(m2, faults=[fault]) as srv:
        with pytest.raises(ProtocolError):
            remote_sample(endpoint(srv), [], 1.0, 2, seed=0)


def test_http_error_is_retried_then_raised(m2):
    with ScriptedServer(m2, faults=["http_500"]) as srv:
        with pytest.raises(TransportError, match="HTTP 500"):
            remote_score(endpoint(srv, retries=2), [], [0], 1.0)
        assert srv.requests == 3


def test_unreachable_server():
    with pytest.raises(TransportError):
        remote_score(RemoteEndpoint("http://127.0.0.1:9", timeout_ms=500, retries=0), [], [0], 1.0)


def test_every_fault_is_covered():
    assert set(FAULTS) == {"extra_logprob", "echo_mismatch", "missing_logprobs",
                           "omit_terminated", "http_500", "not_json"}


def test_round_trip(m2):
    with ScriptedServer(m2) as srv:
        ep = endpoint(srv)
        for seed in range(30):
            seq, _ = remote_sample(ep, [], 1.0, 2, seed)
            lps = remote_score(ep, [], list(seq.generated), 1.0)
            assert abs(math.fsum(lps) - math.fsum(seq.base_logps)) < 1e-9


def test_sample_frequency(m2):
    # 2k remote draws here; the 100k-draw version lives in the slow suite
    with ScriptedServer(m2) as srv:
        ep = endpoint(srv)
        counts = Counter(remote_sample(ep, [], 1.0, 2, s)[0].generated for s in range(2000))
    assert abs(counts[(0, 0)] / 2000 - 0.375) < 0.04


@pytest.mark.slow
def test_sample_frequency_100k(m2):
    with ScriptedServer(m2) as srv:
        ep = endpoint(srv)
        hits = sum(remote_sample(ep, [], 1.0, 2, s)[0].generated == (0, 0) for s in range(100_000))
    assert abs(hits / 100_000 - 0.375) < 0.01


def test_remote_backend_drives_chain(m2p):
    cfg = ChainConfig(GenerationBudget(2, 2, 10), granularity="token")
    sched = exponential(0.9, 0.25, 10)
    with ScriptedServer(m2p) as srv:
        remote = RemoteBackend(endpoint(srv), vocab_size=2)
        a = run_chain(remote, [], sched, cfg, np.random.default_rng(5))
        b = run_chain(remote, [], sched, cfg, np.random.default_rng(5))
    assert a == b
    assert len(a[1]) == 10


def test_tempered_scores_match_local(m2):
    with ScriptedServer(m2) as srv:
        assert remote_score(endpoint(srv), [1], [0], 0.5) == m2.score([1], [0], 0.5)


def test_bearer_token(monkeypatch, m2):
    seen = []
    real = urllib.request.urlopen

    def spy(req, timeout):
        seen.append(req.get_header("Authorization"))
        return real(req, timeout=timeout)

    monkeypatch.setenv(TOKEN_ENV, "s3cret")
    monkeypatch.setattr(urllib.request, "urlopen", spy)
    with ScriptedServer(m2) as srv:
        remote_score(RemoteEndpoint.from_env(srv.url), [], [0], 1.0)
    assert seen == ["Bearer s3cret"]


def test_endpoint_validation():
    with pytest.raises(ValueError):
        RemoteEndpoint("http://x", timeout_ms=0)
    with pytest.raises(ValueError):
        RemoteEndpoint("http://x", retries=-1)


def test_server_wire_format(m2):
    with ScriptedServer(m2) as srv:
        body = json.dumps({"model": "m", "prompt_tokens": [], "max_tokens": 2,
                           "temperature": 0, "seed": None}).encode()
        req = urllib.request.Request(srv.url + "/v1/sample", data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req) as resp:
            data = json.loads(resp.read())
    assert data["tokens"] == [0, 0] and data["terminated"] is True
    assert set(data) == {"tokens", "token_logprobs", "terminated", "text"}
