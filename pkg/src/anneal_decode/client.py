"""JSON-over-HTTP backend for external inference servers.

Two endpoints, both POST with UTF-8 JSON bodies:

``/v1/score``
    ``{"model", "prompt_tokens", "continuation_tokens", "temperature"}`` ->
    ``{"token_logprobs", "continuation_tokens"}`` (ids echoed verbatim).
``/v1/sample``
    ``{"model", "prompt_tokens", "max_tokens", "temperature", "seed"}`` ->
    ``{"tokens", "token_logprobs", "terminated", "text"}``; logprobs are
    untempered. ``temperature == 0`` requests greedy decoding.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AnnealDecodeError, ModelBackend, ScoredSequence, Vocabulary, _check_tau

log = logging.getLogger(__name__)

TOKEN_ENV = "ANNEAL_DECODE_REMOTE_TOKEN"


class TransportError(AnnealDecodeError, ConnectionError):
    pass


class ProtocolError(AnnealDecodeError, ValueError):
    pass


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    timeout_ms: int = 60_000
    retries: int = 2
    model: str = "default"
    token: str | None = None

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be > 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def from_env(cls, base_url: str, **kwargs) -> "RemoteEndpoint":
        return cls(base_url, token=os.environ.get(TOKEN_ENV), **kwargs)


def _post(endpoint: RemoteEndpoint, path: str, payload: dict) -> dict:
    url = endpoint.base_url.rstrip("/") + path
    body = json.dumps(payload).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if endpoint.token:
        headers["Authorization"] = f"Bearer {endpoint.token}"
    last = None
    for attempt in range(endpoint.retries + 1):
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=endpoint.timeout_ms / 1000) as resp:
                raw = resp.read()
            break
        except urllib.error.HTTPError as exc:
            last = TransportError(f"POST {url}: HTTP {exc.code}")
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            last = TransportError(f"POST {url}: {exc}")
        log.warning("attempt %d/%d failed: %s", attempt + 1, endpoint.retries + 1, last)
        if attempt < endpoint.retries:
            time.sleep(0.05 * (attempt + 1))
    else:
        raise last
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"POST {url}: response is not JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ProtocolError(f"POST {url}: response is not a JSON object")
    return data


def _logprob_list(data: dict, n: int, what: str) -> list[float]:
    lps = data.get("token_logprobs")
    if not isinstance(lps, list):
        raise ProtocolError(f"{what}: missing 'token_logprobs'")
    if len(lps) != n:
        raise ProtocolError(f"{what}: {len(lps)} logprobs for {n} tokens")
    out = []
    for v in lps:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v) or v > 0:
            raise ProtocolError(f"{what}: invalid logprob {v!r}")
        out.append(float(v))
    return out


def _int_list(data: dict, key: str, what: str) -> list[int]:
    vals = data.get(key)
    if not isinstance(vals, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in vals):
        raise ProtocolError(f"{what}: missing or malformed {key!r}")
    return vals


def remote_score(
    endpoint: RemoteEndpoint, prefix: Sequence[int], continuation: Sequence[int], tau: float
) -> list[float]:
    tau = _check_tau(tau)
    if not continuation:
        return []
    data = _post(endpoint, "/v1/score", {
        "model": endpoint.model,
        "prompt_tokens": list(map(int, prefix)),
        "continuation_tokens": list(map(int, continuation)),
        "temperature": tau,
    })
    echoed = _int_list(data, "continuation_tokens", "/v1/score")
    if echoed != list(continuation):
        raise ProtocolError("/v1/score: continuation token ids were not echoed verbatim")
    return _logprob_list(data, len(continuation), "/v1/score")


def remote_sample(
    endpoint: RemoteEndpoint, prefix: Sequence[int], tau: float, max_tokens: int, seed: int | None
) -> tuple[ScoredSequence, str | None]:
    """Sample from the server; ``tau == 0`` asks for greedy decoding."""
    if tau != 0:
        tau = _check_tau(tau)
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    data = _post(endpoint, "/v1/sample", {
        "model": endpoint.model,
        "prompt_tokens": list(map(int, prefix)),
        "max_tokens": int(max_tokens),
        "temperature": float(tau),
        "seed": seed,
    })
    tokens = _int_list(data, "tokens", "/v1/sample")
    if len(tokens) > max_tokens:
        raise ProtocolError(f"/v1/sample: {len(tokens)} tokens exceed max_tokens={max_tokens}")
    lps = _logprob_list(data, len(tokens), "/v1/sample")
    terminated = data.get("terminated")
    if not isinstance(terminated, bool):
        raise ProtocolError("/v1/sample: missing boolean 'terminated'")
    text = data.get("text")
    if text is not None and not isinstance(text, str):
        raise ProtocolError("/v1/sample: 'text' must be a string or null")
    seq = ScoredSequence(len(prefix), tuple(prefix) + tuple(tokens), tuple(lps), terminated)
    return seq, text


class RemoteBackend(ModelBackend):
    """Drives a remote server through :func:`remote_score` / :func:`remote_sample`.

    Sampling seeds are drawn from the caller's generator, so chains stay
    reproducible when the server honors seeds.
    """

    def __init__(self, endpoint: RemoteEndpoint, codec: Vocabulary | None = None, vocab_size: int | None = None):
        self.endpoint = endpoint
        self.codec = codec
        self.vocab_size = vocab_size if vocab_size is not None else (len(codec) if codec else None)
        self.eos_id = codec.eos_id if codec else None
        self.name = f"remote:{endpoint.base_url}#{endpoint.model}"

    def score(self, prefix, continuation, tau):
        return remote_score(self.endpoint, prefix, continuation, tau)

    def sample(self, prefix, tau, max_tokens, rng: np.random.Generator):
        seed = int(rng.integers(2**31))
        seq, _ = remote_sample(self.endpoint, prefix, tau, max_tokens, seed)
        if tau == 1.0:
            return seq, list(seq.base_logps)
        return seq, remote_score(self.endpoint, prefix, seq.generated, tau)

    def greedy(self, prefix, max_tokens):
        seq, _ = remote_sample(self.endpoint, prefix, 0.0, max_tokens, None)
        return seq
