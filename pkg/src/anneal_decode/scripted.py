"""Deterministic stand-ins for real models: a scripted text backend for
harness runs and an in-process HTTP server speaking the client protocol."""
from __future__ import annotations

import json
import re
import string
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable

import numpy as np

from .core import LocalBackend, ModelBackend, Vocabulary

EOS = "<eos>"
ALPHABET = [c for c in string.printable if c not in "\t\r\x0b\x0c"] + [EOS]

_OPTION_RE = re.compile(r"^\(([ab])\) (.*)$", re.MULTILINE)


def prompt_options(prompt: str) -> dict[str, str]:
    """Option texts keyed by letter, read from the lettered lines of a prompt."""
    return {m.group(1): m.group(2).strip() for m in _OPTION_RE.finditer(prompt)}


def option_responder(index: int = 0) -> Callable[[str], str]:
    """Always restates the option with the given index."""
    letter = "ab"[index]

    def respond(prompt: str) -> str:
        return prompt_options(prompt).get(letter, "I am not sure.") + "."

    return respond


def mixed_responder(cot_marker: str = "step by step") -> Callable[[str], str]:
    """Option (a) for plain prompts; both options, which cannot be scored,
    when the prompt asks for step-by-step reasoning."""
    plain = option_responder(0)

    def respond(prompt: str) -> str:
        if prompt.rstrip().endswith(cot_marker + "."):
            opts = prompt_options(prompt)
            return f"Either {opts.get('a', '')} or {opts.get('b', '')}."
        return plain(prompt)

    return respond


RESPONDERS = {
    "option0": lambda: option_responder(0),
    "option1": lambda: option_responder(1),
    "mixed": mixed_responder,
}


class ScriptedTextBackend(LocalBackend):
    """Character-level model that spells out ``responder(prompt)``.

    The prompt is everything up to the last occurrence of one of
    ``markers``. While the text generated so far follows the scripted reply,
    the next reply character (or the end marker) gets probability
    ``confidence`` and the rest is spread evenly; after a deviation the end
    marker gets that mass instead.
    """

    def __init__(self, responder: Callable[[str], str], markers: Iterable[str] = ("Answer:", "step by step."),
                 confidence: float = 0.999, name: str = "scripted"):
        super().__init__()
        self.codec = Vocabulary(ALPHABET, joiner="", eos=EOS)
        self.vocab_size = len(self.codec)
        self.eos_id = self.codec.eos_id
        self.responder = responder
        self.markers = tuple(markers)
        self.confidence = confidence
        self.name = name
        self._replies: dict[str, str] = {}

    def _split(self, text: str) -> tuple[str, str]:
        cut = max((text.rfind(m) + len(m) if m in text else 0) for m in self.markers)
        return text[:cut], text[cut:]

    def conditional(self, prefix):
        text = self.codec.decode(prefix)
        prompt, generated = self._split(text)
        reply = self._replies.get(prompt)
        if reply is None:
            reply = self._replies[prompt] = " " + self.responder(prompt)
        if reply.startswith(generated):
            nxt = self.eos_id if len(generated) == len(reply) else self.codec.index.get(reply[len(generated)], self.eos_id)
        else:
            nxt = self.eos_id
        probs = np.full(self.vocab_size, (1.0 - self.confidence) / (self.vocab_size - 1))
        probs[nxt] = self.confidence
        return np.log(probs)


def scripted_backend(kind: str = "option0") -> ScriptedTextBackend:
    try:
        responder = RESPONDERS[kind]()
    except KeyError:
        raise ValueError(f"unknown scripted backend {kind!r}; choose from {sorted(RESPONDERS)}") from None
    return ScriptedTextBackend(responder, name=f"scripted:{kind}")


class ConstantBackend(LocalBackend):
    """Single-token vocabulary: always emits token 0."""

    def __init__(self, max_len: int | None = None):
        super().__init__()
        self.vocab_size = 1
        self.max_len = max_len
        self.name = "constant"

    def conditional(self, prefix):
        return np.zeros(1)


# Scripted HTTP server ---------------------------------------------------

FAULTS = (
    "extra_logprob",     # one logprob too many in /v1/score
    "echo_mismatch",     # continuation ids not echoed verbatim
    "missing_logprobs",  # no token_logprobs field
    "omit_terminated",   # /v1/sample without "terminated"
    "http_500",          # every request fails with status 500
    "not_json",          # body is not JSON
)


class ScriptedServer:
    """Serves a local backend over the JSON protocol on 127.0.0.1.

    Use as a context manager; ``url`` is the base URL. ``faults`` injects
    malformed responses for protocol tests. ``requests`` counts handled
    requests.
    """

    def __init__(self, backend: ModelBackend, faults: Iterable[str] = ()):
        unknown = set(faults) - set(FAULTS)
        if unknown:
            raise ValueError(f"unknown faults {sorted(unknown)}")
        self.backend = backend
        self.faults = set(faults)
        self.requests = 0
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                server.requests += 1
                if "http_500" in server.faults:
                    self._send(500, b'{"error": "scripted failure"}')
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    req = json.loads(self.rfile.read(length))
                    if self.path == "/v1/score":
                        body = server._score(req)
                    elif self.path == "/v1/sample":
                        body = server._sample(req)
                    else:
                        self._send(404, b'{"error": "not found"}')
                        return
                except (KeyError, TypeError, ValueError) as exc:
                    self._send(400, json.dumps({"error": str(exc)}).encode())
                    return
                raw = b"<html>oops</html>" if "not_json" in server.faults else json.dumps(body).encode()
                self._send(200, raw)

            def _send(self, code, raw):
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        return Handler

    def _score(self, req):
        cont = list(req["continuation_tokens"])
        lps = self.backend.score(list(req["prompt_tokens"]), cont, float(req["temperature"])) if cont else []
        body = {"token_logprobs": lps, "continuation_tokens": cont}
        if "extra_logprob" in self.faults:
            body["token_logprobs"] = lps + [-1.0]
        if "echo_mismatch" in self.faults and cont:
            body["continuation_tokens"] = cont[:-1] + [cont[-1] + 1]
        if "missing_logprobs" in self.faults:
            del body["token_logprobs"]
        return body

    def _sample(self, req):
        prompt = list(req["prompt_tokens"])
        tau = float(req["temperature"])
        max_tokens = int(req["max_tokens"])
        if tau == 0:
            seq = self.backend.greedy(prompt, max_tokens)
        else:
            rng = np.random.default_rng(req.get("seed"))
            seq, _ = self.backend.sample(prompt, tau, max_tokens, rng)
        codec = self.backend.codec
        body = {
            "tokens": list(seq.generated),
            "token_logprobs": list(seq.base_logps),
            "terminated": seq.terminated,
            "text": codec.decode(seq.generated) if codec else None,
        }
        if "omit_terminated" in self.faults:
            del body["terminated"]
        if "missing_logprobs" in self.faults:
            del body["token_logprobs"]
        return body
