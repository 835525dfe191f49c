"""Client abstraction over the frozen Inspector VLM.

One question about one image in, raw reply text out.  Two backends ship:

* :class:`HttpInspectorBackend` -- chat-completions-style HTTP endpoint,
  image attached base64-encoded, one question per request;
* :class:`MockInspectorBackend` -- deterministic rule table for offline
  tests, instrumented so concurrency bounds are observable.

The client retries transient transport failures and enforces a global
in-flight request limit; a model refusal is a reply, not a failure.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import requests

from .errors import EmptyQASet, InspectorUnavailable, TransportError
from .model import QASet, image_size, sha256_hex

DEFAULT_PROMPT_TEMPLATE = (
    "Look at the attached chart image and answer the question. "
    "Reply tersely with only the answer, no explanation.\n"
    "Question: {question}"
)

ENDPOINT_ENV = "CHARTRL_INSPECTOR_ENDPOINT"
API_KEY_ENV = "CHARTRL_INSPECTOR_API_KEY"


@dataclass(frozen=True)
class InspectorConfig:
    """Connection and concurrency settings for the Inspector service."""

    endpoint: str = ""
    model_id: str = ""
    max_concurrency: int = 4
    timeout: float = 60.0
    retries: int = 2
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")


@dataclass(frozen=True)
class MockRule:
    """Deterministic reply rule: fingerprint prefix + question substring.

    ``image_fingerprint`` is a SHA-256 hex prefix ("*" matches any image);
    the first rule matching both keys wins.
    """

    image_fingerprint: str
    question_pattern: str
    reply: str

    def matches(self, fingerprint: str, question: str) -> bool:
        fp_ok = self.image_fingerprint == "*" or fingerprint.startswith(self.image_fingerprint)
        return fp_ok and self.question_pattern in question


class MockInspectorBackend:
    """Rule-table Inspector stand-in: same (image, question) -> same reply.

    Instrumented with call counts and a peak-in-flight gauge so tests can
    observe the client's concurrency bound; ``latency`` (seconds) holds each
    call open long enough for overlap to be measurable.
    """

    def __init__(
        self,
        rules: Sequence[MockRule] = (),
        default_reply: str = "unknown",
        latency: float = 0.0,
    ):
        self.rules = list(rules)
        self.default_reply = default_reply
        self.latency = latency
        self.calls = 0
        self.peak_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()

    @classmethod
    def from_json_file(cls, path: str | Path, **kwargs) -> "MockInspectorBackend":
        """Load rules from a JSON file: a list of rule objects."""
        data = json.loads(Path(path).read_text())
        rules = [
            MockRule(
                image_fingerprint=entry.get("image_fingerprint", "*"),
                question_pattern=entry["question_pattern"],
                reply=entry["reply"],
            )
            for entry in data
        ]
        return cls(rules=rules, **kwargs)

    def complete(self, image: bytes, question: str) -> str:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
        try:
            if self.latency > 0:
                time.sleep(self.latency)
            fingerprint = sha256_hex(image)
            for rule in self.rules:
                if rule.matches(fingerprint, question):
                    return rule.reply
            return self.default_reply
        finally:
            with self._lock:
                self._in_flight -= 1


class HttpInspectorBackend:
    """Chat-completions-style HTTP backend, one image+question per request."""

    def __init__(self, config: InspectorConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def _endpoint(self) -> str:
        endpoint = self.config.endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not endpoint:
            raise TransportError("no Inspector endpoint configured")
        return endpoint.rstrip("/") + "/chat/completions"

    def complete(self, image: bytes, question: str) -> str:
        payload = {
            "model": self.config.model_id,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {
                            "type": "image_url",
                            "image_url": {
                                "url": "data:image/png;base64,"
                                + base64.b64encode(image).decode("ascii")
                            },
                        },
                        {"type": "text", "text": question},
                    ],
                }
            ],
        }
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = self.session.post(
                self._endpoint(), json=payload, headers=headers, timeout=self.config.timeout
            )
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except requests.RequestException as exc:
            raise TransportError(f"Inspector request failed: {exc}") from exc
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed Inspector response: {exc}") from exc


class InspectorClient:
    """Shareable client enforcing retries and a global concurrency limit."""

    def __init__(self, backend, config: InspectorConfig | None = None):
        self.backend = backend
        self.config = config or InspectorConfig()
        self._limiter = threading.Semaphore(self.config.max_concurrency)

    def ask(self, image: bytes, question: str) -> str:
        """Pose one question about one image; return the reply verbatim.

        Retries transient transport failures up to the configured count.

        Raises:
            InspectorUnavailable: after retries are exhausted.
        """
        image_size(image)  # precondition: image decodes
        if not question.strip():
            raise ValueError("question must be non-empty")

        prompt = self.config.prompt_template.format(question=question)
        attempts = self.config.retries + 1
        last_error: Exception | None = None
        for _ in range(attempts):
            try:
                with self._limiter:
                    return self.backend.complete(image, prompt)
            except TransportError as exc:
                last_error = exc
        raise InspectorUnavailable(
            f"Inspector unreachable after {attempts} attempt(s): {last_error}"
        )

    def answer_qa_set(self, image: bytes, qa: QASet) -> list[str]:
        """Answer every question in order; reply i corresponds to question i.

        Raises:
            EmptyQASet: no items.
            InspectorUnavailable: annotated with the first failing index.
        """
        if len(qa.items) == 0:
            raise EmptyQASet("QA set has no items")

        workers = min(self.config.max_concurrency, len(qa.items))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(self.ask, image, item.question) for item in qa.items]
            replies: list[str] = []
            failure: tuple[int, InspectorUnavailable] | None = None
            for index, future in enumerate(futures):
                try:
                    replies.append(future.result())
                except InspectorUnavailable as exc:
                    if failure is None:
                        failure = (index, exc)
                    replies.append("")
        if failure is not None:
            index, exc = failure
            raise InspectorUnavailable(f"question {index} failed: {exc}", index=index)
        return replies
