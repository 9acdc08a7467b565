"""Chat-completion client plus tolerant JSON extraction.

Shared by the annotation and prediction backends. Both send a single user
message and expect a strict-JSON object somewhere in the reply.
"""

from __future__ import annotations

import json
import time
from abc import ABC, abstractmethod
from typing import Any, Callable

from .errors import ProviderUnavailable


class ChatClient(ABC):
    @abstractmethod
    def complete(self, prompt: str) -> str:
        """Send one user message, return the assistant text."""


class HttpChatClient(ChatClient):
    """POST {model, messages, response_format} -> {choices:[{message:{content}}]}."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.0,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        post: Callable[..., object] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        if post is None:
            import requests

            def post(url, **kwargs):  # pragma: no cover - exercised via stub
                return requests.post(url, timeout=120, **kwargs)

        self._post = post

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "response_format": {"type": "json_object"},
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_err: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._post(self.endpoint, json=payload, headers=headers)
                status = getattr(resp, "status_code", 200)
                if status >= 500:
                    raise ProviderUnavailable(f"server error {status}")
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except Exception as err:  # noqa: BLE001
                last_err = err
                if attempt + 1 < self.max_retries:
                    self._sleep(self.backoff_s * (2**attempt))
        raise ProviderUnavailable(f"chat endpoint failed after retries: {last_err}")


class ScriptedChatClient(ChatClient):
    """Replays canned responses in order; raises when exhausted."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.calls: list[str] = []

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        if not self.responses:
            raise ProviderUnavailable("scripted client exhausted")
        return self.responses.pop(0)


def extract_json_object(text: str) -> dict[str, Any] | None:
    """Return the first balanced top-level JSON object found in `text`.

    Tolerates surrounding prose and code fences; returns None when nothing
    parses.
    """
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            c = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    return None


def coerce_probability(value: Any) -> float | None:
    """Best-effort float in [0,1] from a JSON value, else None."""
    try:
        p = float(value)
    except (TypeError, ValueError):
        return None
    if p != p:  # NaN
        return None
    return min(1.0, max(0.0, p))
