"""Chat-completion clients for the scene director.

Every client exposes ``complete(messages) -> str``.  ``HTTPChatClient``
talks to an OpenAI-style endpoint; ``ReplayClient`` serves a recorded
transcript; ``TranscriptClient`` wraps either and logs each exchange as one
JSON line.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Protocol

from .errors import ConfigError, ContractError

logger = logging.getLogger(__name__)

ENV_URL = "DIRECTOR_API_URL"
ENV_KEY = "DIRECTOR_API_KEY"
ENV_MODEL = "DIRECTOR_MODEL"


class ChatClient(Protocol):
    def complete(self, messages: list[dict]) -> str: ...


class HTTPChatClient:
    def __init__(self, url: str, api_key: str | None = None, model: str = "gpt-4", timeout: float = 60.0):
        self.url = url
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> "HTTPChatClient":
        url = os.environ.get(ENV_URL)
        if not url:
            raise ConfigError(f"{ENV_URL} is not set; use --offline or a replay transcript")
        return cls(url, os.environ.get(ENV_KEY), os.environ.get(ENV_MODEL, "gpt-4"))

    def complete(self, messages: list[dict]) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "messages": messages, "temperature": 0}
        resp = httpx.post(self.url, json=body, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class ReplayClient:
    """Serves responses in order from a JSON-lines transcript or a list of strings."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.cursor = 0

    @classmethod
    def from_file(cls, path) -> "ReplayClient":
        responses = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    responses.append(json.loads(line)["response"])
        return cls(responses)

    def complete(self, messages: list[dict]) -> str:
        if self.cursor >= len(self.responses):
            raise ContractError("replay transcript exhausted")
        text = self.responses[self.cursor]
        self.cursor += 1
        return text


class TranscriptClient:
    def __init__(self, inner: ChatClient, path):
        self.inner = inner
        self.path = Path(path)

    def complete(self, messages: list[dict]) -> str:
        text = self.inner.complete(messages)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"request": messages, "response": text}, sort_keys=True) + "\n")
        return text
