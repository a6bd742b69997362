"""Minimal chat-completion HTTP client shared by the remote extractor and realizer.

Request::

    POST <endpoint>
    Authorization: Bearer $CTISQA_API_KEY      (only when the variable is set)
    {"model": "<name>", "temperature": 0,
     "messages": [{"role": "user", "content": "<prompt>"}]}

Response: any JSON object with ``choices[0].message.content`` as a string.
"""

from __future__ import annotations

import os

import httpx

from .errors import ExtractorUnreachable, MalformedExtractorReply

API_KEY_ENV = "CTISQA_API_KEY"


class ChatClient:
    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0, transport=None):
        self.endpoint = endpoint
        self.model = model
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    def request_body(self, prompt: str) -> dict:
        return {"model": self.model, "temperature": 0,
                "messages": [{"role": "user", "content": prompt}]}

    def complete(self, prompt: str) -> str:
        try:
            resp = self._client.post(self.endpoint, json=self.request_body(prompt))
        except httpx.HTTPError as exc:
            raise ExtractorUnreachable(f"{self.endpoint}: {exc}") from None
        if resp.status_code >= 500 or resp.status_code in (401, 403, 404, 429):
            raise ExtractorUnreachable(f"{self.endpoint}: HTTP {resp.status_code}")
        raw = resp.text
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise MalformedExtractorReply("reply lacks choices[0].message.content", raw) from None
        if not isinstance(content, str):
            raise MalformedExtractorReply("message content is not a string", raw)
        return content

    def close(self):
        self._client.close()
