"""Chat-completions style HTTP backend"""

from __future__ import annotations

import base64
import logging
import os
import time

import httpx

from memory_vqa.backend_class import (
    BackendRequest,
    BackendResponse,
    DecodingStrategy,
    ModelBackend,
)
from memory_vqa.errors import ConfigError, RetryableError

logger = logging.getLogger(__name__)

API_KEY_ENV = "MEMORY_VQA_API_KEY"


class HttpBackend(ModelBackend):
    """Backend speaking the chat-completions JSON protocol over HTTP.

    One user message carries the image as a base64 data URL and the rendered
    prompt as text. `max_new_tokens` maps to `max_tokens`; beam search is sent
    as the best-effort `use_beam_search` / `best_of` extension, which servers
    may ignore.
    """

    backend_id = "http"

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key: str | None = None,
        timeout_seconds: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        **retry_kwargs,
    ) -> None:
        """Open the HTTP client

        Args:
            endpoint (str): full chat-completions URL
            model (str, optional): model name sent in the payload
            api_key (str | None, optional): bearer token. Defaults to the
                MEMORY_VQA_API_KEY environment variable.
            timeout_seconds (float, optional): request timeout. Defaults to 60.
            transport (httpx.BaseTransport | None, optional): custom transport
                (tests use httpx.MockTransport)
            **retry_kwargs: retry policy passed to ModelBackend
        """
        super().__init__(**retry_kwargs)
        if not endpoint:
            raise ConfigError("HTTP backend needs an endpoint URL")
        self.endpoint = endpoint
        self.model = model
        api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout_seconds, transport=transport, headers=headers)
        self._advised = False

    def build_payload(self, request: BackendRequest) -> dict:
        """JSON body of a request

        Args:
            request (BackendRequest): request

        Returns:
            dict: chat-completions payload
        """
        image_b64 = base64.b64encode(request.image_bytes).decode("ascii")
        payload = {
            "model": self.model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {
                            "type": "image_url",
                            "image_url": {"url": f"data:{request.media_type};base64,{image_b64}"},
                        },
                        {"type": "text", "text": request.prompt},
                    ],
                }
            ],
            "max_tokens": request.params.max_new_tokens,
            "temperature": 0.0,
            "n": 1,
        }
        if request.params.strategy is DecodingStrategy.BEAM:
            payload["use_beam_search"] = True
            payload["best_of"] = request.params.beam_width
            if not self._advised:
                self._advised = True
                logger.info(
                    "Beam search (width %d) sent as an advisory hint; servers without "
                    "the use_beam_search extension decode greedily",
                    request.params.beam_width,
                )
        return payload

    @staticmethod
    def _message_text(data: dict) -> str:
        content = data["choices"][0]["message"].get("content") or ""
        if isinstance(content, list):
            return "".join(part.get("text", "") for part in content if isinstance(part, dict))
        return str(content)

    def _send(self, request: BackendRequest, attempt: int) -> BackendResponse:
        start = time.perf_counter()
        try:
            response = self._client.post(self.endpoint, json=self.build_payload(request))
        except httpx.TimeoutException as err:
            raise RetryableError(f"timeout: {err}") from err
        except httpx.TransportError as err:
            raise RetryableError(f"transport failure: {err}") from err
        latency_ms = (time.perf_counter() - start) * 1000.0

        status = response.status_code
        if status == 429 or status >= 500:
            raise RetryableError(f"HTTP {status} from {self.endpoint}")
        if status >= 400:
            raise ConfigError(f"HTTP {status} from {self.endpoint}: {response.text[:200]}")
        try:
            data = response.json()
            text = self._message_text(data)
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise RetryableError(f"unreadable completion payload: {err}") from err
        return BackendResponse(text=text, latency_ms=latency_ms, backend_id=self.backend_id, raw=data)

    def close(self) -> None:
        """Close the HTTP client"""
        self._client.close()
