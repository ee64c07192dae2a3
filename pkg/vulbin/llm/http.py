#  Copyright (c) 2024. VulBin Authors
"""
HTTP Chat Completion Backend
----------------------------

Talks to any endpoint that speaks the de-facto chat completion JSON format
(:code:`{"model", "messages", "temperature", "max_tokens"}` in, :code:`choices[0].message.content` out).

The credential is read from the environment variable named by :code:`llm.api_key_env` and sent as bearer token,
it is never written anywhere.

Transient failures (HTTP 429, 500, 502, 503, 504, connection errors and timeouts) are retried up to
:code:`llm.max_retries` times with exponential backoff; a :code:`Retry-After` header takes precedence over the computed
delay. Every attempt passes the shared request limiter first.

*******************
Class Documentation
*******************
"""
import asyncio
import os
from typing import List, Optional

import aiohttp
from aiohttp import ClientSession, ClientTimeout

from vulbin.config import LlmConfig
from vulbin.helper import RateLimitBucket
from vulbin.llm.base import LlmBackend
from vulbin.object.analysis import ChatMessage
from vulbin.type import TransportFailure

__all__ = ['RETRYABLE_STATUS', 'HttpApiBackend']

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})
"""HTTP status codes that are retried"""


class HttpApiBackend(LlmBackend):

    def __init__(self, cfg: LlmConfig):
        """
        :param cfg: model configuration of backend :const:`~vulbin.type.LlmBackendKind.HTTP_API`
        """
        super(HttpApiBackend, self).__init__()
        self.cfg: LlmConfig = cfg
        self.backoff_base: float = 1.0
        """first retry delay in seconds, doubled on every further retry |default| :code:`1.0`"""
        self.backoff_cap: float = 60.0
        """upper bound of a single retry delay |default| :code:`60.0`"""
        self.limiter: RateLimitBucket = RateLimitBucket(60, cfg.requests_per_minute, 'llm', self.logger)
        """limits requests to :code:`requests_per_minute` in any 60 second window"""
        self._session: Optional[ClientSession] = None

    async def open(self):
        if self._session is None:
            self._session = ClientSession(timeout=ClientTimeout(total=self.cfg.request_timeout_seconds))

    async def close(self):
        if self._session is not None:
            await self._session.close()
            self._session = None

    def _headers(self) -> dict:
        headers = {'Content-Type': 'application/json'}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers['Authorization'] = f'Bearer {key}'
        return headers

    def _delay(self, attempt: int, retry_after: Optional[str]) -> float:
        if retry_after is not None:
            try:
                return max(0.0, float(retry_after))
            except ValueError:
                pass
        return min(self.backoff_cap, self.backoff_base * (2 ** attempt))

    async def complete(self, messages: List[ChatMessage]) -> str:
        await self.open()
        payload = {
            'model': self.cfg.model_tag,
            'messages': [{'role': m.role.value, 'content': m.content} for m in messages],
            'temperature': self.cfg.temperature,
            'max_tokens': self.cfg.max_reply_tokens,
        }
        attempt = 0
        while True:
            await self.limiter.put()
            retry_after = None
            try:
                async with self._session.post(self.cfg.endpoint_url, json=payload, headers=self._headers()) as resp:
                    if resp.status == 200:
                        data = await resp.json(content_type=None)
                        try:
                            return data['choices'][0]['message']['content']
                        except (KeyError, IndexError, TypeError) as e:
                            raise TransportFailure(f'malformed chat completion response: missing {e}') from e
                    text = await resp.text()
                    if resp.status not in RETRYABLE_STATUS:
                        raise TransportFailure(f'endpoint returned {resp.status}: {text[:200]}')
                    retry_after = resp.headers.get('Retry-After')
                    error = f'endpoint returned {resp.status}'
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                error = f'{type(e).__name__}: {e}'
            if attempt >= self.cfg.max_retries:
                raise TransportFailure(f'giving up after {attempt + 1} attempts, last error: {error}')
            delay = self._delay(attempt, retry_after)
            self.logger.warning(f'{error} -> retry {attempt + 1}/{self.cfg.max_retries} in {delay:.2f}s')
            await asyncio.sleep(delay)
            attempt += 1
