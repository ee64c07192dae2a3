#  Copyright (c) 2024. VulBin Authors
"""
Model Client
------------

The single entry point all stages use to talk to a language model.

The client checks the token budget before any backend is touched, forwards the request to the configured backend and
optionally records every reply into a JSON-lines file that can later be replayed with backend :code:`replay`.

.. code-block:: python

    from vulbin.config import LlmConfig
    from vulbin.llm.client import LlmClient
    from vulbin.object.analysis import ChatMessage
    from vulbin.type import ChatRole

    client = await LlmClient(LlmConfig())
    reply = await client.complete([ChatMessage(role=ChatRole.SYSTEM, content='TASK: classify'),
                                   ChatMessage(role=ChatRole.USER, content='...')])
    await client.close()

*******************
Class Documentation
*******************
"""
import asyncio
import json
import os
from logging import getLogger, Logger
from typing import List, Optional

from vulbin.config import LlmConfig
from vulbin.llm.base import LlmBackend, TokenCounter, count_tokens, count_message_tokens, request_hash
from vulbin.object.analysis import ChatMessage
from vulbin.type import LlmBackendKind, BudgetOverflow

__all__ = ['create_llm_backend', 'LlmClient']


def create_llm_backend(cfg: LlmConfig) -> LlmBackend:
    """Instantiates the backend selected by :code:`cfg.backend`"""
    if cfg.backend == LlmBackendKind.HTTP_API:
        from vulbin.llm.http import HttpApiBackend
        return HttpApiBackend(cfg)
    if cfg.backend == LlmBackendKind.REPLAY:
        from vulbin.llm.replay import ReplayBackend
        return ReplayBackend(cfg.replay_path)
    from vulbin.llm.mock import MockBackend
    return MockBackend()


class LlmClient:
    """Provider agnostic chat completion access, safe for concurrent callers"""

    def __init__(self,
                 cfg: LlmConfig,
                 backend: Optional[LlmBackend] = None,
                 token_counter: Optional[TokenCounter] = None):
        """
        :param cfg: the model configuration
        :param backend: use this backend instead of the one selected by :code:`cfg.backend` |default| :code:`None`
        :param token_counter: backend specific token counter |default| :const:`~vulbin.llm.base.count_tokens()`
        """
        self.cfg: LlmConfig = cfg
        self.backend: LlmBackend = backend if backend is not None else create_llm_backend(cfg)
        self.logger: Logger = getLogger('vulbin.llm')
        """The logger used for model request related log messages"""
        self._counter: TokenCounter = token_counter if token_counter is not None else count_tokens
        self._record_lock: asyncio.Lock = asyncio.Lock()
        self.request_count: int = 0
        """number of requests forwarded to the backend"""

    def __await__(self):
        t = asyncio.create_task(self.backend.open())
        yield from t
        return self

    async def close(self):
        """Releases backend resources like open HTTP sessions"""
        await self.backend.close()

    @property
    def model_tag(self) -> str:
        return self.cfg.model_tag

    @property
    def prompt_budget(self) -> int:
        """tokens available for the messages of one request"""
        return self.cfg.max_context_tokens - self.cfg.max_reply_tokens

    def count_tokens(self, text: str) -> int:
        """Token count with the configured counter"""
        return self._counter(text)

    def count_messages(self, messages: List[ChatMessage]) -> int:
        return count_message_tokens(messages, self._counter)

    def check_budget(self, messages: List[ChatMessage]):
        """
        :raises ~vulbin.type.BudgetOverflow: if the messages plus the reply reserve exceed the context window
        """
        used = self.count_messages(messages)
        if used > self.prompt_budget:
            raise BudgetOverflow(f'request needs {used} tokens plus {self.cfg.max_reply_tokens} reply tokens, '
                                 f'context window is {self.cfg.max_context_tokens}')

    async def complete(self, messages: List[ChatMessage]) -> str:
        """Returns the reply text for the message sequence.

        :param messages: the conversation, system message first
        :raises ~vulbin.type.BudgetOverflow: if the request does not fit the context window, no backend call is made
        :raises ~vulbin.type.TransportFailure: if the http backend exhausted its retries
        :raises ~vulbin.type.ReplayMiss: if the replay backend has no recording for this request
        """
        self.check_budget(messages)
        self.request_count += 1
        reply = await self.backend.complete(messages)
        if self.cfg.record_path is not None:
            await self._record(messages, reply)
        return reply

    async def _record(self, messages: List[ChatMessage], reply: str):
        line = json.dumps({'request_hash': request_hash(messages), 'reply': reply}, ensure_ascii=False)
        async with self._record_lock:
            directory = os.path.dirname(self.cfg.record_path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.cfg.record_path, 'a', encoding='utf-8') as f:
                f.write(line + '\n')
