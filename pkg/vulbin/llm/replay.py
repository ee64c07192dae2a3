#  Copyright (c) 2024. VulBin Authors
"""
Replay Backend
--------------

Answers requests from a JSON-lines file written in record mode (see :const:`~vulbin.config.LlmConfig.record_path`).
Each line is :code:`{"request_hash": ..., "reply": ...}`; the backend never touches the network.

*******************
Class Documentation
*******************
"""
import json
from typing import List, Dict, Optional

from vulbin.llm.base import LlmBackend, request_hash
from vulbin.object.analysis import ChatMessage
from vulbin.type import ReplayMiss, ConfigError

__all__ = ['ReplayBackend']


class ReplayBackend(LlmBackend):

    def __init__(self, path: str):
        """
        :param path: the recorded session
        """
        super(ReplayBackend, self).__init__()
        self.path: str = path
        self._replies: Optional[Dict[str, str]] = None

    async def open(self):
        if self._replies is not None:
            return
        replies = {}
        try:
            with open(self.path, 'r', encoding='utf-8') as f:
                for line_no, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    replies[entry['request_hash']] = entry['reply']
        except (OSError, ValueError, KeyError) as e:
            raise ConfigError(f'could not load recorded session {self.path}: {e}') from e
        self.logger.debug(f'loaded {len(replies)} recorded replies from {self.path}')
        self._replies = replies

    async def complete(self, messages: List[ChatMessage]) -> str:
        await self.open()
        key = request_hash(messages)
        if key not in self._replies:
            raise ReplayMiss(f'no recorded reply for request {key[:16]}')
        return self._replies[key]
