#  Copyright (c) 2024. VulBin Authors
"""
Base Model Backend
------------------

.. note:: This is the base class used for all model backends.

  See :doc:`vulbin.llm` for a list of all available backends.

*******************
Class Documentation
*******************
"""
import math
from abc import ABC, abstractmethod
from logging import getLogger, Logger
from typing import List, Sequence, Callable

from vulbin.helper import canonical_json, sha256_hex
from vulbin.object.analysis import ChatMessage

__all__ = ['count_tokens', 'count_message_tokens', 'request_hash', 'LlmBackend', 'TokenCounter']

TokenCounter = Callable[[str], int]


def count_tokens(text: str) -> int:
    """Vendor independent token estimate: one token per started 4 bytes of UTF-8

    :param text: the text to measure"""
    return math.ceil(len(text.encode('utf-8')) / 4)


def count_message_tokens(messages: Sequence[ChatMessage], counter: TokenCounter = count_tokens) -> int:
    """token count of a whole message sequence"""
    return sum(counter(m.content) for m in messages)


def request_hash(messages: Sequence[ChatMessage]) -> str:
    """Content hash identifying a request in record files"""
    return sha256_hex(canonical_json([[m.role.value, m.content] for m in messages]))


class LlmBackend(ABC):
    """Produces a reply for a message sequence"""

    def __init__(self):
        self.logger: Logger = getLogger('vulbin.llm')
        """The logger used for model backend related log messages"""

    async def open(self):
        """Acquire resources, called once before the first request"""
        pass

    async def close(self):
        """Release resources"""
        pass

    @abstractmethod
    async def complete(self, messages: List[ChatMessage]) -> str:
        """Returns the reply text for the messages

        :raises ~vulbin.type.LlmFailure: if no reply could be obtained"""
        pass
