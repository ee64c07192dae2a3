#  Copyright (c) 2024. VulBin Authors
"""
Helper functions
----------------"""
import asyncio
import datetime
import hashlib
import json
import logging
import random
import re
import time
from collections import deque
from decimal import Decimal, ROUND_HALF_UP
from logging import Logger
from typing import Union, Optional, Callable, Deque, Any

__all__ = ['MIN_FUNCTION_SIZE', 'REQUIRED_CWES', 'DEFAULT_TARGET_CWES', 'DEFAULT_DISTRACTOR_POOL', 'MOCK_RULE_TABLE_VERSION',
           'STORE_SCHEMA_VERSION', 'DECOMPILER_ENV_VAR', 'TASK_PREFIX', 'CODE_SECTION_MARKER', 'QUESTION_SECTION_MARKER',
           'VERDICT_SECTION_MARKER', 'FAULT_INJECTION_MARKER', 'CWE_ID_PATTERN',
           'datetime_to_str', 'sha256_hex', 'canonical_json', 'seeded_random', 'make_function_id', 'address_of', 'cwe_sort_key',
           'extract_fenced_block', 'number_lines', 'strip_line_numbers', 'truncate_at_sentence', 'percent',
           'RateLimitBucket', 'done_task_callback']

MIN_FUNCTION_SIZE: int = 8
"""Functions smaller than this many bytes are recorded as skipped"""
REQUIRED_CWES = ('CWE-78', 'CWE-134', 'CWE-190', 'CWE-606')
"""Knowledge documents every knowledge base has to provide"""
DEFAULT_TARGET_CWES = list(REQUIRED_CWES)
"""CWEs classified when the configuration names none"""
DEFAULT_DISTRACTOR_POOL = ['CWE-121', 'CWE-787', 'CWE-416', 'CWE-476']
"""CWEs appended to a classification prompt next to the target"""
MOCK_RULE_TABLE_VERSION: str = '1'
"""Version of the published rule table of :const:`~vulbin.llm.mock.MockBackend`"""
STORE_SCHEMA_VERSION: int = 1
"""Schema version written into new archival stores"""
DECOMPILER_ENV_VAR: str = 'VULBIN_DECOMPILER'
"""Environment variable overriding the external decompiler command template"""
TASK_PREFIX: str = 'TASK: '
"""Every system prompt starts with this prefix followed by the task name"""
CODE_SECTION_MARKER: str = '### FUNCTION UNDER ANALYSIS'
"""Heading that precedes the fenced code of the function a prompt is about"""
QUESTION_SECTION_MARKER: str = '### QUESTION'
VERDICT_SECTION_MARKER: str = '### VERDICTS'
FAULT_INJECTION_MARKER: str = 'INJECT_LLM_FAILURE'
"""Code containing this token makes the mock backend fail"""
CWE_ID_PATTERN = re.compile(r'^CWE-[0-9]+$')

_FENCE_PATTERN = re.compile(r'```[^\n`]*\n(.*?)```', re.DOTALL)
_NUMBERED_LINE = re.compile(r'^\s*\d+\| ?(.*)$')
_SENTENCE_END = re.compile(r'[.!?](?=\s|$)')


def datetime_to_str(dt: Optional[datetime.datetime]) -> Optional[str]:
    """ISO-8601 formats the given datetime in UTC, returns None if datetime is None.
    Naive datetimes are taken as UTC.

    :param dt: the datetime to format"""
    if dt is None:
        return None
    if dt.tzinfo is None:
        return dt.replace(tzinfo=datetime.timezone.utc).isoformat()
    return dt.astimezone(datetime.timezone.utc).isoformat()


def sha256_hex(data: Union[bytes, str]) -> str:
    """hex encoded SHA-256 digest of bytes or UTF-8 text"""
    if isinstance(data, str):
        data = data.encode('utf-8')
    return hashlib.sha256(data).hexdigest()


def canonical_json(data: Any) -> str:
    """Deterministic JSON encoding used for hashing and report files"""
    return json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(',', ':'))


def seeded_random(*parts: Any) -> random.Random:
    """A :class:`random.Random` seeded from the given parts, stable across processes

    :param parts: anything with a stable :code:`str()` representation"""
    digest = sha256_hex('\x1f'.join(str(p) for p in parts))
    return random.Random(int(digest[:16], 16))


def make_function_id(content_hash: str, address: int) -> str:
    """Builds the function id :code:`<content_hash>:0x<address>`"""
    return f'{content_hash}:{address:#x}'


def address_of(function_id: str) -> int:
    """Entry address encoded in a function id

    :raises ValueError: if the id carries no address"""
    return int(function_id.rsplit(':', 1)[-1], 16)


def cwe_sort_key(cwe_id: str):
    """Sort CWE ids numerically, unknown shapes last"""
    m = re.match(r'^CWE-(\d+)$', cwe_id)
    return (0, int(m.group(1)), '') if m is not None else (1, 0, cwe_id)


def extract_fenced_block(text: str) -> Optional[str]:
    """Returns the content of the first fenced block of a model reply or None if there is none

    :param text: the reply text"""
    m = _FENCE_PATTERN.search(text.replace('\r\n', '\n'))
    return m.group(1) if m is not None else None


def number_lines(code: str) -> str:
    """Prefixes every line with its 1-based line number, :code:`   3| x = 1;`"""
    return '\n'.join(f'{i:>4}| {line}' for i, line in enumerate(code.split('\n'), start=1))


def strip_line_numbers(text: str) -> str:
    """Inverse of :const:`~vulbin.helper.number_lines()`"""
    out = []
    for line in text.split('\n'):
        m = _NUMBERED_LINE.match(line)
        out.append(m.group(1) if m is not None else line)
    return '\n'.join(out)


def truncate_at_sentence(text: str, cap: int, counter: Callable[[str], int]) -> str:
    """Shortens text to at most :code:`cap` tokens, cutting after the last sentence that still fits.

    Falls back to a hard cut on a word boundary when not even the first sentence fits.

    :param text: the text to shorten
    :param cap: maximum number of tokens
    :param counter: the token counter to measure with"""
    text = text.strip()
    if counter(text) <= cap:
        return text
    best = ''
    for m in _SENTENCE_END.finditer(text):
        candidate = text[:m.end()]
        if counter(candidate) > cap:
            break
        best = candidate
    if best:
        return best
    words = text.split()
    out = ''
    for w in words:
        candidate = f'{out} {w}' if out else w
        if counter(candidate) > cap:
            break
        out = candidate
    return out


def percent(value: float) -> float:
    """Fraction to percent, rounded half-up to 2 decimals"""
    return float((Decimal(repr(value)) * 100).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP))


class RateLimitBucket:
    """Sliding window limiter used for outgoing model requests"""

    def __init__(self,
                 bucket_length: float,
                 bucket_size: int,
                 scope: str,
                 logger: Optional[logging.Logger] = None,
                 clock: Callable[[], float] = time.monotonic):
        """

        :param bucket_length: time in seconds of the window
        :param bucket_size: the number of requests allowed inside any window
        :param scope: the scope of this bucket (used for logging)
        :param logger: the logger to be used. If None the default logger is used
        :param clock: monotonic time source |default| :code:`time.monotonic`
        """
        self.scope = scope
        self.bucket_length = float(bucket_length)
        self.bucket_size = bucket_size
        self.logger = logger
        self._clock = clock
        self._issued: Deque[float] = deque()
        self.lock: asyncio.Lock = asyncio.Lock()

    def _expire(self, now: float):
        while self._issued and now - self._issued[0] >= self.bucket_length:
            self._issued.popleft()

    def get_delta(self) -> Optional[float]:
        """seconds until the next request may be issued, None if it may be issued now"""
        now = self._clock()
        self._expire(now)
        if len(self._issued) < self.bucket_size:
            return None
        return self._issued[0] + self.bucket_length - now

    def left(self) -> int:
        """Returns the number of requests left in the current window"""
        self._expire(self._clock())
        return self.bucket_size - len(self._issued)

    def _warn(self, msg):
        if self.logger is not None:
            self.logger.warning(msg)
        else:
            logging.warning(msg)

    async def put(self):
        """Registers one request, waits first if the window is full"""
        async with self.lock:
            delta = self.get_delta()
            while delta is not None:
                self._warn(f'Bucket {self.scope} got rate limited. waiting {delta:.2f}s...')
                await asyncio.sleep(delta + 0.01)
                delta = self.get_delta()
            self._issued.append(self._clock())


def done_task_callback(logger: Logger, task: asyncio.Task):
    """helper function used as a asyncio task done callback"""
    if task.cancelled():
        return
    e = task.exception()
    if e is not None:
        logger.exception('Error while running task', exc_info=e)
