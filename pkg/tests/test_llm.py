#  Copyright (c) 2024. VulBin Authors
import asyncio
import json
import logging
from functools import partial
from typing import List

import pytest
from aiohttp import web
from aiohttp import test_utils

from vulbin.config import LlmConfig
from vulbin.helper import RateLimitBucket, done_task_callback
from vulbin.llm.base import LlmBackend, count_tokens, count_message_tokens, request_hash
from vulbin.llm.client import LlmClient
from vulbin.llm.http import HttpApiBackend
from vulbin.object.analysis import ChatMessage
from vulbin.type import ChatRole, BudgetOverflow, ReplayMiss, TransportFailure, ConfigError

API_KEY = 'sk-test-0123456789'


class CountingBackend(LlmBackend):

    def __init__(self):
        super(CountingBackend, self).__init__()
        self.calls = 0

    async def complete(self, messages: List[ChatMessage]) -> str:
        self.calls += 1
        return f'reply {self.calls}'


def _messages(text: str = 'hello') -> List[ChatMessage]:
    return [ChatMessage(role=ChatRole.SYSTEM, content='TASK: classify'), ChatMessage(role=ChatRole.USER, content=text)]


def test_count_tokens():
    assert count_tokens('') == 0
    assert count_tokens('abcd') == 1
    assert count_tokens('abcde') == 2
    assert count_tokens('éé') == 1


def test_count_message_tokens():
    assert count_message_tokens(_messages('abcde')) == 6
    assert count_message_tokens(_messages('abcde'), counter=len) == 19
    assert LlmClient(LlmConfig(), backend=CountingBackend()).count_messages(_messages('abcde')) == 6


def test_request_hash_depends_on_roles_and_content():
    a = _messages()
    b = [ChatMessage(role=ChatRole.SYSTEM, content='TASK: classify'), ChatMessage(role=ChatRole.ASSISTANT, content='hello')]
    assert request_hash(a) == request_hash(_messages())
    assert request_hash(a) != request_hash(b)
    assert request_hash(a) != request_hash(_messages('hello!'))


@pytest.mark.asyncio
async def test_budget_overflow_makes_no_backend_call():
    backend = CountingBackend()
    client = LlmClient(LlmConfig(max_context_tokens=100, max_reply_tokens=50), backend=backend)
    assert client.prompt_budget == 50
    with pytest.raises(BudgetOverflow):
        await client.complete(_messages('x' * 400))
    assert backend.calls == 0
    assert client.request_count == 0
    assert await client.complete(_messages('x' * 100)) == 'reply 1'


@pytest.mark.asyncio
async def test_record_then_replay(tmp_path):
    record = str(tmp_path / 'session' / 'record.jsonl')
    client = LlmClient(LlmConfig(record_path=record), backend=CountingBackend())
    first = await client.complete(_messages('one'))
    second = await client.complete(_messages('two'))
    with open(record, 'r', encoding='utf-8') as f:
        lines = [json.loads(line) for line in f]
    assert [entry['reply'] for entry in lines] == [first, second]
    replay = await LlmClient(LlmConfig(backend='replay', replay_path=record))
    assert await replay.complete(_messages('two')) == second
    assert await replay.complete(_messages('one')) == first
    with pytest.raises(ReplayMiss):
        await replay.complete(_messages('three'))
    await replay.close()


@pytest.mark.asyncio
async def test_unreadable_recording(tmp_path):
    bad = tmp_path / 'bad.jsonl'
    bad.write_text('{"request_hash": "x"}\n', encoding='utf-8')
    with pytest.raises(ConfigError):
        await LlmClient(LlmConfig(backend='replay', replay_path=str(bad)))
    with pytest.raises(ConfigError):
        await LlmClient(LlmConfig(backend='replay', replay_path=str(tmp_path / 'missing.jsonl')))


@pytest.mark.asyncio
async def test_mock_backend_is_the_default(mock_client):
    reply = await mock_client.complete(_messages())
    assert reply
    assert mock_client.request_count == 1


class ChatServer:
    """scripted chat completion endpoint, replies with the queued responses in order"""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []
        self.server = None

    async def handle(self, request: web.Request) -> web.Response:
        self.requests.append((dict(request.headers), await request.json()))
        status, body, headers = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(body, (dict, list)):
            return web.json_response(body, status=status, headers=headers)
        return web.Response(text=body, status=status, headers=headers)

    async def __aenter__(self) -> str:
        app = web.Application()
        app.router.add_post('/v1/chat/completions', self.handle)
        self.server = test_utils.TestServer(app)
        await self.server.start_server()
        return str(self.server.make_url('/v1/chat/completions'))

    async def __aexit__(self, *args):
        await self.server.close()


def _ok(text: str = 'the answer'):
    return 200, {'choices': [{'message': {'role': 'assistant', 'content': text}}]}, {}


async def _http_client(url: str, **kwargs) -> LlmClient:
    client = await LlmClient(LlmConfig(backend='http_api', endpoint_url=url, model_tag='test-model', **kwargs))
    client.backend.backoff_base = 0.001
    return client


@pytest.mark.asyncio
async def test_http_success_sends_payload_and_credential(monkeypatch, tmp_path):
    monkeypatch.setenv('VULBIN_API_KEY', API_KEY)
    record = tmp_path / 'record.jsonl'
    chat = ChatServer([_ok()])
    async with chat as url:
        client = await _http_client(url, record_path=str(record))
        assert await client.complete(_messages()) == 'the answer'
        await client.close()
    headers, payload = chat.requests[0]
    assert headers['Authorization'] == f'Bearer {API_KEY}'
    assert payload['model'] == 'test-model'
    assert payload['temperature'] == 0.0
    assert payload['messages'][1] == {'role': 'user', 'content': 'hello'}
    assert API_KEY not in record.read_text(encoding='utf-8')


@pytest.mark.asyncio
async def test_http_retries_with_backoff(monkeypatch):
    monkeypatch.delenv('VULBIN_API_KEY', raising=False)
    chat = ChatServer([(503, 'busy', {}), (502, 'bad gateway', {}), _ok('late')])
    async with chat as url:
        client = await _http_client(url)
        assert await client.complete(_messages()) == 'late'
        await client.close()
    assert len(chat.requests) == 3
    assert 'Authorization' not in chat.requests[0][0]


@pytest.mark.asyncio
async def test_http_retry_after_takes_precedence():
    chat = ChatServer([(429, 'slow down', {'Retry-After': '0'}), _ok()])
    async with chat as url:
        client = await _http_client(url)
        client.backend.backoff_base = 120.0
        assert await client.complete(_messages()) == 'the answer'
        await client.close()
    assert len(chat.requests) == 2


@pytest.mark.asyncio
async def test_http_client_error_is_not_retried():
    chat = ChatServer([(400, 'bad request', {}), _ok()])
    async with chat as url:
        client = await _http_client(url)
        with pytest.raises(TransportFailure):
            await client.complete(_messages())
        await client.close()
    assert len(chat.requests) == 1


@pytest.mark.asyncio
async def test_http_gives_up_after_max_retries():
    chat = ChatServer([(500, 'boom', {})])
    async with chat as url:
        client = await _http_client(url, max_retries=2)
        with pytest.raises(TransportFailure):
            await client.complete(_messages())
        await client.close()
    assert len(chat.requests) == 3


@pytest.mark.asyncio
async def test_http_malformed_response():
    chat = ChatServer([(200, {'choices': []}, {})])
    async with chat as url:
        client = await _http_client(url)
        with pytest.raises(TransportFailure):
            await client.complete(_messages())
        await client.close()
    assert len(chat.requests) == 1


def test_backoff_delay_is_capped():
    backend = HttpApiBackend(LlmConfig(backend='http_api', endpoint_url='http://localhost/'))
    assert backend._delay(0, None) == 1.0
    assert backend._delay(3, None) == 8.0
    assert backend._delay(10, None) == 60.0
    assert backend._delay(3, '2.5') == 2.5
    assert backend._delay(3, 'soon') == 8.0


@pytest.mark.asyncio
async def test_rate_limit_bucket_window():
    now = [100.0]
    bucket = RateLimitBucket(60, 2, 'test', clock=lambda: now[0])
    await bucket.put()
    now[0] += 10
    await bucket.put()
    assert bucket.left() == 0
    assert bucket.get_delta() == pytest.approx(50.0)
    now[0] += 50
    assert bucket.left() == 1
    assert bucket.get_delta() is None
    now[0] += 10
    assert bucket.left() == 2


@pytest.mark.asyncio
async def test_done_task_callback_logs_task_errors(caplog):
    logger = logging.getLogger('tasks')

    async def broken():
        raise RuntimeError('worker broke')

    async def fine():
        return 1

    tasks = [asyncio.ensure_future(broken()), asyncio.ensure_future(fine())]
    for task in tasks:
        task.add_done_callback(partial(done_task_callback, logger))
    with caplog.at_level(logging.ERROR, logger='tasks'):
        await asyncio.wait(tasks)
        await asyncio.sleep(0)
    records = [r for r in caplog.records if r.name == 'tasks']
    assert [r.getMessage() for r in records] == ['Error while running task']
    assert records[0].exc_info[1] is tasks[0].exception()
