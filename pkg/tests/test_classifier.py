#  Copyright (c) 2024. VulBin Authors
import random
from typing import List

import pytest

from vulbin.config import LlmConfig
from vulbin.helper import DEFAULT_DISTRACTOR_POOL
from vulbin.llm.base import LlmBackend, count_tokens
from vulbin.llm.client import LlmClient
from vulbin.llm.mock import MockBackend
from vulbin.object.analysis import EnhancedFunction, OptimizationPlan, ContextBundle, ChatMessage, CweVerdict
from vulbin.reasoner.classifier import CweClassifier, split_into_chunks, mechanical_summary, REPAIR_PROMPT
from vulbin.type import Verdict, TransportFailure
from tests.util import sample_functions, generated_functions

FID = 'ab' * 32 + ':0x401000'


def _enhanced(code: str, function_id: str = FID) -> EnhancedFunction:
    return EnhancedFunction(function_id=function_id, code=code, provenance=OptimizationPlan())


def _classifier(client: LlmClient, kb, **kwargs) -> CweClassifier:
    return CweClassifier(client, kb, DEFAULT_DISTRACTOR_POOL, **kwargs)


class ScriptedBackend(LlmBackend):
    """replies with the queued texts in order, exceptions are raised"""

    def __init__(self, replies):
        super(ScriptedBackend, self).__init__()
        self.replies = list(replies)
        self.requests: List[List[ChatMessage]] = []

    async def complete(self, messages: List[ChatMessage]) -> str:
        self.requests.append(messages)
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


class BudgetCheckingMock(MockBackend):
    """mock backend remembering the size of every request it saw"""

    def __init__(self):
        super(BudgetCheckingMock, self).__init__()
        self.sizes = []

    async def complete(self, messages: List[ChatMessage]) -> str:
        self.sizes.append(sum(count_tokens(m.content) for m in messages))
        return await super(BudgetCheckingMock, self).complete(messages)


def test_chunks_join_back_and_fit():
    rnd = random.Random(3)
    codes = [code for _, code in generated_functions(40)] + list(sample_functions().values())
    for code in codes:
        for budget in (1, 7, 30, rnd.randint(10, 200)):
            chunks = split_into_chunks(code, budget, count_tokens)
            assert ''.join(chunks) == code
            assert all(count_tokens(c) <= budget for c in chunks)
            assert all(chunks)


def test_chunks_prefer_top_level_boundaries():
    first = 'void f(void)\n{\n  if (x) {\n    a = 1;\n    b = 2;\n  }\n'
    second = '  if (y) {\n    c = 3;\n    d = 4;\n  }\n}\n'
    code = first + second
    budget = max(count_tokens(first), count_tokens(second))
    assert split_into_chunks(code, budget, count_tokens) == [first, second]
    assert split_into_chunks(code, count_tokens(code), count_tokens) == [code]


def test_mechanical_summary():
    verdicts = [CweVerdict(function_id=FID, cwe_id='CWE-78', verdict=Verdict.YES),
                CweVerdict(function_id=FID, cwe_id='CWE-134', verdict=Verdict.NO)]
    assert mechanical_summary(FID, verdicts) == f'function {FID}: flagged {{CWE-78}}'
    assert mechanical_summary(FID, verdicts[1:]) == f'function {FID}: clean'


@pytest.mark.asyncio
async def test_classify_sample_function(kb, mock_client):
    classifier = _classifier(mock_client, kb, seed=1)
    fn = _enhanced(sample_functions()[0x401040])
    verdicts = await classifier.classify(fn, ['CWE-78', 'CWE-134', 'CWE-190', 'CWE-606'], ContextBundle(budget=1024))
    assert [(v.cwe_id, v.verdict) for v in verdicts] == [('CWE-78', Verdict.YES), ('CWE-134', Verdict.NO),
                                                        ('CWE-190', Verdict.NO), ('CWE-606', Verdict.NO)]
    assert 'root cause' in verdicts[0].rationale
    assert mock_client.request_count == 4


@pytest.mark.asyncio
async def test_flag_only_in_last_chunk(kb):
    backend = BudgetCheckingMock()
    client = LlmClient(LlmConfig(max_context_tokens=2000, max_reply_tokens=200), backend=backend)
    classifier = _classifier(client, kb, summary_token_cap=64)
    for lines in range(1400, 1420):
        body = ''.join(f'  local_{i:x} = local_{i:x} + {i};\n' for i in range(0x10, 0x10 + lines))
        code = f'void FUN_00401000(char *param_1)\n\n{{\n{body}  printf(param_1);\n  return;\n}}\n'
        fn = _enhanced(code)
        chunks = split_into_chunks(code, classifier.chunk_budget(fn, 'CWE-134'), client.count_tokens)
        if 'printf(param_1)' in chunks[-1]:
            break
    assert count_tokens(code) > 5 * client.prompt_budget
    assert len(chunks) >= 5
    assert 'printf(param_1)' in chunks[-1]
    assert not any('printf' in c for c in chunks[:-1])

    verdicts = await classifier.classify(fn, ['CWE-134', 'CWE-78'], ContextBundle(budget=512))
    assert verdicts[0].verdict == Verdict.YES
    assert verdicts[0].rationale.startswith(f'chunk {len(chunks)} of {len(chunks)}: ')
    assert ' | ' not in verdicts[0].rationale
    assert verdicts[1].verdict == Verdict.NO
    assert verdicts[1].rationale == f'no chunk of {len(chunks)} flagged CWE-78'
    assert all(size <= client.prompt_budget for size in backend.sizes)
    assert len(backend.sizes) == 2 * len(chunks)

    record = await classifier.summarize(fn, 'FUN_00401000', verdicts)
    assert record.summary == f'function {FID}: flagged {{CWE-134}}'
    assert [s.cwe_id for s in record.suspected] == ['CWE-134']


@pytest.mark.asyncio
async def test_repair_prompt_recovers(kb):
    backend = ScriptedBackend(['I am not sure.', '```\nCWE: CWE-78\nANSWER: yes\nREASON: unchecked command\n```'])
    classifier = _classifier(LlmClient(LlmConfig(), backend=backend), kb, k_distractors=0)
    fn = _enhanced(sample_functions()[0x401040])
    verdict = (await classifier.classify(fn, ['CWE-78'], ContextBundle(budget=1)))[0]
    assert verdict.verdict == Verdict.YES
    assert verdict.rationale == 'unchecked command'
    assert len(backend.requests) == 2
    assert backend.requests[1][-2].content == 'I am not sure.'
    assert backend.requests[1][-1].content.startswith(REPAIR_PROMPT)


@pytest.mark.asyncio
async def test_unrepairable_reply_is_invalid(kb):
    backend = ScriptedBackend(['no idea', '```\nANSWER: perhaps\n```'])
    classifier = _classifier(LlmClient(LlmConfig(), backend=backend), kb)
    verdict = (await classifier.classify(_enhanced('void f(void)\n{\n  return;\n}\n'), ['CWE-190'], ContextBundle(budget=1)))[0]
    assert verdict.verdict == Verdict.INVALID
    assert verdict.rationale.startswith('parse failure')
    assert verdict.confidence == 0.0


@pytest.mark.asyncio
async def test_answer_for_wrong_cwe_is_not_taken(kb):
    backend = ScriptedBackend(['```\nCWE: CWE-134\nANSWER: yes\n```', '```\nCWE: CWE-134\nANSWER: yes\n```'])
    classifier = _classifier(LlmClient(LlmConfig(), backend=backend), kb, k_distractors=0)
    verdict = (await classifier.classify(_enhanced('void f(void)\n{\n  return;\n}\n'), ['CWE-78'], ContextBundle(budget=1)))[0]
    assert verdict.verdict == Verdict.INVALID


@pytest.mark.asyncio
async def test_model_failure_is_invalid_and_summary_falls_back(kb):
    backend = ScriptedBackend([TransportFailure('down'), TransportFailure('still down')])
    classifier = _classifier(LlmClient(LlmConfig(), backend=backend), kb)
    fn = _enhanced('void f(void)\n{\n  return;\n}\n')
    verdicts = await classifier.classify(fn, ['CWE-78'], ContextBundle(budget=1))
    assert verdicts[0].verdict == Verdict.INVALID
    assert verdicts[0].rationale == 'model failure: down'
    record = await classifier.summarize(fn, 'f', verdicts)
    assert record.summary == f'function {FID}: clean'


@pytest.mark.asyncio
async def test_summary_is_capped(kb):
    long_reply = 'The function copies input. ' * 40
    classifier = _classifier(LlmClient(LlmConfig(), backend=ScriptedBackend([long_reply])), kb, summary_token_cap=20)
    record = await classifier.summarize(_enhanced('void f(void)\n{\n  return;\n}\n'), 'f', [])
    assert count_tokens(record.summary) <= 20
    assert record.summary.endswith('input.')
    assert record.model_tag == LlmConfig().model_tag
