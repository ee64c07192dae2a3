#  Copyright (c) 2024. VulBin Authors
"""
Classification Prompts
----------------------

Builds the multi CWE prompt for one function and parses the model answer.

A prompt consists of

#. the system instructions,
#. the descriptions of the target CWE and its distractors,
#. worked examples (in-context shots) from the knowledge documents,
#. summaries of already analyzed callees, omitted if there are none,
#. the function code followed by the question.

The model answers with one fenced block containing, for every CWE named in the question:

.. code-block:: text

    CWE: CWE-78
    ANSWER: yes
    REASON: functionality: ...; root cause: ...; impact: ...
    CONFIDENCE: 0.8

:code:`CONFIDENCE` is optional and defaults to 1.0. Keys and answers are case-insensitive.

*******************
Class Documentation
*******************
"""
import re
from typing import List, Dict, Tuple, Optional, Sequence

from vulbin.helper import TASK_PREFIX, CODE_SECTION_MARKER, QUESTION_SECTION_MARKER, extract_fenced_block, seeded_random
from vulbin.llm.base import count_tokens, TokenCounter
from vulbin.object.analysis import ChatMessage, CweQuery, IclShot, ContextItem
from vulbin.reasoner.knowledge import KnowledgeBase
from vulbin.type import ChatRole, PromptTask, Verdict, ParseFailure, BudgetOverflow

__all__ = ['SYSTEM_INSTRUCTIONS', 'draw_distractors', 'build_prompt', 'parse_verdicts', 'parse_verdict']

SYSTEM_INSTRUCTIONS = ('You are a security analyst reviewing decompiled C code for software weaknesses. For every CWE you '
                       'are asked about, reason step by step: first the functionality of the code, then the root cause of a '
                       'potential weakness, then its impact. Then respond with yes or no for that CWE.')

_CWE_LINE = re.compile(r'^\s*CWE\s*:\s*(CWE-[0-9]+)\s*$', re.IGNORECASE)
_ANSWER_LINE = re.compile(r'^\s*ANSWER\s*:\s*(\S+?)[.!]?\s*$', re.IGNORECASE)
_REASON_LINE = re.compile(r'^\s*REASON\s*:\s*(.*?)\s*$', re.IGNORECASE)
_CONFIDENCE_LINE = re.compile(r'^\s*CONFIDENCE\s*:\s*([0-9]*\.?[0-9]+)\s*$', re.IGNORECASE)


def draw_distractors(target: str, pool: Sequence[str], k: int, seed: int, function_id: str) -> List[str]:
    """Draws k distractors from the pool without the target, deterministic for seed, function and target.

    :param target: the target CWE
    :param pool: candidate distractors
    :param k: number of distractors, fewer are returned if the pool is smaller
    :param seed: the run seed
    :param function_id: the function the question is about
    """
    candidates = [c for c in dict.fromkeys(pool) if c != target]
    if k <= 0 or not candidates:
        return []
    return seeded_random(seed, function_id, target).sample(candidates, min(k, len(candidates)))


def _descriptions(q: CweQuery, kb: KnowledgeBase) -> str:
    parts = ['### CWE DESCRIPTIONS']
    for cwe in q.cwe_ids:
        doc = kb.get(cwe)
        parts.append(f'{cwe}: {doc.name}\n{" ".join(doc.description.split())}')
    return '\n\n'.join(parts)


def _shot_messages(shot: IclShot) -> List[ChatMessage]:
    question = f'### EXAMPLE\n```c\n{shot.code.rstrip()}\n```\nDoes this code contain {shot.cwe_id}?'
    answer = f'```\nCWE: {shot.cwe_id}\nANSWER: {shot.expected.value}\nREASON: {shot.explanation}\n```'
    return [ChatMessage(role=ChatRole.USER, content=question), ChatMessage(role=ChatRole.ASSISTANT, content=answer)]


def _context_message(items: Sequence[ContextItem]) -> ChatMessage:
    lines = ['### SUMMARIES OF CALLED FUNCTIONS']
    lines.extend(f'- {item.function_id}: {item.summary}' for item in items)
    return ChatMessage(role=ChatRole.USER, content='\n'.join(lines))


def _question(q: CweQuery) -> str:
    ids = q.cwe_ids
    listed = ids[0] if len(ids) == 1 else ', '.join(ids[:-1]) + f' and {ids[-1]}'
    chunk = f'The code is {q.chunk_label} of the function, judge only this part.\n' if q.chunk_label else ''
    return (f'{CODE_SECTION_MARKER}\n```c\n{q.code.rstrip()}\n```\n'
            f'{QUESTION_SECTION_MARKER}\n{chunk}'
            f'For each of {listed} decide whether the function contains the weakness. Examine the functionality, the '
            f'root cause and the potential impact, then respond with yes or no. Answer with one fenced block containing '
            f'for every CWE the lines "CWE: <id>", "ANSWER: yes|no", "REASON: functionality: ...; root cause: ...; '
            f'impact: ..." and optionally "CONFIDENCE: <0..1>".')


def build_prompt(q: CweQuery, kb: KnowledgeBase, budget: Optional[int] = None,
                 counter: TokenCounter = count_tokens) -> List[ChatMessage]:
    """Builds the message sequence of a classification query.

    If the messages exceed the budget, context items are dropped lowest priority first, then in-context shots, before
    giving up.

    :param q: the query
    :param kb: knowledge base with documents for the target and all distractors
    :param budget: maximum prompt tokens, None for no limit |default| :code:`None`
    :param counter: token counter |default| :const:`~vulbin.llm.base.count_tokens()`
    :raises ~vulbin.type.BudgetOverflow: if the prompt does not fit even without context and shots
    :raises ~vulbin.type.KnowledgeBaseError: if a CWE of the query has no knowledge document
    """
    head = [ChatMessage(role=ChatRole.SYSTEM, content=f'{TASK_PREFIX}{PromptTask.CLASSIFY.value}\n{SYSTEM_INSTRUCTIONS}'),
            ChatMessage(role=ChatRole.USER, content=_descriptions(q, kb))]
    tail = ChatMessage(role=ChatRole.USER, content=_question(q))
    items = list(q.context)
    shots = list(q.icl_shots)

    def assemble() -> List[ChatMessage]:
        messages = list(head)
        for shot in shots:
            messages.extend(_shot_messages(shot))
        if items:
            messages.append(_context_message(items))
        messages.append(tail)
        return messages

    messages = assemble()
    if budget is None:
        return messages
    while sum(counter(m.content) for m in messages) > budget:
        if items:
            items.pop()
        elif shots:
            shots.pop()
        else:
            raise BudgetOverflow(f'prompt for {q.function_id} needs {sum(counter(m.content) for m in messages)} tokens, '
                                 f'budget is {budget}')
        messages = assemble()
    return messages


def parse_verdicts(text: str) -> Dict[Optional[str], Tuple[Verdict, str, float]]:
    """Parses all answers of a reply.

    :param text: the reply, a fenced block or plain lines
    :return: (verdict, rationale, confidence) per CWE id, the key is None for an answer without a :code:`CWE:` line
    :raises ~vulbin.type.ParseFailure: if no answer is found or an answer is neither yes nor no
    """
    body = extract_fenced_block(text)
    if body is None:
        body = text
    results: Dict[Optional[str], list] = {}
    current: Optional[str] = None
    last: Optional[str] = None
    answered = False
    for line in body.replace('\r\n', '\n').split('\n'):
        m = _CWE_LINE.match(line)
        if m is not None:
            current = m.group(1).upper()
            continue
        m = _ANSWER_LINE.match(line)
        if m is not None:
            word = m.group(1).lower()
            if word not in ('yes', 'no'):
                raise ParseFailure(f'answer "{m.group(1)}" is neither yes nor no')
            results[current] = [Verdict(word), '', 1.0]
            last, answered = current, True
            continue
        m = _REASON_LINE.match(line)
        if m is not None and answered and last in results:
            results[last][1] = m.group(1)
            continue
        m = _CONFIDENCE_LINE.match(line)
        if m is not None and answered and last in results:
            results[last][2] = min(1.0, max(0.0, float(m.group(1))))
    if not results:
        raise ParseFailure('no ANSWER line found')
    return {k: (v[0], v[1], v[2]) for k, v in results.items()}


def parse_verdict(text: str) -> Tuple[Verdict, str]:
    """Parses a single :code:`ANSWER: yes|no` / :code:`REASON: ...` answer.

    :raises ~vulbin.type.ParseFailure: if the text carries no parseable answer
    """
    verdict, rationale, _ = next(iter(parse_verdicts(text).values()))
    return verdict, rationale
