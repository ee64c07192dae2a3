#  Copyright (c) 2024. VulBin Authors
"""
CWE Classifier
--------------

Asks one question per function and target CWE. Each question names the target plus :code:`k_distractors` distractor
CWEs; distractor answers are parsed and logged, only the target verdict is returned.

Functions whose code does not fit into a single prompt are split at top level brace and blank line boundaries into
chunks. Each chunk is asked separately with a rolling summary of the preceding chunk, a CWE is flagged if any chunk
flags it.

*******************
Class Documentation
*******************
"""
import re
from datetime import datetime, timezone
from logging import getLogger, Logger
from typing import List, Sequence, Optional, Callable

from vulbin.helper import TASK_PREFIX, CODE_SECTION_MARKER, VERDICT_SECTION_MARKER, truncate_at_sentence
from vulbin.llm.client import LlmClient
from vulbin.object.analysis import (EnhancedFunction, CweVerdict, CweQuery, ContextBundle, ContextItem, ChatMessage, AnalysisRecord,
                                    SuspectedCwe)
from vulbin.prominence.tokenizer import tokenize
from vulbin.reasoner.knowledge import KnowledgeBase
from vulbin.reasoner.prompt import build_prompt, parse_verdicts, draw_distractors
from vulbin.type import ChatRole, PromptTask, Verdict, LlmFailure, ParseFailure, BudgetOverflow, TokenizeError

__all__ = ['REPAIR_PROMPT', 'SUMMARY_INSTRUCTIONS', 'split_into_chunks', 'mechanical_summary', 'CweClassifier']

REPAIR_PROMPT = ('Respond only with the fenced block containing the lines "CWE: <id>", "ANSWER: yes|no" and '
                 '"REASON: ..." for every CWE of the question.')
SUMMARY_INSTRUCTIONS = ('Summarize what the decompiled function does and which weaknesses were found in at most three '
                        'sentences. The summary is shown when its callers are analyzed.')
_LINE_PATTERN = re.compile(r'[^\n]*\n|[^\n]+$')


def _hard_split(text: str, budget: int, counter: Callable[[str], int]) -> List[str]:
    pieces = []
    while text:
        lo, hi = 1, len(text)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if counter(text[:mid]) <= budget:
                lo = mid
            else:
                hi = mid - 1
        pieces.append(text[:lo])
        text = text[lo:]
    return pieces


def split_into_chunks(code: str, budget: int, counter: Callable[[str], int]) -> List[str]:
    """Splits code into chunks of at most budget tokens. Joining the chunks gives back the code exactly.

    Splits prefer top level boundaries (lines after which at most the function body brace is open, and blank lines),
    then line ends, and cut inside a line only if the line alone exceeds the budget.

    :param code: the code to split
    :param budget: maximum tokens per chunk, at least 1
    :param counter: the token counter
    """
    if counter(code) <= budget:
        return [code]
    lines = _LINE_PATTERN.findall(code)
    try:
        tokens = tokenize(code)
    except TokenizeError:
        tokens = None
    depth_at_end = []
    depth, ti = 0, 0
    for line_no in range(1, len(lines) + 1):
        if tokens is None:
            depth_at_end.append(0)
            continue
        while ti < len(tokens) and tokens[ti].line == line_no:
            if tokens[ti].text == '{':
                depth += 1
            elif tokens[ti].text == '}':
                depth -= 1
            ti += 1
        depth_at_end.append(depth)
    segments, current = [], ''
    for line, d in zip(lines, depth_at_end):
        current += line
        if d <= 1 or not line.strip():
            segments.append(current)
            current = ''
    if current:
        segments.append(current)
    pieces = []
    for seg in segments:
        if counter(seg) <= budget:
            pieces.append(seg)
            continue
        for line in _LINE_PATTERN.findall(seg):
            pieces.extend([line] if counter(line) <= budget else _hard_split(line, budget, counter))
    chunks, current = [], ''
    for p in pieces:
        if current and counter(current + p) > budget:
            chunks.append(current)
            current = p
        else:
            current += p
    if current:
        chunks.append(current)
    return chunks


def mechanical_summary(function_id: str, verdicts: Sequence[CweVerdict]) -> str:
    """Summary used when the model can not provide one"""
    flagged = [v.cwe_id for v in verdicts if v.verdict == Verdict.YES]
    if flagged:
        return f'function {function_id}: flagged {{{", ".join(flagged)}}}'
    return f'function {function_id}: clean'


class CweClassifier:
    """Classifies enhanced functions and writes their archival summaries"""

    def __init__(self,
                 client: LlmClient,
                 kb: KnowledgeBase,
                 distractor_pool: Sequence[str],
                 k_distractors: int = 2,
                 seed: int = 0,
                 summary_token_cap: int = 256,
                 use_icl: bool = True):
        """
        :param client: the shared model client
        :param kb: knowledge documents for all targets and distractors
        :param distractor_pool: CWEs distractors are drawn from
        :param k_distractors: distractors per question |default| :code:`2`
        :param seed: run seed for the distractor draw |default| :code:`0`
        :param summary_token_cap: maximum tokens of an archival summary |default| :code:`256`
        :param use_icl: show the knowledge document examples as worked examples |default| :code:`True`
        """
        self.client: LlmClient = client
        self.kb: KnowledgeBase = kb
        self.distractor_pool: List[str] = list(distractor_pool)
        self.k_distractors: int = k_distractors
        self.seed: int = seed
        self.summary_token_cap: int = summary_token_cap
        self.use_icl: bool = use_icl
        self.logger: Logger = getLogger('vulbin.reasoner')
        """The logger used for classification related log messages"""

    def make_query(self, fn: EnhancedFunction, target: str, context: ContextBundle, code: Optional[str] = None,
                   chunk_label: Optional[str] = None) -> CweQuery:
        return CweQuery(function_id=fn.function_id,
                        code=fn.code if code is None else code,
                        target_cwe=target,
                        distractors=draw_distractors(target, self.distractor_pool, self.k_distractors, self.seed, fn.function_id),
                        context=context,
                        icl_shots=self.kb.icl_shots(target) if self.use_icl else [],
                        chunk_label=chunk_label)

    def prompt_overhead(self, fn: EnhancedFunction, target: str) -> int:
        """tokens of a question for this target without code, context and shots"""
        bare = self.make_query(fn, target, ContextBundle(budget=1), code=' ', chunk_label='chunk 00 of 00')
        bare.icl_shots = []
        return sum(self.client.count_tokens(m.content) for m in build_prompt(bare, self.kb))

    async def ask(self, query: CweQuery) -> CweVerdict:
        """Sends one question, returns the target verdict. Unparseable replies get one repair prompt, after that and on
        model failures the verdict is :code:`invalid`.

        :raises ~vulbin.type.BudgetOverflow: if the question does not fit into the context window
        """
        messages = build_prompt(query, self.kb, self.client.prompt_budget, self.client.count_tokens)
        try:
            reply = await self.client.complete(messages)
            try:
                return self._target_verdict(query, reply)
            except ParseFailure as e:
                self.logger.info(f'unparseable answer for {query.function_id}/{query.target_cwe} ({e}), sending repair prompt')
            repair = messages + [ChatMessage(role=ChatRole.ASSISTANT, content=reply or '(empty)'),
                                 ChatMessage(role=ChatRole.USER, content=f'{REPAIR_PROMPT}\n\n{messages[-1].content}')]
            try:
                self.client.check_budget(repair)
            except BudgetOverflow:
                repair = messages[:-1] + [ChatMessage(role=ChatRole.USER, content=f'{REPAIR_PROMPT}\n\n{messages[-1].content}')]
            reply = await self.client.complete(repair)
            try:
                return self._target_verdict(query, reply)
            except ParseFailure as e:
                return CweVerdict(function_id=query.function_id, cwe_id=query.target_cwe, verdict=Verdict.INVALID,
                                  rationale=f'parse failure: {e}', confidence=0.0)
        except LlmFailure as e:
            return CweVerdict(function_id=query.function_id, cwe_id=query.target_cwe, verdict=Verdict.INVALID,
                              rationale=f'model failure: {e}', confidence=0.0)

    def _target_verdict(self, query: CweQuery, reply: str) -> CweVerdict:
        answers = parse_verdicts(reply)
        if query.target_cwe in answers:
            verdict, rationale, confidence = answers[query.target_cwe]
        elif None in answers and len(answers) == 1:
            verdict, rationale, confidence = answers[None]
        else:
            raise ParseFailure(f'no answer for {query.target_cwe}')
        for cwe in query.distractors:
            if cwe in answers:
                self.logger.debug(f'{query.function_id} distractor {cwe}: {answers[cwe][0].value}')
        return CweVerdict(function_id=query.function_id, cwe_id=query.target_cwe, verdict=verdict, rationale=rationale,
                          confidence=confidence)

    async def classify(self, fn: EnhancedFunction, target_cwes: Sequence[str], context: ContextBundle) -> List[CweVerdict]:
        """One verdict per target CWE, targets whose question does not fit are classified chunked

        :param fn: the enhanced function
        :param target_cwes: the CWEs to decide
        :param context: callee summaries from the archival store
        """
        verdicts = []
        for target in target_cwes:
            try:
                verdicts.append(await self.ask(self.make_query(fn, target, context)))
            except BudgetOverflow:
                self.logger.info(f'{fn.function_id} does not fit a single {target} question, classifying in chunks')
                verdicts.append(await self._classify_target_chunked(fn, target, context))
        return verdicts

    async def classify_chunked(self, fn: EnhancedFunction, target_cwes: Sequence[str], context: ContextBundle) -> List[CweVerdict]:
        """Classifies the function chunk by chunk for every target"""
        return [await self._classify_target_chunked(fn, target, context) for target in target_cwes]

    def chunk_budget(self, fn: EnhancedFunction, target: str) -> int:
        budget = self.client.prompt_budget - self.prompt_overhead(fn, target) - self.summary_token_cap
        return max(1, budget)

    async def _classify_target_chunked(self, fn: EnhancedFunction, target: str, context: ContextBundle) -> CweVerdict:
        chunks = split_into_chunks(fn.code, self.chunk_budget(fn, target), self.client.count_tokens)
        rolling: Optional[str] = None
        flagged, invalid, confidence = [], [], 0.0
        for i, chunk in enumerate(chunks, start=1):
            label = f'chunk {i} of {len(chunks)}'
            items = list(context.items)
            if rolling is not None:
                items.insert(0, ContextItem(function_id='previous chunk', summary=rolling, tokens=self.client.count_tokens(rolling)))
            bundle = ContextBundle(items=items, total_tokens=sum(x.tokens for x in items), budget=max(context.budget, 1))
            try:
                v = await self.ask(self.make_query(fn, target, bundle, code=chunk, chunk_label=label))
            except BudgetOverflow as e:
                v = CweVerdict(function_id=fn.function_id, cwe_id=target, verdict=Verdict.INVALID, rationale=str(e), confidence=0.0)
            if v.verdict == Verdict.YES:
                flagged.append(f'{label}: {v.rationale}')
                confidence = max(confidence, v.confidence)
            elif v.verdict == Verdict.INVALID:
                invalid.append(f'{label}: {v.rationale}')
            rolling = truncate_at_sentence(f'{label} answered {v.verdict.value} for {target}. {v.rationale}',
                                           self.summary_token_cap, self.client.count_tokens)
        if flagged:
            return CweVerdict(function_id=fn.function_id, cwe_id=target, verdict=Verdict.YES, rationale=' | '.join(flagged),
                              confidence=confidence)
        if invalid:
            return CweVerdict(function_id=fn.function_id, cwe_id=target, verdict=Verdict.INVALID, rationale=' | '.join(invalid),
                              confidence=0.0)
        return CweVerdict(function_id=fn.function_id, cwe_id=target, verdict=Verdict.NO,
                          rationale=f'no chunk of {len(chunks)} flagged {target}')

    async def summarize(self, fn: EnhancedFunction, name: str, verdicts: Sequence[CweVerdict], callees: Sequence[str] = ()) -> AnalysisRecord:
        """Archival record of an analyzed function, the summary respects :code:`summary_token_cap`

        Falls back to :const:`~vulbin.reasoner.classifier.mechanical_summary()` if the model fails.
        """
        suspected = []
        for v in verdicts:
            if v.verdict == Verdict.YES and v.cwe_id not in {s.cwe_id for s in suspected}:
                suspected.append(SuspectedCwe(cwe_id=v.cwe_id, confidence=v.confidence))
        verdict_lines = '\n'.join(f'{v.cwe_id}: {v.verdict.value}' for v in verdicts)
        messages = [ChatMessage(role=ChatRole.SYSTEM, content=f'{TASK_PREFIX}{PromptTask.SUMMARIZE.value}\n{SUMMARY_INSTRUCTIONS}'),
                    ChatMessage(role=ChatRole.USER, content=f'NAME: {name}\n{CODE_SECTION_MARKER}\n```c\n{fn.code.rstrip()}\n```\n'
                                                            f'{VERDICT_SECTION_MARKER}\n{verdict_lines or "none"}')]
        summary = ''
        try:
            summary = (await self.client.complete(messages)).strip()
        except (LlmFailure, BudgetOverflow) as e:
            self.logger.info(f'summary of {fn.function_id} falls back to a mechanical one: {e}')
        if not summary:
            summary = mechanical_summary(fn.function_id, verdicts)
        summary = truncate_at_sentence(summary, self.summary_token_cap, self.client.count_tokens)
        return AnalysisRecord(function_id=fn.function_id,
                              summary=summary,
                              suspected=suspected,
                              callees=list(callees),
                              created_at=datetime.now(timezone.utc),
                              model_tag=self.client.model_tag)
