#  Copyright (c) 2024. VulBin Authors
"""
Decision and Action Agents
--------------------------

Every agent sends one task prompt for a function and expects the answer as a fenced block. Prose outside of the block
is ignored. If the reply carries no fenced block the agent sends a single repair prompt; a second miss raises
:const:`~vulbin.type.ParseFailure`.

.. list-table::
   :header-rows: 1

   * - Agent
     - Block format
   * - :const:`~vulbin.prominence.agents.DecisionAgent`
     - :code:`ACTIONS: RenameVariables, AnnotateVulnerabilities` and :code:`RATIONALE: ...`
   * - :const:`~vulbin.prominence.agents.RenameAgent`
     - one :code:`old -> new` line per identifier
   * - :const:`~vulbin.prominence.agents.StructAgent`
     - :code:`struct` definitions
   * - :const:`~vulbin.prominence.agents.AnnotateAgent`
     - one :code:`line_no | CWE-121 | text` line per comment, :code:`-` instead of a CWE id for no hint

Custom agents can be passed to :const:`~vulbin.prominence.engine.ProminenceEngine` by subclassing
:const:`~vulbin.prominence.agents.BaseActionAgent`.

*******************
Class Documentation
*******************
"""
import re
from abc import ABC, abstractmethod
from logging import getLogger, Logger
from typing import List, Tuple, Any, Optional, Sequence

from vulbin.helper import TASK_PREFIX, CODE_SECTION_MARKER, CWE_ID_PATTERN, extract_fenced_block, number_lines
from vulbin.llm.client import LlmClient
from vulbin.object.analysis import ChatMessage, OptimizationPlan, VulnComment
from vulbin.object.binary import RawFunction
from vulbin.prominence.tokenizer import tokenize, braces_balanced
from vulbin.reasoner.knowledge import KnowledgeBase
from vulbin.type import ChatRole, PromptTask, OptimizationAction, ParseFailure, TokenizeError, TokenKind

__all__ = ['REPAIR_PROMPT', 'BaseActionAgent', 'DecisionAgent', 'RenameAgent', 'StructAgent', 'AnnotateAgent', 'is_valid_struct_def']

REPAIR_PROMPT = 'Respond only with the fenced block.'
"""sent once when a reply carries no fenced block"""

_RENAME_LINE = re.compile(r'^\s*([^\s>-][^\s]*)\s*->\s*(\S+)\s*$')
_COMMENT_LINE = re.compile(r'^\s*(\d+)\s*\|\s*([^|]*?)\s*\|\s*(.*?)\s*$')
_ACTIONS_LINE = re.compile(r'^\s*ACTIONS\s*:(.*)$', re.IGNORECASE | re.MULTILINE)
_RATIONALE_LINE = re.compile(r'^\s*RATIONALE\s*:(.*)$', re.IGNORECASE | re.MULTILINE)


def is_valid_struct_def(text: str) -> bool:
    """True for one complete :code:`struct`, :code:`union` or :code:`typedef` definition ending with :code:`;`"""
    try:
        tokens = [t for t in tokenize(text) if t.kind != TokenKind.COMMENT]
    except TokenizeError:
        return False
    if len(tokens) < 4 or tokens[0].text not in ('struct', 'union', 'typedef'):
        return False
    if tokens[-1].text != ';' or not any(t.text == '{' for t in tokens):
        return False
    return braces_balanced(tokens)


class BaseActionAgent(ABC):
    """Sends one task prompt for a function and parses the fenced reply block"""

    task: PromptTask
    instructions: str = ''

    def __init__(self, client: LlmClient):
        """
        :param client: the shared model client
        """
        self.client: LlmClient = client
        self.logger: Logger = getLogger('vulbin.prominence')
        """The logger used for agent related log messages"""

    def system_prompt(self) -> str:
        return f'{TASK_PREFIX}{self.task.value}\n{self.instructions}'

    def render_code(self, raw: RawFunction) -> str:
        return raw.pseudo_code

    def user_prompt(self, raw: RawFunction) -> str:
        return f'NAME: {raw.synthetic_name}\n{CODE_SECTION_MARKER}\n```c\n{self.render_code(raw)}\n```'

    def build_messages(self, raw: RawFunction) -> List[ChatMessage]:
        return [ChatMessage(role=ChatRole.SYSTEM, content=self.system_prompt()),
                ChatMessage(role=ChatRole.USER, content=self.user_prompt(raw))]

    async def request_block(self, raw: RawFunction) -> str:
        """Returns the fenced block of the reply, sending one repair prompt if needed

        :raises ~vulbin.type.ParseFailure: if the repaired reply still has no fenced block
        :raises ~vulbin.type.LlmFailure: if the model could not be reached
        """
        messages = self.build_messages(raw)
        reply = await self.client.complete(messages)
        block = extract_fenced_block(reply)
        if block is not None:
            return block
        self.logger.info(f'{self.task.value} reply for {raw.function_id} has no fenced block, sending repair prompt')
        repair = messages + [ChatMessage(role=ChatRole.ASSISTANT, content=reply or '(empty)'),
                             ChatMessage(role=ChatRole.USER, content=f'{REPAIR_PROMPT}\n\n{messages[-1].content}')]
        block = extract_fenced_block(await self.client.complete(repair))
        if block is None:
            raise ParseFailure(f'{self.task.value} reply for {raw.function_id} has no fenced block after repair')
        return block

    async def run(self, raw: RawFunction) -> Any:
        return self.parse(await self.request_block(raw), raw)

    @abstractmethod
    def parse(self, block: str, raw: RawFunction) -> Any:
        """converts the fenced block into the agent result"""
        pass


class DecisionAgent(BaseActionAgent):
    """Selects the optimization actions for a function"""

    task = PromptTask.DECIDE
    instructions = ('You are a reverse engineer preparing decompiled code for a vulnerability review. Check grammar, '
                    'functionality and structure of the function and decide which rewrites make it easier to review:\n'
                    '- RenameVariables: replace generic decompiler names with meaningful ones\n'
                    '- RecoverStructs: define structures for fixed offset accesses on a base pointer\n'
                    '- AnnotateVulnerabilities: add comments about potential weaknesses and the functionality\n'
                    'Answer with a fenced block containing a line "ACTIONS: <comma separated actions>" and a line '
                    '"RATIONALE: <one sentence>".')

    def parse(self, block: str, raw: RawFunction) -> OptimizationPlan:
        m = _ACTIONS_LINE.search(block)
        if m is None:
            raise ParseFailure(f'decision for {raw.function_id} has no ACTIONS line')
        by_name = {a.value.lower(): a for a in OptimizationAction}
        actions = []
        for name in m.group(1).split(','):
            action = by_name.get(name.strip().lower())
            if action is not None:
                actions.append(action)
            elif name.strip():
                self.logger.debug(f'ignoring unknown action "{name.strip()}"')
        r = _RATIONALE_LINE.search(block)
        return OptimizationPlan(actions=actions, rationale=r.group(1).strip() if r is not None else '')


class RenameAgent(BaseActionAgent):
    """Proposes meaningful identifier names"""

    task = PromptTask.RENAME
    instructions = ('Propose meaningful names for the generic identifiers of the decompiled function, for example loop '
                    'counters, parameters and locals. Do not rename library functions, keywords or types. Answer with a '
                    'fenced block containing one "old -> new" line per identifier.')

    def parse(self, block: str, raw: RawFunction) -> List[Tuple[str, str]]:
        pairs = []
        for line in block.split('\n'):
            m = _RENAME_LINE.match(line)
            if m is not None:
                pairs.append((m.group(1), m.group(2)))
        return pairs


class StructAgent(BaseActionAgent):
    """Recovers structure definitions for fixed offset accesses"""

    task = PromptTask.STRUCTS
    instructions = ('Identify base pointers that are dereferenced at fixed offsets and define one C struct per base '
                    'pointer with a field per offset. Do not rewrite the function. Answer with a fenced block containing '
                    'only the struct definitions, an empty block if there is nothing to recover.')

    def parse(self, block: str, raw: RawFunction) -> List[str]:
        defs, current, depth = [], [], 0
        for line in block.split('\n'):
            if not current and not line.strip():
                continue
            current.append(line.rstrip())
            depth += line.count('{') - line.count('}')
            if depth <= 0 and line.rstrip().endswith(';'):
                defs.append('\n'.join(current))
                current, depth = [], 0
        if current:
            defs.append('\n'.join(current))
        valid = []
        for d in defs:
            if is_valid_struct_def(d):
                valid.append(d)
            else:
                self.logger.warning(f'dropping invalid struct definition for {raw.function_id}: {d[:60]!r}')
        return valid


class AnnotateAgent(BaseActionAgent):
    """Comments potential weaknesses and the functionality of a function"""

    task = PromptTask.ANNOTATE
    instructions = ('Read the numbered decompiled function and point out potential vulnerabilities, for example pointer '
                    'arithmetic that could lead to buffer overflows, and briefly describe its functionality. Answer with '
                    'a fenced block containing one "line_no | CWE-id or - | comment" line per comment.')

    def __init__(self, client: LlmClient, kb: Optional[KnowledgeBase] = None, target_cwes: Sequence[str] = ()):
        """
        :param client: the shared model client
        :param kb: knowledge base supplying in-context examples |default| :code:`None`
        :param target_cwes: CWEs whose examples are shown |default| :code:`()`
        """
        super(AnnotateAgent, self).__init__(client)
        self.kb: Optional[KnowledgeBase] = kb
        self.target_cwes: List[str] = list(target_cwes)

    def render_code(self, raw: RawFunction) -> str:
        return number_lines(raw.pseudo_code)

    def user_prompt(self, raw: RawFunction) -> str:
        examples = []
        if self.kb is not None:
            for cwe in self.target_cwes:
                if cwe not in self.kb:
                    continue
                doc = self.kb.get(cwe)
                examples.append(f'Example of {cwe} ({doc.name}):\n```c\n{doc.vulnerable_example.rstrip()}\n```')
        prompt = super(AnnotateAgent, self).user_prompt(raw)
        if not examples:
            return prompt
        return '### EXAMPLES\n' + '\n\n'.join(examples) + '\n\n' + prompt

    def parse(self, block: str, raw: RawFunction) -> List[VulnComment]:
        line_count = len(raw.pseudo_code.split('\n'))
        comments = []
        for line in block.split('\n'):
            m = _COMMENT_LINE.match(line)
            if m is None:
                continue
            line_no, hint, text = int(m.group(1)), m.group(2).strip(), m.group(3)
            if not 1 <= line_no <= line_count:
                self.logger.warning(f'dropping comment for {raw.function_id}: line {line_no} does not exist')
                continue
            if not text:
                continue
            cwe = hint.upper() if CWE_ID_PATTERN.match(hint.upper()) else None
            comments.append(VulnComment(line_no=line_no, text=text, cwe_hint=cwe))
        return comments
