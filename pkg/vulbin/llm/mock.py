#  Copyright (c) 2024. VulBin Authors
"""
Mock Backend
------------

A deterministic stand-in for a language model. Replies are a pure function of the message contents and follow the
published rule table (version :const:`~vulbin.helper.MOCK_RULE_TABLE_VERSION`), which makes complete pipeline runs
reproducible without network access.

The backend reads the task from the :code:`TASK: <name>` line of the system message and the code from the fenced block
following :const:`~vulbin.helper.CODE_SECTION_MARKER` in the last user message.

See :doc:`/tutorial/mock-backend` for the full rule table.

Findings
========

.. list-table::
   :header-rows: 1

   * - CWE
     - Rule
   * - CWE-78
     - call to :code:`system`, :code:`popen` or an :code:`exec*` function
   * - CWE-121
     - call to :code:`strcpy`, :code:`strcat`, :code:`gets`, :code:`wcscpy` or :code:`wcscat`
   * - CWE-134
     - printf family call whose format argument is not a string literal
   * - CWE-190
     - allocation whose size argument contains :code:`*` or :code:`+`
   * - CWE-606
     - the result of an :code:`atoi`, :code:`atol` or :code:`strto*` conversion is assigned to a variable that appears
       in the header of a later loop (the step clause of a :code:`for` excluded)
   * - CWE-787
     - :code:`memcpy`, :code:`memmove`, :code:`memset`, :code:`strncpy` or :code:`strncat` with a non-constant length,
       or a pointer arithmetic / indexed write inside a loop
   * - CWE-416
     - a pointer passed to :code:`free` is used again before being reassigned
   * - CWE-476
     - result of :code:`malloc`, :code:`calloc` or :code:`realloc` is never compared against NULL

Code containing :const:`~vulbin.helper.FAULT_INJECTION_MARKER` makes every request fail with
:const:`~vulbin.type.TransportFailure`.

*******************
Class Documentation
*******************
"""
import re
from dataclasses import dataclass
from typing import List, Dict, Optional, Tuple, Set

from vulbin.helper import (TASK_PREFIX, CODE_SECTION_MARKER, QUESTION_SECTION_MARKER, VERDICT_SECTION_MARKER, FAULT_INJECTION_MARKER,
                           extract_fenced_block, strip_line_numbers, cwe_sort_key)
from vulbin.llm.base import LlmBackend
from vulbin.object.analysis import ChatMessage
from vulbin.prominence.tokenizer import Token, code_tokens, called_names
from vulbin.type import ChatRole, OptimizationAction, PromptTask, TokenKind, TokenizeError, TransportFailure

__all__ = ['Finding', 'GENERIC_PREFIXES', 'find_weaknesses', 'propose_renames', 'propose_structs', 'MockBackend']

_COMMAND_CALLS = frozenset({'system', 'popen', '_popen', '_wsystem', 'execl', 'execlp', 'execle', 'execv', 'execvp', 'execve'})
_UNBOUNDED_COPY_CALLS = frozenset({'strcpy', 'strcat', 'gets', 'wcscpy', 'wcscat'})
_FORMAT_ARG = {'printf': 0, 'vprintf': 0, 'wprintf': 0, 'fprintf': 1, 'vfprintf': 1, 'sprintf': 1, 'vsprintf': 1, 'dprintf': 1,
               'syslog': 1, 'fwprintf': 1, 'snprintf': 2, 'vsnprintf': 2, 'swprintf': 2}
_ALLOC_SIZE_ARGS = {'malloc': (0,), 'calloc': (0, 1), 'realloc': (1,), 'alloca': (0,)}
_INPUT_CONVERSIONS = frozenset({'atoi', 'atol', 'atoll', 'strtol', 'strtoul', 'strtoll', 'strtoull'})
_LENGTH_ARG = {'memcpy': 2, 'memmove': 2, 'memset': 2, 'strncpy': 2, 'strncat': 2}
_CHECKED_ALLOCS = ('malloc', 'calloc', 'realloc')

GENERIC_PREFIXES: List[Tuple[str, str]] = sorted([
    ('param_', 'arg_'), ('local_', 'var_'), ('uVar', 'uval_'), ('iVar', 'ival_'), ('lVar', 'lval_'), ('sVar', 'size_'),
    ('pcVar', 'str_'), ('ppcVar', 'str_list_'), ('puVar', 'uptr_'), ('piVar', 'iptr_'), ('bVar', 'flag_'), ('cVar', 'ch_'),
    ('auStack_', 'stack_buf_'), ('acStack_', 'char_buf_'), ('FUN_', 'sub_')], key=lambda p: (-len(p[0]), p[0]))
"""decompiler generated name prefixes and their replacement, longest prefix first"""
_INDUCTION_NAMES = ['row', 'col', 'inner']
_HEX_SUFFIX = re.compile(r'^[0-9A-Fa-f]+$')
_CWE = re.compile(r'CWE-[0-9]+')
_FIELD_ACCESS = re.compile(r'\*\(\s*([A-Za-z_][\w ]*?(?:\s*\*)*)\s*\*\s*\)\s*\(\s*([A-Za-z_]\w*)\s*\+\s*(0x[0-9A-Fa-f]+|[0-9]+)\s*\)')
_BASE_ACCESS = re.compile(r'\*\(\s*([A-Za-z_][\w ]*?(?:\s*\*)*)\s*\*\s*\)\s*([A-Za-z_]\w*)\b(?!\s*[\[(+])')
_NAME_LINE = re.compile(r'^NAME: (\S+)\s*$', re.MULTILINE)
_VERDICT_LINE = re.compile(r'^(CWE-[0-9]+): (yes|no|invalid)\s*$', re.MULTILINE)

_IMPACT = {
    'CWE-78': 'arbitrary command execution with the privileges of the program',
    'CWE-121': 'stack memory next to the buffer can be overwritten',
    'CWE-134': 'memory disclosure or writes through format directives',
    'CWE-190': 'an undersized allocation followed by a heap overflow',
    'CWE-606': 'unbounded iteration controlled by the input',
    'CWE-787': 'writes past the end of the destination buffer',
    'CWE-416': 'access to freed memory',
    'CWE-476': 'a NULL pointer dereference when the allocation fails',
}


@dataclass(frozen=True)
class Finding:
    """One rule match of the mock rule table"""
    cwe_id: str
    line: int
    """1-based line of the code the rule matched on"""
    note: str


@dataclass(frozen=True)
class _Call:
    name: str
    line: int
    index: int
    end: int
    """index of the closing parenthesis"""
    args: Tuple[Tuple[Token, ...], ...]


def _body_start(tokens: List[Token]) -> int:
    for i, t in enumerate(tokens):
        if t.text == '{':
            return i
    return 0


def _match_paren(tokens: List[Token], open_index: int) -> int:
    depth = 0
    for i in range(open_index, len(tokens)):
        if tokens[i].text in '([{' and tokens[i].kind == TokenKind.PUNCT:
            depth += 1
        elif tokens[i].text in ')]}' and tokens[i].kind == TokenKind.PUNCT:
            depth -= 1
            if depth == 0:
                return i
    return len(tokens) - 1


def _calls(tokens: List[Token]) -> List[_Call]:
    calls = []
    for i in range(_body_start(tokens), len(tokens) - 1):
        t = tokens[i]
        if t.kind != TokenKind.IDENTIFIER or tokens[i + 1].text != '(':
            continue
        end = _match_paren(tokens, i + 1)
        args, current, depth = [], [], 0
        for tok in tokens[i + 2:end]:
            if tok.kind == TokenKind.PUNCT and tok.text in '([{':
                depth += 1
            elif tok.kind == TokenKind.PUNCT and tok.text in ')]}':
                depth -= 1
            if tok.text == ',' and depth == 0:
                args.append(tuple(current))
                current = []
                continue
            current.append(tok)
        if current:
            args.append(tuple(current))
        calls.append(_Call(t.text, t.line, i, end, tuple(args)))
    return calls


def _is_constant(arg: Tuple[Token, ...]) -> bool:
    """numbers, operators and sizeof expressions only"""
    i = 0
    while i < len(arg):
        t = arg[i]
        if t.kind == TokenKind.KEYWORD and t.text == 'sizeof':
            if i + 1 < len(arg) and arg[i + 1].text == '(':
                depth = 0
                for j in range(i + 1, len(arg)):
                    depth += 1 if arg[j].text == '(' else -1 if arg[j].text == ')' else 0
                    if depth == 0:
                        i = j
                        break
            else:
                i += 1
        elif t.kind not in (TokenKind.NUMBER, TokenKind.PUNCT, TokenKind.KEYWORD):
            return False
        i += 1
    return True


def _loop_lines(tokens: List[Token]) -> Set[int]:
    lines = set()
    for i, t in enumerate(tokens):
        if t.kind != TokenKind.KEYWORD or t.text not in ('for', 'while', 'do'):
            continue
        j = i + 1
        if t.text != 'do' and j < len(tokens) and tokens[j].text == '(':
            j = _match_paren(tokens, j) + 1
        if j >= len(tokens):
            continue
        if tokens[j].text == '{':
            end = _match_paren(tokens, j)
        else:
            end = j
            while end < len(tokens) - 1 and tokens[end].text != ';':
                end += 1
        lines.update(range(t.line, tokens[end].line + 1))
    return lines


def _indexed_writes(tokens: List[Token]) -> List[int]:
    """lines of statements writing through pointer arithmetic or a variable index"""
    lines = []
    for i, t in enumerate(tokens):
        at_statement_start = i == 0 or tokens[i - 1].text in (';', '{', '}', ')')
        if not at_statement_start:
            continue
        if t.text == '*' and i + 1 < len(tokens) and tokens[i + 1].text == '(':
            j, has_plus = i + 1, False
            while j < len(tokens) and tokens[j].text not in (';', '='):
                if tokens[j].text == '(':
                    end = _match_paren(tokens, j)
                    has_plus = has_plus or any(x.text == '+' for x in tokens[j:end])
                    j = end
                j += 1
            if j < len(tokens) and tokens[j].text == '=' and has_plus:
                lines.append(t.line)
        elif t.kind == TokenKind.IDENTIFIER and i + 1 < len(tokens) and tokens[i + 1].text == '[':
            end = _match_paren(tokens, i + 1)
            index = tokens[i + 2:end]
            if end + 1 < len(tokens) and tokens[end + 1].text == '=' and any(x.kind == TokenKind.IDENTIFIER for x in index):
                lines.append(t.line)
    return lines


def _assigned_name(tokens: List[Token], call: _Call) -> Optional[str]:
    j = call.index - 1
    if j >= 0 and tokens[j].text == ')':
        depth = 0
        while j >= 0:
            depth += 1 if tokens[j].text == ')' else -1 if tokens[j].text == '(' else 0
            if depth == 0:
                break
            j -= 1
        j -= 1
    if j >= 1 and tokens[j].text == '=' and tokens[j - 1].kind == TokenKind.IDENTIFIER:
        return tokens[j - 1].text
    return None


def _loop_header_names(tokens: List[Token], start: int) -> Set[str]:
    """identifiers in the loop headers after :code:`start`, without the step clause of a for loop"""
    names = set()
    for i in range(start, len(tokens) - 1):
        t = tokens[i]
        if t.kind != TokenKind.KEYWORD or t.text not in ('for', 'while') or tokens[i + 1].text != '(':
            continue
        header = tokens[i + 2:_match_paren(tokens, i + 1)]
        if t.text == 'for':
            separators = [k for k, x in enumerate(header) if x.text == ';']
            if len(separators) >= 2:
                header = header[:separators[1]]
        names.update(x.text for x in header if x.kind == TokenKind.IDENTIFIER)
    return names


def _null_checked(tokens: List[Token], name: str, start: int) -> bool:
    for j in range(start, len(tokens)):
        if tokens[j].text != name:
            continue
        prev = tokens[j - 1].text if j > 0 else ''
        nxt = tokens[j + 1].text if j + 1 < len(tokens) else ''
        if prev in ('!', '==', '!=') or nxt in ('==', '!='):
            return True
        if prev == '(' and nxt in (')', '&&', '||') and j > 1 and tokens[j - 2].text in ('if', 'while', '&&', '||'):
            return True
    return False


def _used_after(tokens: List[Token], name: str, start: int) -> Optional[int]:
    for j in range(start, len(tokens)):
        if tokens[j].kind != TokenKind.IDENTIFIER or tokens[j].text != name:
            continue
        if j + 1 < len(tokens) and tokens[j + 1].text == '=':
            return None
        return tokens[j].line
    return None


def find_weaknesses(code: str) -> List[Finding]:
    """Applies the rule table to the code, findings are ordered by line and CWE.

    :param code: pseudo-code without line numbers
    """
    try:
        tokens = code_tokens(code)
    except TokenizeError:
        return []
    calls = _calls(tokens)
    loops = _loop_lines(tokens)
    findings = []
    for c in calls:
        if c.name in _COMMAND_CALLS:
            findings.append(Finding('CWE-78', c.line, f'{c.name}() runs a command string that is not neutralized'))
        if c.name in _UNBOUNDED_COPY_CALLS:
            findings.append(Finding('CWE-121', c.line,
                                    f'unbounded copy: {c.name} writes into a fixed-size stack buffer without a length check'))
        fmt = _FORMAT_ARG.get(c.name)
        if fmt is not None and len(c.args) > fmt and not (len(c.args[fmt]) == 1 and c.args[fmt][0].kind == TokenKind.STRING):
            findings.append(Finding('CWE-134', c.line, f'{c.name}() receives a format string that is not a literal'))
        for pos in _ALLOC_SIZE_ARGS.get(c.name, ()):
            if len(c.args) > pos and any(t.text in ('*', '+') for t in c.args[pos]):
                findings.append(Finding('CWE-190', c.line, f'{c.name}() size is computed with unchecked arithmetic'))
                break
        if c.name in _INPUT_CONVERSIONS:
            target = _assigned_name(tokens, c)
            if target is not None and target in _loop_header_names(tokens, c.end + 1):
                findings.append(Finding('CWE-606', c.line, f'loop bound derived from {c.name}() without validation'))
        length = _LENGTH_ARG.get(c.name)
        if length is not None and len(c.args) > length and not _is_constant(c.args[length]):
            findings.append(Finding('CWE-787', c.line, f'{c.name}() length is not bounded by the destination size'))
        if c.name == 'free' and len(c.args) == 1 and len(c.args[0]) == 1 and c.args[0][0].kind == TokenKind.IDENTIFIER:
            line = _used_after(tokens, c.args[0][0].text, c.end + 1)
            if line is not None:
                findings.append(Finding('CWE-416', line, f'{c.args[0][0].text} is used after free()'))
        if c.name in _CHECKED_ALLOCS:
            target = _assigned_name(tokens, c)
            if target is not None and not _null_checked(tokens, target, c.end + 1):
                findings.append(Finding('CWE-476', c.line, f'result of {c.name}() is used without a NULL check'))
    for line in _indexed_writes(tokens):
        if line in loops:
            findings.append(Finding('CWE-787', line, 'pointer arithmetic write inside a loop may run past the buffer'))
    unique = {(f.line, f.cwe_id): f for f in reversed(findings)}
    return sorted(unique.values(), key=lambda f: (f.line, cwe_sort_key(f.cwe_id)))


def _external_calls(code: str) -> List[str]:
    try:
        tokens = code_tokens(code)
    except TokenizeError:
        return []
    return [n for n in called_names(tokens[_body_start(tokens):]) if not _generic_replacement(n)]


def _generic_replacement(name: str) -> Optional[str]:
    for prefix, replacement in GENERIC_PREFIXES:
        if name.startswith(prefix) and _HEX_SUFFIX.match(name[len(prefix):]):
            return replacement + name[len(prefix):]
    return None


def propose_renames(code: str) -> Dict[str, str]:
    """Rename rules: loop counters become :code:`row`, :code:`col`, :code:`inner`, other generic names swap their prefix.

    New names never collide with identifiers of the code or with each other."""
    try:
        tokens = code_tokens(code)
    except TokenizeError:
        return {}
    existing = {t.text for t in tokens if t.kind == TokenKind.IDENTIFIER}
    induction = []
    for i, t in enumerate(tokens[:-3]):
        if t.text == 'for' and tokens[i + 1].text == '(' and tokens[i + 2].kind == TokenKind.IDENTIFIER \
                and tokens[i + 3].text == '=' and tokens[i + 2].text not in induction:
            induction.append(tokens[i + 2].text)
    mapping: Dict[str, str] = {}
    taken = set(existing)
    for t in tokens:
        if t.kind != TokenKind.IDENTIFIER or t.text in mapping:
            continue
        base = _generic_replacement(t.text)
        if base is None:
            continue
        if t.text in induction and induction.index(t.text) < len(_INDUCTION_NAMES):
            base = _INDUCTION_NAMES[induction.index(t.text)]
        new, n = base, 2
        while new in taken:
            new = f'{base}_{n}'
            n += 1
        taken.add(new)
        mapping[t.text] = new
    return mapping


def propose_structs(code: str) -> List[str]:
    """Struct rule: a base pointer dereferenced at two or more distinct constant offsets becomes
    :code:`struct recovered_<base>` with one :code:`field_0x<offset>` per offset."""
    fields: Dict[str, Dict[int, str]] = {}
    for m in _FIELD_ACCESS.finditer(code):
        fields.setdefault(m.group(2), {}).setdefault(int(m.group(3), 0), ' '.join(m.group(1).split()))
    for m in _BASE_ACCESS.finditer(code):
        fields.setdefault(m.group(2), {}).setdefault(0, ' '.join(m.group(1).split()))
    defs = []
    for base in sorted(fields):
        offsets = fields[base]
        if len(offsets) < 2:
            continue
        lines = [f'struct recovered_{base} {{']
        lines.extend(f'    {offsets[off]} field_{off:#x};' for off in sorted(offsets))
        lines.append('};')
        defs.append('\n'.join(lines))
    return defs


def _fenced(body: str) -> str:
    return f'```\n{body}\n```'


class MockBackend(LlmBackend):
    """Rule table driven backend, replies are a pure function of the messages"""

    def __init__(self):
        super(MockBackend, self).__init__()

    @staticmethod
    def _task(messages: List[ChatMessage]) -> Optional[str]:
        for m in messages:
            if m.role == ChatRole.SYSTEM and m.content.startswith(TASK_PREFIX):
                return m.content[len(TASK_PREFIX):].split('\n', 1)[0].strip()
        return None

    @staticmethod
    def _last_user(messages: List[ChatMessage]) -> str:
        for m in reversed(messages):
            if m.role == ChatRole.USER:
                return m.content
        return ''

    @staticmethod
    def _code(text: str) -> str:
        idx = text.find(CODE_SECTION_MARKER)
        if idx < 0:
            return ''
        block = extract_fenced_block(text[idx:])
        return strip_line_numbers(block) if block is not None else ''

    async def complete(self, messages: List[ChatMessage]) -> str:
        task = self._task(messages)
        user = self._last_user(messages)
        code = self._code(user)
        if FAULT_INJECTION_MARKER in code:
            raise TransportFailure('injected failure')
        handlers = {
            PromptTask.DECIDE.value: self._decide,
            PromptTask.RENAME.value: self._rename,
            PromptTask.STRUCTS.value: self._structs,
            PromptTask.ANNOTATE.value: self._annotate,
            PromptTask.CLASSIFY.value: self._classify,
            PromptTask.SUMMARIZE.value: self._summarize,
        }
        handler = handlers.get(task)
        if handler is None:
            return 'I can not help with this request.'
        return handler(code, user)

    def _decide(self, code: str, user: str) -> str:
        actions, reasons = [], []
        if propose_renames(code):
            actions.append(OptimizationAction.RENAME_VARIABLES.value)
            reasons.append('generic identifiers present')
        if propose_structs(code):
            actions.append(OptimizationAction.RECOVER_STRUCTS.value)
            reasons.append('fixed offset accesses on a base pointer')
        if code.strip():
            actions.append(OptimizationAction.ANNOTATE_VULNERABILITIES.value)
            reasons.append('annotate potential weaknesses')
        return _fenced(f'ACTIONS: {", ".join(actions)}\nRATIONALE: {"; ".join(reasons)}')

    def _rename(self, code: str, user: str) -> str:
        return _fenced('\n'.join(f'{old} -> {new}' for old, new in propose_renames(code).items()))

    def _structs(self, code: str, user: str) -> str:
        return _fenced('\n\n'.join(propose_structs(code)))

    def _annotate(self, code: str, user: str) -> str:
        lines = []
        calls = _external_calls(code)
        if calls:
            lines.append(f'1 | - | functionality: calls {", ".join(calls)}')
        for f in find_weaknesses(code):
            lines.append(f'{f.line} | {f.cwe_id} | {f.note}')
        return _fenced('\n'.join(lines))

    def _classify(self, code: str, user: str) -> str:
        idx = user.find(QUESTION_SECTION_MARKER)
        asked = list(dict.fromkeys(_CWE.findall(user[idx:] if idx >= 0 else '')))
        findings = find_weaknesses(code)
        calls = _external_calls(code)
        functionality = f'calls {", ".join(calls)}' if calls else 'performs arithmetic and memory operations only'
        blocks = []
        for cwe in asked:
            hit = next((f for f in findings if f.cwe_id == cwe), None)
            if hit is not None:
                reason = f'functionality: {functionality}; root cause: {hit.note} (line {hit.line}); impact: {_IMPACT.get(cwe, "weakness")}'
                blocks.append(f'CWE: {cwe}\nANSWER: yes\nREASON: {reason}')
            else:
                blocks.append(f'CWE: {cwe}\nANSWER: no\nREASON: functionality: {functionality}; root cause: no {cwe} pattern found; '
                              f'impact: none')
        return _fenced('\n\n'.join(blocks))

    def _summarize(self, code: str, user: str) -> str:
        m = _NAME_LINE.search(user)
        name = m.group(1) if m is not None else 'function'
        calls = _external_calls(code)
        idx = user.find(VERDICT_SECTION_MARKER)
        flagged = [cwe for cwe, verdict in _VERDICT_LINE.findall(user[idx:]) if verdict == 'yes'] if idx >= 0 else []
        text = f'{name} calls {", ".join(calls)}.' if calls else f'{name} makes no calls.'
        if flagged:
            return f'{text} Flagged {", ".join(sorted(flagged, key=cwe_sort_key))}.'
        return f'{text} No weaknesses flagged.'
