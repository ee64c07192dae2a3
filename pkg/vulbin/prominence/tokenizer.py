#  Copyright (c) 2024. VulBin Authors
"""
Pseudo-Code Tokenizer
---------------------

A small lexer for the C-like pseudo-code decompilers emit. It distinguishes identifiers, keywords, number, string and
character literals, punctuation and comments. Whitespace is not a token, so two texts with the same token stream are
equal up to layout.

.. code-block:: python

    from vulbin.prominence.tokenizer import tokenize

    for token in tokenize('uVar1 = strlen(param_1); // length'):
        print(token.kind, token.text)

*******************
Class Documentation
*******************
"""
import re
from dataclasses import dataclass
from typing import List, Dict, Set, Iterable

from vulbin.type import TokenKind, TokenizeError

__all__ = ['C_KEYWORDS', 'RESERVED_NAMES', 'Token', 'tokenize', 'code_tokens', 'identifiers', 'braces_balanced', 'is_identifier',
           'is_reserved', 'rename_identifiers', 'called_names']

C_KEYWORDS = frozenset({
    'auto', 'break', 'case', 'char', 'const', 'continue', 'default', 'do', 'double', 'else', 'enum', 'extern', 'float', 'for',
    'goto', 'if', 'inline', 'int', 'long', 'register', 'restrict', 'return', 'short', 'signed', 'sizeof', 'static', 'struct',
    'switch', 'typedef', 'union', 'unsigned', 'void', 'volatile', 'while', '_Bool', '_Complex', '_Imaginary', 'bool', 'true',
    'false', '__cdecl', '__stdcall', '__fastcall', '__thiscall', '__int64', '__int32', '__int16', '__int8', '__asm', 'asm'})
"""Keywords of C plus the calling convention and sized integer keywords decompilers print"""

RESERVED_NAMES = C_KEYWORDS | frozenset({
    'NULL', 'undefined', 'undefined1', 'undefined2', 'undefined4', 'undefined8', 'byte', 'word', 'dword', 'qword', 'uint', 'ulong',
    'ushort', 'uchar', 'longlong', 'ulonglong', 'code', 'size_t', 'ssize_t', 'wchar_t', 'int8_t', 'int16_t', 'int32_t', 'int64_t',
    'uint8_t', 'uint16_t', 'uint32_t', 'uint64_t', 'FILE', 'main'})
"""Names that are never renamed: keywords, builtin decompiler types and :code:`main`"""

_OPERATORS = ['>>=', '<<=', '...', '->', '++', '--', '<<', '>>', '<=', '>=', '==', '!=', '&&', '||', '+=', '-=', '*=', '/=', '%=',
              '&=', '^=', '|=', '::']

_TOKEN_PATTERN = re.compile(r'''
    (?P<ws>\s+)
  | (?P<line_comment>//[^\n]*)
  | (?P<block_comment>/\*.*?\*/)
  | (?P<string>L?"(?:\\.|[^"\\\n])*")
  | (?P<char>L?'(?:\\.|[^'\\\n])+')
  | (?P<number>0[xX][0-9a-fA-F]+[uUlL]*|(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?[fFuUlL]*)
  | (?P<identifier>[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<punct>''' + '|'.join(re.escape(o) for o in _OPERATORS) + r'''|\S)
''', re.VERBOSE | re.DOTALL)

_IDENTIFIER = re.compile(r'^[A-Za-z_][A-Za-z0-9_]*$')


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    start: int
    """offset of the first character"""
    end: int
    line: int
    """1-based line of the first character"""


def tokenize(text: str) -> List[Token]:
    """Splits pseudo-code into tokens.

    :param text: the code
    :raises ~vulbin.type.TokenizeError: on unterminated strings, character literals or block comments
    """
    tokens = []
    pos = 0
    line = 1
    length = len(text)
    while pos < length:
        m = _TOKEN_PATTERN.match(text, pos)
        group = m.lastgroup
        value = m.group(group)
        if group == 'punct':
            if value == '"':
                raise TokenizeError(f'unterminated string literal on line {line}')
            if value == "'":
                raise TokenizeError(f'unterminated character literal on line {line}')
            if value == '/' and text.startswith('/*', pos):
                raise TokenizeError(f'unterminated block comment on line {line}')
        if group != 'ws':
            if group in ('line_comment', 'block_comment'):
                kind = TokenKind.COMMENT
            elif group == 'identifier':
                kind = TokenKind.KEYWORD if value in C_KEYWORDS else TokenKind.IDENTIFIER
            else:
                kind = TokenKind(group)
            tokens.append(Token(kind, value, pos, m.end(), line))
        line += value.count('\n')
        pos = m.end()
    return tokens


def code_tokens(text: str) -> List[Token]:
    """all tokens except comments"""
    return [t for t in tokenize(text) if t.kind != TokenKind.COMMENT]


def identifiers(text: str) -> Set[str]:
    """every identifier occurring in the code, comments excluded"""
    return {t.text for t in code_tokens(text) if t.kind == TokenKind.IDENTIFIER}


def braces_balanced(tokens: Iterable[Token]) -> bool:
    """True if braces, brackets and parentheses nest correctly"""
    pairs = {')': '(', ']': '[', '}': '{'}
    stack = []
    for t in tokens:
        if t.kind != TokenKind.PUNCT:
            continue
        if t.text in '([{':
            stack.append(t.text)
        elif t.text in pairs:
            if not stack or stack.pop() != pairs[t.text]:
                return False
    return len(stack) == 0


def is_identifier(name: str) -> bool:
    return bool(_IDENTIFIER.match(name)) and name not in C_KEYWORDS


def is_reserved(name: str) -> bool:
    return name in RESERVED_NAMES


def called_names(tokens: List[Token]) -> List[str]:
    """identifiers directly followed by an opening parenthesis, in order of first appearance"""
    seen: Dict[str, None] = {}
    for i, t in enumerate(tokens[:-1]):
        if t.kind == TokenKind.IDENTIFIER and tokens[i + 1].text == '(':
            seen.setdefault(t.text, None)
    return list(seen.keys())


def rename_identifiers(text: str, mapping: Dict[str, str]) -> str:
    """Replaces identifier tokens according to mapping, everything else (comments included) stays byte-identical"""
    if not mapping:
        return text
    out = []
    last = 0
    for t in tokenize(text):
        if t.kind == TokenKind.IDENTIFIER and t.text in mapping:
            out.append(text[last:t.start])
            out.append(mapping[t.text])
            last = t.end
    out.append(text[last:])
    return ''.join(out)
