#  Copyright (c) 2024. VulBin Authors
"""Builders for synthetic executables, decompiler fixture directories and pseudo-code used across the test suite"""
import json
import os
import random
import struct
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from vulbin.helper import make_function_id
from vulbin.llm.base import count_tokens
from vulbin.object.binary import RawFunction

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')
SAMPLE_DIR = os.path.join(FIXTURES, 'decompiled', 'sample')
SAMPLE_HASH = 'ab' * 32

EM_X86_64 = 62
EM_AARCH64 = 183


def _pad(data: bytes, align: int = 8) -> bytes:
    return data + b'\x00' * (-len(data) % align)


def build_elf(path: str,
              symbols: bool = True,
              func_symbols: bool = True,
              machine: int = EM_X86_64,
              tag: bytes = b'') -> str:
    """Writes a minimal little endian ELF64 executable.

    :param symbols: emit :code:`.symtab` and :code:`.strtab`
    :param func_symbols: symbols are STT_FUNC, otherwise STT_OBJECT
    :param tag: extra bytes in :code:`.text`, makes content hashes differ
    """
    text = _pad(b'\x55\x48\x89\xe5\x90\x5d\xc3' + tag + b'\xc3')
    names = [b'.text']
    if symbols:
        names += [b'.symtab', b'.strtab']
    names.append(b'.shstrtab')
    shstrtab = b'\x00'
    name_off = {}
    for n in names:
        name_off[n] = len(shstrtab)
        shstrtab += n + b'\x00'
    strtab = b'\x00main\x00helper\x00'
    sym_type = 2 if func_symbols else 1
    symtab = b'\x00' * 24
    symtab += struct.pack('<IBBHQQ', 1, (1 << 4) | sym_type, 0, 1, 0x401000, 4)
    symtab += struct.pack('<IBBHQQ', 6, (1 << 4) | sym_type, 0, 1, 0x401004, 4)

    blobs: List[Tuple[bytes, bytes]] = [(b'.text', text)]
    if symbols:
        blobs += [(b'.symtab', _pad(symtab)), (b'.strtab', _pad(strtab))]
    blobs.append((b'.shstrtab', _pad(shstrtab)))
    offset = 64
    body = b''
    offsets = {}
    for name, blob in blobs:
        offsets[name] = offset + len(body)
        body += blob
    shoff = offset + len(body)
    index = {name: i + 1 for i, (name, _) in enumerate(blobs)}

    def shdr(name, sh_type, flags, addr, size, link=0, info=0, align=1, entsize=0):
        return struct.pack('<IIQQQQIIQQ', name_off[name], sh_type, flags, addr, offsets[name], size, link, info, align, entsize)

    headers = b'\x00' * 64
    headers += shdr(b'.text', 1, 0x6, 0x401000, len(text), align=16)
    if symbols:
        headers += shdr(b'.symtab', 2, 0, 0, len(symtab), link=index[b'.strtab'], info=1, align=8, entsize=24)
        headers += shdr(b'.strtab', 3, 0, 0, len(strtab))
    headers += shdr(b'.shstrtab', 3, 0, 0, len(shstrtab))
    ident = b'\x7fELF' + bytes([2, 1, 1, 0]) + b'\x00' * 8
    header = ident + struct.pack('<HHIQQQIHHHHHH', 2, machine, 1, 0x401000, 0, shoff, 0, 64, 56, 0, 64,
                                 len(blobs) + 1, index[b'.shstrtab'])
    with open(path, 'wb') as f:
        f.write(header + body + headers)
    return path


def build_macho(path: str, symtab: bool = True, nsyms: int = 4, nlocalsym: Optional[int] = 2,
                cputype: int = 0x01000007) -> str:
    """Writes a 64 bit little endian Mach-O header with optional LC_SYMTAB and LC_DYSYMTAB"""
    commands = b''
    ncmds = 0
    if symtab:
        commands += struct.pack('<6I', 0x2, 24, 0x1000, nsyms, 0x1100, 64)
        ncmds += 1
    if nlocalsym is not None:
        commands += struct.pack('<2I', 0xb, 80) + struct.pack('<2I', 0, nlocalsym) + b'\x00' * 64
        ncmds += 1
    header = struct.pack('<4s7I', b'\xcf\xfa\xed\xfe', cputype, 3, 2, ncmds, len(commands), 0, 0)
    with open(path, 'wb') as f:
        f.write(header + commands)
    return path


def write_fixture_dir(directory: str,
                      functions: Mapping[int, str],
                      edges: Iterable[Sequence[Optional[int]]] = (),
                      names: Optional[Mapping[int, str]] = None,
                      sizes: Optional[Mapping[int, int]] = None) -> str:
    """Writes decompiler output following the output contract: :code:`<hex>.c`, :code:`edges.json` and
    :code:`functions.json`"""
    os.makedirs(directory, exist_ok=True)
    for addr, code in functions.items():
        with open(os.path.join(directory, f'{addr:x}.c'), 'w', encoding='utf-8') as f:
            f.write(code)
    with open(os.path.join(directory, 'edges.json'), 'w', encoding='utf-8') as f:
        json.dump([[f'{a:#x}', f'{b:#x}' if b is not None else None] for a, b in edges], f)
    meta = []
    for addr in sorted(functions):
        entry = {'address': f'{addr:#x}'}
        if names and addr in names:
            entry['name'] = names[addr]
        if sizes and addr in sizes:
            entry['size'] = sizes[addr]
        meta.append(entry)
    with open(os.path.join(directory, 'functions.json'), 'w', encoding='utf-8') as f:
        json.dump(meta, f)
    return directory


def sample_functions() -> Dict[int, str]:
    """the golden fixture functions by entry address, exactly as stored"""
    out = {}
    for name in sorted(os.listdir(SAMPLE_DIR)):
        if name.endswith('.c'):
            with open(os.path.join(SAMPLE_DIR, name), 'r', encoding='utf-8') as f:
                out[int(name[:-2], 16)] = f.read()
    return out


def raw_function(code: str, address: int = 0x401000, name: Optional[str] = None, content_hash: str = SAMPLE_HASH) -> RawFunction:
    return RawFunction(function_id=make_function_id(content_hash, address),
                       synthetic_name=name or f'FUN_{address:08x}',
                       entry_address=address,
                       pseudo_code=code,
                       token_estimate=count_tokens(code))


_STATEMENTS = [
    '{v} = {p} + {n};',
    '{v} = {v} * {n};',
    '{v} = strlen({p});',
    'puts({p});',
    'memset({b},0,{n});',
    'if ({v} < {n}) {{\n    {v} = {v} + 1;\n  }}',
    'for ({i} = 0; {i} < {p}; {i} = {i} + 1) {{\n    {v} = {v} + {i};\n  }}',
    'while ({v} != 0) {{\n    {v} = {v} >> 1;\n  }}',
    '{v} = FUN_{callee:08x}({p});',
    '{v} = *(int *)({q} + {off});',
    '*(int *)({q} + {off}) = {v};',
    'strcpy({b},"{word}");',
    'printf("%d\\n",{v});',
]
_WORDS = ['alpha', 'beta', 'gamma', 'delta', 'value', 'input', 'name']


def generated_functions(count: int, seed: int = 7) -> List[Tuple[int, str]]:
    """Ghidra style functions with generic names, deterministic for a seed"""
    rnd = random.Random(seed)
    out = []
    for k in range(count):
        address = 0x402000 + 0x40 * k
        v = rnd.choice(['iVar1', 'uVar2', 'local_c', 'local_14', 'lVar3'])
        i = rnd.choice(['local_10', 'local_18', 'iVar4'])
        p = rnd.choice(['param_1', 'param_2'])
        q = 'param_3'
        b = rnd.choice(['local_48', 'auStack_58', 'acStack_108'])
        lines = [f'int FUN_{address:08x}(int param_1,int param_2,long param_3)', '', '{',
                 f'  int {v};', f'  int {i};', f'  char {b} [64];', '  ']
        for _ in range(rnd.randint(2, 7)):
            stmt = rnd.choice(_STATEMENTS).format(v=v, i=i, p=p, q=q, b=b, n=rnd.randint(1, 255), off=rnd.choice([4, 8, 0x10]),
                                                 callee=0x402000 + 0x40 * rnd.randint(0, count - 1), word=rnd.choice(_WORDS))
            lines.append('  ' + stmt)
        lines.append(f'  return {v};')
        lines.append('}')
        out.append((address, '\n'.join(lines) + '\n'))
    return out
