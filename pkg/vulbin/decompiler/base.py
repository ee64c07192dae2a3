#  Copyright (c) 2024. VulBin Authors
"""
Base Decompiler Backend
-----------------------

.. note:: This is the base class used for all decompiler backends.

  See :doc:`vulbin.decompiler` for a list of all available backends.

Output contract
===============

Every backend ends up with a directory that holds

* one pseudo-code file per function, named :code:`<hex_address>.c` (with or without :code:`0x` prefix), UTF-8
* :code:`edges.json`, a list of :code:`[caller_hex, callee_hex]` pairs; a :code:`null` callee marks an indirect call
  whose target could not be resolved
* optionally :code:`functions.json`, a list of :code:`{"address": "0x401130", "name": "FUN_00401130", "size": 64,
  "file": "main.pseudo.c"}` objects; every key except :code:`address` is optional

*******************
Class Documentation
*******************
"""
import json
import os
import re
from abc import ABC, abstractmethod
from logging import getLogger, Logger
from typing import List, Tuple, Dict, Optional, Union

from vulbin.helper import MIN_FUNCTION_SIZE, make_function_id
from vulbin.llm.base import count_tokens
from vulbin.object.binary import BinaryArtifact, RawFunction, CallGraph
from vulbin.type import BinaryFormat, FunctionStatus, EmptyOutput, UnsupportedFormat

__all__ = ['DecompilerBackend', 'normalize_pseudo_code', 'read_output_dir']

_BANNER_LINE = re.compile(r'^\s*//')
_BLOCK_START = re.compile(r'^\s*/\*')
_HEX_STEM = re.compile(r'^(?:0[xX])?([0-9a-fA-F]+)$')


def normalize_pseudo_code(text: str) -> str:
    """Normalizes backend output for the tokenizer.

    Line endings become LF, tabs are expanded to 4 spaces, trailing whitespace and trailing blank lines are removed and
    the leading banner (comment lines and comment blocks before the first line of code) is stripped. The function is
    idempotent.

    :param text: raw backend output
    """
    text = text.replace('\r\n', '\n').replace('\r', '\n').expandtabs(4)
    ends_with_newline = text.endswith('\n')
    lines = [line.rstrip() for line in text.split('\n')]
    i = 0
    while i < len(lines):
        line = lines[i]
        if line == '' or _BANNER_LINE.match(line):
            i += 1
            continue
        if _BLOCK_START.match(line):
            j = i
            while j < len(lines) and '*/' not in lines[j]:
                j += 1
            if j == len(lines) or not lines[j].endswith('*/'):
                break
            i = j + 1
            continue
        break
    lines = lines[i:]
    while lines and lines[-1] == '':
        lines.pop()
    result = '\n'.join(lines)
    if ends_with_newline and result:
        result += '\n'
    return result


def _parse_address(value: Union[str, int, None]) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, int):
        return value
    m = _HEX_STEM.match(str(value).strip())
    return int(m.group(1), 16) if m is not None else None


def _load_json(path: str, logger: Logger):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        logger.warning(f'could not read {path}: {e}')
        return None


def read_output_dir(artifact: BinaryArtifact, directory: str, logger: Optional[Logger] = None) -> Tuple[List[RawFunction], CallGraph]:
    """Builds functions and call graph from a directory following the output contract.

    :param artifact: the artifact the output belongs to
    :param directory: the output directory
    :param logger: logger for contract violations |default| :code:`vulbin.decompiler`
    :raises ~vulbin.type.EmptyOutput: if the directory holds no function
    """
    logger = logger if logger is not None else getLogger('vulbin.decompiler')
    meta: Dict[int, dict] = {}
    functions_json = os.path.join(directory, 'functions.json')
    if os.path.isfile(functions_json):
        for entry in _load_json(functions_json, logger) or []:
            addr = _parse_address(entry.get('address')) if isinstance(entry, dict) else None
            if addr is None:
                logger.warning(f'ignoring functions.json entry without valid address: {entry!r}')
                continue
            if addr in meta:
                logger.warning(f'ignoring duplicate functions.json entry for {addr:#x}')
                continue
            meta[addr] = entry
    files: Dict[int, str] = {}
    for addr, entry in meta.items():
        if entry.get('file'):
            files[addr] = os.path.join(directory, entry['file'])
    if os.path.isdir(directory):
        for name in sorted(os.listdir(directory)):
            if not name.endswith('.c'):
                continue
            addr = _parse_address(name[:-2])
            if addr is None:
                continue
            files.setdefault(addr, os.path.join(directory, name))
    functions: Dict[int, RawFunction] = {}
    for addr in sorted(set(files.keys()) | set(meta.keys())):
        path = files.get(addr)
        code = ''
        if path is not None and os.path.isfile(path):
            with open(path, 'r', encoding='utf-8', errors='replace') as f:
                code = normalize_pseudo_code(f.read())
        entry = meta.get(addr, {})
        size = entry.get('size')
        status = FunctionStatus.OK
        if code.strip() == '' or (size is not None and size < MIN_FUNCTION_SIZE):
            status = FunctionStatus.SKIPPED
        functions[addr] = RawFunction(function_id=make_function_id(artifact.content_hash, addr),
                                      synthetic_name=entry.get('name') or f'FUN_{addr:08x}',
                                      entry_address=addr,
                                      pseudo_code=code,
                                      token_estimate=count_tokens(code),
                                      status=status,
                                      size_bytes=size)
    if len(functions) == 0:
        raise EmptyOutput(f'decompiler output for {artifact.path} contains no function')
    graph = CallGraph(nodes=[f.function_id for f in functions.values()])
    edges_json = os.path.join(directory, 'edges.json')
    edges = _load_json(edges_json, logger) if os.path.isfile(edges_json) else None
    if edges is None:
        logger.warning(f'no usable edges.json in {directory}, call graph has no edges')
        edges = []
    for pair in edges:
        if not isinstance(pair, list) or len(pair) != 2:
            logger.warning(f'ignoring malformed edge {pair!r}')
            continue
        caller = _parse_address(pair[0])
        callee = _parse_address(pair[1])
        if caller not in functions:
            logger.warning(f'ignoring edge from unknown function {pair[0]!r}')
            continue
        fn = functions[caller]
        if callee is None:
            fn.unresolved_calls += 1
        elif callee not in functions:
            if callee not in fn.external_callees:
                fn.external_callees.append(callee)
        else:
            if callee not in fn.callee_addresses:
                fn.callee_addresses.append(callee)
            graph.add_edge(fn.function_id, functions[callee].function_id)
    for fn in functions.values():
        fn.callee_addresses.sort()
        fn.external_callees.sort()
    return list(functions.values()), graph


class DecompilerBackend(ABC):
    """Turns an artifact into per function pseudo-code and a call graph"""

    supported_formats = (BinaryFormat.ELF, BinaryFormat.PE, BinaryFormat.MACHO)
    """formats this backend accepts"""

    def __init__(self):
        self.logger: Logger = getLogger('vulbin.decompiler')
        """The logger used for decompiler related log messages"""

    def check_supported(self, artifact: BinaryArtifact):
        """:raises ~vulbin.type.UnsupportedFormat: if the artifact format is not supported by this backend"""
        if artifact.format not in self.supported_formats:
            raise UnsupportedFormat(f'{type(self).__name__} can not decompile format {artifact.format.value}')

    @abstractmethod
    async def decompile(self, artifact: BinaryArtifact) -> Tuple[List[RawFunction], CallGraph]:
        """Decompiles the artifact.

        :param artifact: a loaded artifact
        :raises ~vulbin.type.UnsupportedFormat: if the format is not supported
        :raises ~vulbin.type.BackendLaunchFailure: if the backend could not run
        :raises ~vulbin.type.BackendTimeout: if the backend did not finish in time
        :raises ~vulbin.type.EmptyOutput: if no function was found
        """
        pass
