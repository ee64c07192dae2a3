#  Copyright (c) 2024. VulBin Authors
"""
Binary Ingest
-------------

Loads an executable, identifies its container format from the magic bytes, reads the architecture from the container
header and decides whether the file is stripped.

.. code-block:: python

    from vulbin.ingest import load_binary

    artifact = load_binary('CWE78_OS_Command_Injection__char_console_system_01.bin')
    print(artifact.format, artifact.arch, artifact.stripped)

Strippedness rules
==================

.. list-table::
   :header-rows: 1

   * - Format
     - Stripped when
   * - ELF
     - there is no :code:`SHT_SYMTAB` section or it holds no :code:`STT_FUNC` symbol
   * - PE
     - the COFF symbol table is empty and there is no debug directory
   * - Mach-O
     - there is no :code:`LC_SYMTAB`, or it lists no local symbols
       (:code:`LC_DYSYMTAB.nlocalsym = 0` when present, :code:`nsyms = 0` otherwise)

*******************
Class Documentation
*******************
"""
import io
import os
import struct
from logging import getLogger, Logger
from typing import Tuple, List, Optional

import pefile
from elftools.elf.elffile import ELFFile
from elftools.elf.sections import SymbolTableSection

from vulbin.helper import sha256_hex
from vulbin.object.binary import BinaryArtifact
from vulbin.type import BinaryFormat, Architecture, FileNotReadable, UnknownFormat, UnsupportedFormat

__all__ = ['load_binary', 'detect_stripped', 'detect_format']

logger: Logger = getLogger('vulbin.ingest')

MAGIC_ELF = b'\x7fELF'
MAGIC_PE = b'MZ'
MAGIC_MACHO = {
    b'\xfe\xed\xfa\xce': ('>', 32),
    b'\xce\xfa\xed\xfe': ('<', 32),
    b'\xfe\xed\xfa\xcf': ('>', 64),
    b'\xcf\xfa\xed\xfe': ('<', 64),
}
MAGIC_MACHO_FAT = b'\xca\xfe\xba\xbe'

_ELF_MACHINES = {
    'EM_386': Architecture.X86,
    'EM_X86_64': Architecture.X86_64,
    'EM_ARM': Architecture.ARM,
    'EM_AARCH64': Architecture.AARCH64,
}
_PE_MACHINES = {
    0x14c: Architecture.X86,
    0x8664: Architecture.X86_64,
    0x1c0: Architecture.ARM,
    0x1c4: Architecture.ARM,
    0xaa64: Architecture.AARCH64,
}
_MACHO_CPUS = {
    7: Architecture.X86,
    0x01000007: Architecture.X86_64,
    12: Architecture.ARM,
    0x0100000c: Architecture.AARCH64,
}
LC_SYMTAB = 0x2
LC_DYSYMTAB = 0xb


def detect_format(data: bytes) -> BinaryFormat:
    """Container format from the leading magic bytes"""
    if data[:4] == MAGIC_ELF:
        return BinaryFormat.ELF
    if data[:2] == MAGIC_PE:
        return BinaryFormat.PE
    if data[:4] in MAGIC_MACHO or data[:4] == MAGIC_MACHO_FAT:
        return BinaryFormat.MACHO
    return BinaryFormat.UNKNOWN


def _read(path: str) -> bytes:
    if not os.path.isfile(path):
        raise FileNotReadable(f'{path} is not a regular file')
    try:
        with open(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise FileNotReadable(f'could not read {path}: {e}') from e


# ELF

def _elf_arch(elf: ELFFile) -> Tuple[Architecture, str]:
    machine = elf['e_machine']
    return _ELF_MACHINES.get(machine, Architecture.OTHER), str(machine)


def _elf_stripped(elf: ELFFile) -> bool:
    for section in elf.iter_sections():
        if section['sh_type'] != 'SHT_SYMTAB' or not isinstance(section, SymbolTableSection):
            continue
        if section['sh_entsize'] == 0:
            continue
        for symbol in section.iter_symbols():
            if symbol['st_info']['type'] == 'STT_FUNC':
                return False
    return True


def _elf_imports(elf: ELFFile) -> List[str]:
    section = elf.get_section_by_name('.dynsym')
    if section is None or not isinstance(section, SymbolTableSection):
        return []
    names = set()
    for symbol in section.iter_symbols():
        if symbol['st_shndx'] == 'SHN_UNDEF' and symbol['st_info']['type'] == 'STT_FUNC' and symbol.name:
            names.add(symbol.name)
    return sorted(names)


def _inspect_elf(data: bytes) -> Tuple[Architecture, str, bool, List[str]]:
    elf = ELFFile(io.BytesIO(data))
    arch, label = _elf_arch(elf)
    return arch, label, _elf_stripped(elf), _elf_imports(elf)


# PE

def _inspect_pe(data: bytes) -> Tuple[Architecture, str, bool, List[str]]:
    pe = pefile.PE(data=data, fast_load=True)
    try:
        machine = pe.FILE_HEADER.Machine
        pe.parse_data_directories(directories=[pefile.DIRECTORY_ENTRY['IMAGE_DIRECTORY_ENTRY_IMPORT'],
                                               pefile.DIRECTORY_ENTRY['IMAGE_DIRECTORY_ENTRY_DEBUG']])
        has_debug = len(getattr(pe, 'DIRECTORY_ENTRY_DEBUG', [])) > 0
        stripped = pe.FILE_HEADER.NumberOfSymbols == 0 and not has_debug
        imports = set()
        for entry in getattr(pe, 'DIRECTORY_ENTRY_IMPORT', []):
            for imp in entry.imports:
                if imp.name is not None:
                    imports.add(imp.name.decode('utf-8', errors='replace'))
        return _PE_MACHINES.get(machine, Architecture.OTHER), f'{machine:#x}', stripped, sorted(imports)
    finally:
        pe.close()


# Mach-O

def _inspect_macho(data: bytes) -> Tuple[Architecture, str, bool, List[str]]:
    magic = data[:4]
    if magic == MAGIC_MACHO_FAT:
        raise ValueError('universal Mach-O binaries are not parsed')
    endian, bits = MAGIC_MACHO[magic]
    header_size = 32 if bits == 64 else 28
    if len(data) < header_size:
        raise ValueError('truncated Mach-O header')
    _, cputype, _, _, ncmds, _, _ = struct.unpack(f'{endian}7I', data[:28])
    symtab_nsyms: Optional[int] = None
    nlocalsym: Optional[int] = None
    offset = header_size
    for _ in range(ncmds):
        if offset + 8 > len(data):
            raise ValueError('truncated Mach-O load command')
        cmd, cmdsize = struct.unpack(f'{endian}2I', data[offset:offset + 8])
        if cmd == LC_SYMTAB:
            _, nsyms, _, _ = struct.unpack(f'{endian}4I', data[offset + 8:offset + 24])
            symtab_nsyms = nsyms
        elif cmd == LC_DYSYMTAB:
            _, nlocal = struct.unpack(f'{endian}2I', data[offset + 8:offset + 16])
            nlocalsym = nlocal
        if cmdsize < 8:
            raise ValueError('invalid Mach-O load command size')
        offset += cmdsize
    if symtab_nsyms is None:
        stripped = True
    elif nlocalsym is not None:
        stripped = nlocalsym == 0
    else:
        stripped = symtab_nsyms == 0
    return _MACHO_CPUS.get(cputype, Architecture.OTHER), f'{cputype:#x}', stripped, []


_INSPECTORS = {
    BinaryFormat.ELF: _inspect_elf,
    BinaryFormat.PE: _inspect_pe,
    BinaryFormat.MACHO: _inspect_macho,
}


def load_binary(path: str) -> BinaryArtifact:
    """Loads an executable file.

    A file whose header matches a supported magic but can not be parsed is still loaded: its architecture is
    :code:`other("unparsed")`, it counts as stripped and :code:`header_error` explains the problem.

    :param path: path to the executable
    :raises ~vulbin.type.FileNotReadable: if the path is not a readable regular file
    :raises ~vulbin.type.UnknownFormat: if the magic bytes match no supported container format,
        the exception carries the loaded artifact
    """
    data = _read(path)
    fmt = detect_format(data)
    artifact = BinaryArtifact(path=path,
                              format=fmt,
                              arch=Architecture.OTHER,
                              arch_label='unknown',
                              stripped=False,
                              content_hash=sha256_hex(data),
                              size_bytes=len(data))
    if fmt == BinaryFormat.UNKNOWN:
        artifact.header_error = 'unknown format'
        raise UnknownFormat(f'{path}: magic bytes match no supported container format', artifact)
    try:
        artifact.arch, artifact.arch_label, artifact.stripped, artifact.imports = _INSPECTORS[fmt](data)
    except Exception as e:
        logger.warning(f'could not parse {fmt.value} header of {path}: {e}')
        artifact.arch_label = 'unparsed'
        artifact.stripped = True
        artifact.header_error = str(e)
    logger.debug(f'loaded {path}: {fmt.value} {artifact.arch.value} stripped={artifact.stripped} hash={artifact.short_hash}')
    return artifact


def detect_stripped(artifact: BinaryArtifact) -> bool:
    """Decides from the file content whether the artifact carries function symbols.

    See the table above for the rule applied per format.

    :param artifact: a loaded artifact
    :raises ~vulbin.type.UnsupportedFormat: if the format is Unknown
    :raises ~vulbin.type.FileNotReadable: if the file can no longer be read
    """
    if artifact.format not in _INSPECTORS:
        raise UnsupportedFormat(f'can not decide strippedness for format {artifact.format.value}')
    data = _read(artifact.path)
    try:
        return _INSPECTORS[artifact.format](data)[2]
    except Exception as e:
        logger.warning(f'could not parse header of {artifact.path}, treating as stripped: {e}')
        return True
