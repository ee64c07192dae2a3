#  Copyright (c) 2024. VulBin Authors
import os

import pytest

from vulbin.helper import sha256_hex
from vulbin.ingest import load_binary, detect_stripped, detect_format
from vulbin.type import BinaryFormat, Architecture, FileNotReadable, UnknownFormat, UnsupportedFormat
from tests.util import build_elf, build_macho, EM_AARCH64


def test_detect_format_by_magic():
    assert detect_format(b'\x7fELF\x02\x01') == BinaryFormat.ELF
    assert detect_format(b'MZ\x90\x00') == BinaryFormat.PE
    assert detect_format(b'\xcf\xfa\xed\xfe') == BinaryFormat.MACHO
    assert detect_format(b'\xca\xfe\xba\xbe') == BinaryFormat.MACHO
    assert detect_format(b'#!/bin/sh\n') == BinaryFormat.UNKNOWN
    assert detect_format(b'') == BinaryFormat.UNKNOWN


def test_unstripped_elf(tmp_path):
    path = build_elf(str(tmp_path / 'a.out'))
    artifact = load_binary(path)
    assert artifact.format == BinaryFormat.ELF
    assert artifact.arch == Architecture.X86_64
    assert artifact.arch_label == 'EM_X86_64'
    assert artifact.stripped is False
    assert artifact.header_error is None
    assert artifact.imports == []
    with open(path, 'rb') as f:
        data = f.read()
    assert artifact.content_hash == sha256_hex(data)
    assert artifact.size_bytes == len(data)


def test_same_file_after_symbol_removal_is_stripped(tmp_path):
    before = load_binary(build_elf(str(tmp_path / 'full')))
    after = load_binary(build_elf(str(tmp_path / 'stripped'), symbols=False))
    assert before.stripped is False
    assert after.stripped is True
    assert before.content_hash != after.content_hash


def test_symtab_without_functions_counts_as_stripped(tmp_path):
    artifact = load_binary(build_elf(str(tmp_path / 'objects'), func_symbols=False))
    assert artifact.stripped is True
    assert detect_stripped(artifact) is True


def test_other_elf_architecture(tmp_path):
    artifact = load_binary(build_elf(str(tmp_path / 'arm'), machine=EM_AARCH64))
    assert artifact.arch == Architecture.AARCH64


def test_truncated_elf_header_is_loaded_as_unparsed(tmp_path):
    path = tmp_path / 'broken'
    path.write_bytes(b'\x7fELF\x02\x01\x01' + b'\x00' * 5)
    artifact = load_binary(str(path))
    assert artifact.format == BinaryFormat.ELF
    assert artifact.arch == Architecture.OTHER
    assert artifact.arch_label == 'unparsed'
    assert artifact.stripped is True
    assert artifact.header_error


def test_malformed_pe_is_loaded_as_unparsed(tmp_path):
    path = tmp_path / 'broken.exe'
    path.write_bytes(b'MZ' + b'\x00' * 30)
    artifact = load_binary(str(path))
    assert artifact.format == BinaryFormat.PE
    assert artifact.arch_label == 'unparsed'
    assert artifact.header_error


@pytest.mark.parametrize('symtab, nsyms, nlocalsym, stripped', [
    (True, 4, 2, False),
    (True, 4, 0, True),
    (True, 3, None, False),
    (True, 0, None, True),
    (False, 0, None, True),
])
def test_macho_strippedness(tmp_path, symtab, nsyms, nlocalsym, stripped):
    artifact = load_binary(build_macho(str(tmp_path / 'macho'), symtab=symtab, nsyms=nsyms, nlocalsym=nlocalsym))
    assert artifact.format == BinaryFormat.MACHO
    assert artifact.arch == Architecture.X86_64
    assert artifact.stripped is stripped


def test_unknown_format_carries_artifact(tmp_path):
    path = tmp_path / 'script.sh'
    path.write_bytes(b'#!/bin/sh\necho hi\n')
    with pytest.raises(UnknownFormat) as info:
        load_binary(str(path))
    assert info.value.artifact.format == BinaryFormat.UNKNOWN
    with pytest.raises(UnsupportedFormat):
        detect_stripped(info.value.artifact)


def test_empty_file_is_unknown(tmp_path):
    path = tmp_path / 'empty'
    path.write_bytes(b'')
    with pytest.raises(UnknownFormat):
        load_binary(str(path))


def test_unreadable_paths(tmp_path):
    with pytest.raises(FileNotReadable):
        load_binary(str(tmp_path / 'missing'))
    with pytest.raises(FileNotReadable):
        load_binary(str(tmp_path))


def test_detect_stripped_rereads_file(tmp_path):
    path = build_elf(str(tmp_path / 'bin'))
    artifact = load_binary(path)
    build_elf(path, symbols=False)
    assert detect_stripped(artifact) is True
    os.remove(path)
    with pytest.raises(FileNotReadable):
        detect_stripped(artifact)
