#  Copyright (c) 2024. VulBin Authors
import json
from datetime import datetime

import pytest

from vulbin.helper import make_function_id
from vulbin.memory.store import ArchivalStore
from vulbin.object.analysis import QueueEntry, AnalysisRecord, CweVerdict
from vulbin.object.binary import BinaryArtifact
from vulbin.reasoner.report import aggregate, write_report, render_markdown
from vulbin.type import QueueState, Verdict, BinaryVerdict, QueueNotTerminal, BinaryFormat, Architecture

HASH = '56' * 32
TARGETS = ['CWE-134', 'CWE-78', 'CWE-190']


def _artifact() -> BinaryArtifact:
    return BinaryArtifact(path='/tmp/bin/tool', format=BinaryFormat.ELF, arch=Architecture.X86_64, arch_label='x86_64',
                          stripped=False, content_hash=HASH, size_bytes=1024)


def _store(states) -> ArchivalStore:
    """one function per state at increasing addresses"""
    store = ArchivalStore(':memory:')
    entries = [(QueueEntry(function_id=make_function_id(HASH, 0x10 * (i + 1)), position=i), 0x10 * (i + 1)) for i in range(len(states))]
    store.register(HASH, entries, [])
    for (entry, _), state in zip(entries, states):
        entry.state = state
        if state == QueueState.FAILED:
            entry.attempts = 3
            entry.last_error = 'model failure: down'
        store.update_entry(entry)
    return store


def _finish(store: ArchivalStore, address: int, **verdicts: Verdict):
    fid = make_function_id(HASH, address)
    store.save_record(QueueEntry(function_id=fid, state=QueueState.DONE),
                      AnalysisRecord(function_id=fid, summary='s.', created_at=datetime(2024, 1, 1), model_tag='m'),
                      [CweVerdict(function_id=fid, cwe_id=cwe.replace('_', '-'), verdict=v) for cwe, v in verdicts.items()])


def test_binary_verdicts_follow_precedence():
    store = _store([QueueState.DONE, QueueState.DONE, QueueState.FAILED, QueueState.SKIPPED])
    _finish(store, 0x10, CWE_134=Verdict.NO, CWE_78=Verdict.YES, CWE_190=Verdict.NO)
    _finish(store, 0x20, CWE_134=Verdict.NO, CWE_78=Verdict.NO, CWE_190=Verdict.NO)
    report = aggregate(store, _artifact(), TARGETS, 'fp', seed=4, model_tag='mock-rules-v1', mock_rule_table_version='1')
    assert report.cwe_verdicts == {'CWE-78': BinaryVerdict.YES, 'CWE-134': BinaryVerdict.INCOMPLETE, 'CWE-190': BinaryVerdict.INCOMPLETE}
    assert [r.entry_address for r in report.functions] == ['0x10', '0x20', '0x30', '0x40']
    assert report.functions[2].last_error == 'model failure: down'
    assert report.functions[2].verdicts == {}
    assert report.coverage['total'] == 4
    assert report.coverage['done'] == 2
    assert report.coverage['failed_functions'] == [{'function_id': make_function_id(HASH, 0x30), 'reason': 'model failure: down',
                                                    'attempts': 3}]
    assert report.binary_name == 'tool'


def test_invalid_verdict_makes_cwe_incomplete():
    store = _store([QueueState.DONE, QueueState.SKIPPED])
    _finish(store, 0x10, CWE_134=Verdict.INVALID, CWE_78=Verdict.NO, CWE_190=Verdict.NO)
    report = aggregate(store, _artifact(), TARGETS, 'fp')
    assert report.cwe_verdicts == {'CWE-78': BinaryVerdict.NO, 'CWE-134': BinaryVerdict.INCOMPLETE, 'CWE-190': BinaryVerdict.NO}


def test_done_function_without_verdict_is_incomplete():
    store = _store([QueueState.DONE, QueueState.DONE])
    _finish(store, 0x10, CWE_78=Verdict.NO)
    _finish(store, 0x20, CWE_78=Verdict.NO, CWE_134=Verdict.NO, CWE_190=Verdict.YES)
    report = aggregate(store, _artifact(), TARGETS, 'fp')
    assert report.cwe_verdicts == {'CWE-78': BinaryVerdict.NO, 'CWE-134': BinaryVerdict.INCOMPLETE, 'CWE-190': BinaryVerdict.YES}
    assert report.functions[0].verdicts == {'CWE-78': Verdict.NO}


def test_all_skipped_is_no():
    report = aggregate(_store([QueueState.SKIPPED]), _artifact(), ['CWE-78'], 'fp')
    assert report.cwe_verdicts == {'CWE-78': BinaryVerdict.NO}


@pytest.mark.parametrize('state', [QueueState.PENDING, QueueState.IN_FLIGHT])
def test_open_functions_block_the_report(state):
    with pytest.raises(QueueNotTerminal):
        aggregate(_store([QueueState.DONE, state]), _artifact(), TARGETS, 'fp')


def test_written_report_is_stable(tmp_path):
    store = _store([QueueState.DONE, QueueState.FAILED])
    _finish(store, 0x10, CWE_134=Verdict.YES, CWE_78=Verdict.NO, CWE_190=Verdict.NO)
    first, second = tmp_path / 'a', tmp_path / 'b'
    write_report(str(first), aggregate(store, _artifact(), TARGETS, 'fp'))
    write_report(str(second), aggregate(store, _artifact(), list(reversed(TARGETS)), 'fp'))
    assert (first / 'report.json').read_bytes() == (second / 'report.json').read_bytes()
    assert (first / 'report.md').read_bytes() == (second / 'report.md').read_bytes()
    data = json.loads((first / 'report.json').read_text(encoding='utf-8'))
    assert data['cwe_verdicts'] == {'CWE-78': 'incomplete', 'CWE-134': 'yes', 'CWE-190': 'incomplete'}
    assert data['mock_rule_table_version'] is None
    assert 'created_at' not in (first / 'report.json').read_text(encoding='utf-8')


def test_markdown_lists_failures():
    store = _store([QueueState.DONE, QueueState.FAILED])
    _finish(store, 0x10, CWE_134=Verdict.YES, CWE_78=Verdict.NO, CWE_190=Verdict.NO)
    md = render_markdown(aggregate(store, _artifact(), TARGETS, 'fp'))
    assert '| CWE-134 | yes |' in md
    assert '| 0x10 | done | no | yes | no |' in md
    assert '| 0x20 | failed | - | - | - |' in md
    assert 'after 3 attempts: model failure: down' in md
