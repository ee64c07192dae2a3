#  Copyright (c) 2024. VulBin Authors
import json
import math
import os

import pytest

from vulbin.evaluation import (load_manifest, score, metrics, assembly_tokens, assembly_similarity, load_baseline, build_eval_report,
                               render_eval_markdown, write_eval_report)
from vulbin.object.evaluation import ConfusionCounts, GroundTruthEntry
from vulbin.type import CaseLabel, BinaryVerdict, ManifestParseError, DuplicateCase, EmptyCounts, EmptyInput
from tests.util import FIXTURES

ASM_DIR = os.path.join(FIXTURES, 'asm')


def _read(name: str) -> str:
    with open(os.path.join(ASM_DIR, name), 'r', encoding='utf-8') as f:
        return f.read()


def _manifest(tmp_path, text: str) -> str:
    path = tmp_path / 'manifest.csv'
    path.write_text(text, encoding='utf-8')
    return str(path)


@pytest.mark.parametrize('counts, expected', [
    (ConfusionCounts(tp=892, fn=68, tn=960, fp=0), {'accuracy': 96.46, 'precision': 100.0, 'f1': 96.33}),
    (ConfusionCounts(tp=1345, fn=0, tn=3998, fp=14), {'accuracy': 99.74, 'precision': 98.97, 'f1': 99.48}),
    (ConfusionCounts(tp=0, fn=0, tn=1, fp=0), {'accuracy': 100.0, 'precision': 0.0, 'f1': 0.0}),
])
def test_metrics(counts, expected):
    pct = metrics(counts).as_percent()
    assert {k: pct[k] for k in expected} == expected


def test_metrics_recall_and_raw_fractions():
    row = metrics(ConfusionCounts(tp=892, fn=68, tn=960, fp=0), 'CWE-78')
    assert row.cwe_id == 'CWE-78'
    assert row.recall == pytest.approx(892 / 960)
    assert row.as_percent()['recall'] == 92.92


def test_metrics_need_counts():
    with pytest.raises(EmptyCounts):
        metrics(ConfusionCounts(missing=3))


def test_load_manifest(tmp_path):
    path = _manifest(tmp_path, 'case_id,binary_path,cwe_id,label\n'
                               'c1,bin/c1_bad,CWE-78,bad\n'
                               '\n'
                               'c1g, bin/c1_good ,CWE-78,GOOD\n'
                               'c1,bin/c1_bad,CWE-134,good\n')
    entries = load_manifest(path)
    assert [(e.case_id, e.binary_path, e.cwe_id, e.label) for e in entries] == [
        ('c1', 'bin/c1_bad', 'CWE-78', CaseLabel.BAD),
        ('c1g', 'bin/c1_good', 'CWE-78', CaseLabel.GOOD),
        ('c1', 'bin/c1_bad', 'CWE-134', CaseLabel.GOOD),
    ]


@pytest.mark.parametrize('text, line_no', [
    ('', 1),
    ('case,binary,cwe,label\nc1,b,CWE-78,bad\n', 1),
    ('case_id,binary_path,cwe_id,label\n', 2),
    ('case_id,binary_path,cwe_id,label\nc1,b,CWE-78,bad\nc2,b,CWE-78\n', 3),
    ('case_id,binary_path,cwe_id,label\nc1,b,CWE78,bad\n', 2),
    ('case_id,binary_path,cwe_id,label\nc1,b,CWE-78,bad\nc2,b,CWE-78,maybe\n', 3),
    ('case_id,binary_path,cwe_id,label\n,b,CWE-78,bad\n', 2),
])
def test_manifest_errors_name_the_line(tmp_path, text, line_no):
    with pytest.raises(ManifestParseError) as e:
        load_manifest(_manifest(tmp_path, text))
    assert e.value.line_no == line_no
    assert str(e.value).startswith(f'line {line_no}: ')


def test_manifest_duplicates(tmp_path):
    path = _manifest(tmp_path, 'case_id,binary_path,cwe_id,label\nc1,b,CWE-78,bad\nc1,b2,CWE-78,good\n')
    with pytest.raises(DuplicateCase):
        load_manifest(path)


def test_score_standard_semantics():
    truth = [GroundTruthEntry(case_id=c, binary_path=c, cwe_id=cwe, label=label) for c, cwe, label in [
        ('a', 'CWE-78', CaseLabel.BAD), ('b', 'CWE-78', CaseLabel.BAD), ('c', 'CWE-78', CaseLabel.GOOD),
        ('d', 'CWE-78', CaseLabel.GOOD), ('e', 'CWE-78', CaseLabel.BAD), ('f', 'CWE-134', CaseLabel.GOOD),
        ('g', 'CWE-134', CaseLabel.BAD)]]
    verdicts = {'a': {'CWE-78': 'yes'}, 'b': {'CWE-78': BinaryVerdict.NO}, 'c': {'CWE-78': True}, 'd': {'CWE-78': 'no'},
                'e': {'CWE-78': BinaryVerdict.INCOMPLETE}, 'f': {'CWE-134': 'no'}}
    counts = score(verdicts, truth)
    assert list(counts) == ['CWE-78', 'CWE-134']
    assert counts['CWE-78'].to_dict() == {'tp': 1, 'fn': 1, 'tn': 1, 'fp': 1, 'missing': 1}
    assert counts['CWE-134'].to_dict() == {'tp': 0, 'fn': 0, 'tn': 1, 'fp': 0, 'missing': 1}


def test_baseline_and_report(tmp_path):
    baseline = tmp_path / 'baseline.json'
    baseline.write_text(json.dumps({'tool': 'taint-tool', 'counts': {'CWE-78': {'tp': 892, 'fn': 68, 'tn': 960, 'fp': 0}}}), encoding='utf-8')
    tool, counts = load_baseline(str(baseline))
    assert tool == 'taint-tool'
    assert counts['CWE-78'].total == 1920
    ours = {'CWE-78': ConfusionCounts(tp=4, tn=4), 'CWE-134': ConfusionCounts(missing=2)}
    split = {'stripped': {'CWE-78': ConfusionCounts(tp=2, tn=2)}, 'unstripped': {}}
    report = build_eval_report(ours, baseline=(tool, counts), by_strippedness=split, config_fingerprint='fp', seed=1)
    assert report['missing'] == 2
    assert report['cwes']['CWE-78']['percent'] == {'accuracy': 100.0, 'precision': 100.0, 'recall': 100.0, 'f1': 100.0}
    assert report['cwes']['CWE-134']['metrics'] is None
    assert report['cwes']['total']['counts'] == {'tp': 4, 'fn': 0, 'tn': 4, 'fp': 0, 'missing': 2}
    assert report['baseline']['cwes']['CWE-78']['percent']['f1'] == 96.33
    assert 'by_strippedness' not in report
    md = render_eval_markdown(report)
    assert '| | CWE-78 vulbin | CWE-78 taint-tool | CWE-134 vulbin | CWE-134 taint-tool | total vulbin | total taint-tool |' in md
    assert '| TP | 4 | 892 | 0 | - | 4 | 892 |' in md
    assert '| F1 | 100.00% | 96.33% | - | - | 100.00% | 96.33% |' in md
    assert '2 cases had no verdict and were not scored.' in md
    write_eval_report(str(tmp_path / 'out'), report)
    with open(tmp_path / 'out' / 'report.json', 'r', encoding='utf-8') as f:
        assert json.load(f) == report


@pytest.mark.parametrize('content', ['{"tool": "x"}', 'not json', '{"counts": {"CWE-78": {"tp": 1}}}'])
def test_invalid_baseline(tmp_path, content):
    path = tmp_path / 'baseline.json'
    path.write_text(content, encoding='utf-8')
    with pytest.raises(ManifestParseError):
        load_baseline(str(path))


def test_assembly_tokens():
    listing = ('0000000000401136 <badSink>:\n'
               '  401136:\t55                   \tpush   %rbp\n'
               '  40113e:\t48 89 7d f8          \tmov    %rdi,-0x8(%rbp)   # spill\n'
               '  401149:\te8 e2 fe ff ff       \tcall   401030 <system@plt>\n'
               'MOV EAX, [EBP+8] ; intel\n')
    assert assembly_tokens(listing) == ['push', '%rbp', 'mov', '%rdi', '-', '0x8', '(', '%rbp', ')', 'call', '401030', 'system@plt',
                                        'mov', 'eax', '[', 'ebp', '+', '8', ']']


def _oracle(a, b):
    vocab = sorted(set(a) | set(b))
    va = [a.count(t) for t in vocab]
    vb = [b.count(t) for t in vocab]
    cosine = sum(x * y for x, y in zip(va, vb)) / (math.sqrt(sum(x * x for x in va)) * math.sqrt(sum(y * y for y in vb)))
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        table[i][0] = i
    for j in range(len(b) + 1):
        table[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = min(table[i - 1][j] + 1, table[i][j - 1] + 1, table[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return cosine, 1 - table[-1][-1] / max(len(a), len(b))


def test_assembly_similarity_matches_oracle():
    a, b = _read('cwe78_bad.txt'), _read('cwe134_bad.txt')
    result = assembly_similarity(a, b)
    cosine, lev = _oracle(assembly_tokens(a), assembly_tokens(b))
    assert result['cosine'] == pytest.approx(cosine)
    assert result['levenshtein_norm'] == pytest.approx(lev)
    assert result['cosine'] >= 0.9
    assert 0.0 < result['levenshtein_norm'] < 1.0
    assert assembly_similarity(b, a) == pytest.approx(result)


def test_assembly_similarity_identical_and_empty():
    a = _read('cwe78_bad.txt')
    assert assembly_similarity(a, a) == {'cosine': 1.0, 'levenshtein_norm': 1.0}
    with pytest.raises(EmptyInput):
        assembly_similarity(a, '0000000000401136 <badSink>:\n# nothing\n')
