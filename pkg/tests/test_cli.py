#  Copyright (c) 2024. VulBin Authors
import json
import os

import pytest

from vulbin.cli import main, EXIT_OK, EXIT_ERROR, EXIT_FAILED_FUNCTIONS
from vulbin.config import DEFAULT_KB_DIR
from tests.util import build_elf, write_fixture_dir

MAIN = 'int main(int param_1,char **param_2)\n\n{\n  FUN_00401100(param_2[1]);\n  return 0;\n}\n'


def _sink(*statements: str) -> str:
    body = ''.join(f'  {s}\n' for s in statements)
    return f'void FUN_00401100(char *param_1)\n\n{{\n{body}  return;\n}}\n'


def _write_config(tmp_path, fixture_dir: str, name: str = 'vulbin.json', **extra) -> str:
    path = tmp_path / name
    path.write_text(json.dumps({'decompiler': {'kind': 'fixture', 'fixture_dir': fixture_dir}, 'llm': {'backend': 'mock'}, **extra}),
                    encoding='utf-8')
    return str(path)


def _case(root, name: str, sink: str):
    write_fixture_dir(os.path.join(root, name), {0x401000: MAIN, 0x401100: sink}, edges=[(0x401000, 0x401100)],
                      names={0x401000: 'main'})


def test_analyze_prints_verdicts(config_file, sample_binary, tmp_path, capsys):
    out = tmp_path / 'run'
    assert main(['analyze', sample_binary, '--config', config_file, '--output', str(out)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ['CWE-78: yes', 'CWE-134: yes', 'CWE-190: yes', 'CWE-606: yes']
    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    assert report['coverage']['total'] == 20
    assert report['coverage']['skipped'] == 1
    assert report['coverage']['done'] == 19
    assert report['seed'] == 3
    assert report['mock_rule_table_version'] is not None
    assert (out / 'report.md').is_file()
    assert (out / 'archive.sqlite').is_file()
    with open(out / 'run.log', 'r', encoding='utf-8') as f:
        stages = {json.loads(line).get('stage') for line in f}
    assert {'ingest', 'decompile', 'enhance', 'classify', 'aggregate'} <= stages


def test_reports_are_byte_identical(config_file, sample_binary, tmp_path):
    runs = [['--workers', '1'], ['--workers', '4'], ['--workers', '4'], []]
    contents = []
    for i, flags in enumerate(runs):
        out = tmp_path / f'run{i}'
        assert main(['analyze', sample_binary, '--config', config_file, '--output', str(out), *flags]) == EXIT_OK
        contents.append(((out / 'report.json').read_bytes(), (out / 'report.md').read_bytes()))
    assert all(c == contents[0] for c in contents)


def test_seed_changes_the_fingerprint(config_file, sample_binary, tmp_path):
    assert main(['analyze', sample_binary, '--config', config_file, '--output', str(tmp_path / 'a')]) == EXIT_OK
    assert main(['analyze', sample_binary, '--config', config_file, '--output', str(tmp_path / 'b'), '--seed', '4']) == EXIT_OK
    a = json.loads((tmp_path / 'a' / 'report.json').read_text(encoding='utf-8'))
    b = json.loads((tmp_path / 'b' / 'report.json').read_text(encoding='utf-8'))
    assert a['config_fingerprint'] != b['config_fingerprint']
    assert a['cwe_verdicts'] == b['cwe_verdicts']


def test_failed_functions_exit_code(tmp_path, capsys):
    root = tmp_path / 'decompiled'
    _case(str(root), 'faulty', _sink('// INJECT_LLM_FAILURE', 'puts(param_1);'))
    binary = build_elf(str(tmp_path / 'faulty'))
    config = _write_config(tmp_path, str(root), memory={'max_retries': 0})
    out = tmp_path / 'run'
    assert main(['analyze', binary, '--config', config, '--output', str(out)]) == EXIT_FAILED_FUNCTIONS
    captured = capsys.readouterr()
    assert '1 functions failed' in captured.err
    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    assert set(report['cwe_verdicts'].values()) == {'incomplete'}
    assert report['coverage']['failed'] == 1
    assert report['coverage']['done'] == 1


def test_rerun_with_new_targets_classifies_done_functions(tmp_path, capsys):
    root = tmp_path / 'decompiled'
    _case(str(root), 'fmt', _sink('printf(param_1);'))
    binary = build_elf(str(tmp_path / 'fmt'))
    out = tmp_path / 'reused'
    first = _write_config(tmp_path, str(root), name='first.json', reasoner={'target_cwes': ['CWE-78']})
    assert main(['analyze', binary, '--config', first, '--output', str(out)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ['CWE-78: no']
    second = _write_config(tmp_path, str(root), name='second.json', reasoner={'target_cwes': ['CWE-134']})
    assert main(['analyze', binary, '--config', second, '--output', str(out)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ['CWE-134: yes']
    both = _write_config(tmp_path, str(root), name='both.json', reasoner={'target_cwes': ['CWE-78', 'CWE-134']})
    assert main(['analyze', binary, '--config', both, '--output', str(out)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ['CWE-78: no', 'CWE-134: yes']
    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    sink = next(f for f in report['functions'] if f['entry_address'] == '0x401100')
    assert sink['verdicts'] == {'CWE-78': 'no', 'CWE-134': 'yes'}


def test_enhance_writes_functions(config_file, sample_binary, tmp_path, capsys):
    out = tmp_path / 'run'
    assert main(['enhance', sample_binary, '--config', config_file, '--output', str(out)]) == EXIT_OK
    assert capsys.readouterr().out.startswith('19 functions enhanced')
    names = os.listdir(out / 'enhanced')
    assert len([n for n in names if n.endswith('.meta.json')]) == 19
    assert not (out / 'report.json').exists()


def test_eval_corpus(tmp_path, capsys):
    root = tmp_path / 'decompiled'
    corpus = tmp_path / 'corpus'
    (corpus / 'bin').mkdir(parents=True)
    cases = [
        ('CWE78_01', 'CWE-78', 'bad', _sink('system(param_1);')),
        ('CWE78_02', 'CWE-78', 'bad', _sink('popen(param_1,"r");')),
        ('CWE78_01g', 'CWE-78', 'good', _sink('puts(param_1);')),
        ('CWE78_02g', 'CWE-78', 'good', _sink('printf(param_1);')),
        ('CWE134_01', 'CWE-134', 'bad', _sink('printf(param_1);')),
        ('CWE134_02', 'CWE-134', 'bad', _sink('fprintf(stderr,param_1);')),
        ('CWE134_01g', 'CWE-134', 'good', _sink('printf("%s",param_1);')),
        ('CWE134_02g', 'CWE-134', 'good', _sink('system(param_1);', 'puts(param_1);')),
    ]
    lines = ['case_id,binary_path,cwe_id,label']
    for case_id, cwe, label, sink in cases:
        _case(str(root), case_id, sink)
        build_elf(str(corpus / 'bin' / case_id), tag=case_id.encode())
        lines.append(f'{case_id},bin/{case_id},{cwe},{label}')
    manifest = corpus / 'manifest.csv'
    manifest.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    config = _write_config(tmp_path, str(root))
    out = tmp_path / 'eval'

    assert main(['eval', str(corpus), str(manifest), '--config', config, '--output', str(out)]) == EXIT_OK
    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    assert report['missing'] == 0
    assert report['cwes']['total']['counts'] == {'tp': 4, 'fn': 0, 'tn': 4, 'fp': 0, 'missing': 0}
    assert report['cwes']['CWE-78']['counts'] == {'tp': 2, 'fn': 0, 'tn': 2, 'fp': 0, 'missing': 0}
    assert report['cwes']['total']['percent'] == {'accuracy': 100.0, 'precision': 100.0, 'recall': 100.0, 'f1': 100.0}
    assert sorted(os.listdir(out / 'cases')) == sorted(c[0] for c in cases)
    assert 'CWE-134: accuracy 100.00% precision 100.00% F1 100.00%' in capsys.readouterr().out


def test_eval_counts_missing_binaries(tmp_path):
    root = tmp_path / 'decompiled'
    _case(str(root), 'present', _sink('system(param_1);'))
    corpus = tmp_path / 'corpus'
    corpus.mkdir()
    build_elf(str(corpus / 'present'), tag=b'present')
    manifest = corpus / 'manifest.csv'
    manifest.write_text('case_id,binary_path,cwe_id,label\npresent,present,CWE-78,bad\ngone,gone,CWE-78,good\n', encoding='utf-8')
    out = tmp_path / 'eval'
    assert main(['eval', str(corpus), str(manifest), '--config', _write_config(tmp_path, str(root)), '--output', str(out)]) == EXIT_OK
    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    assert report['missing'] == 1
    assert report['cwes']['CWE-78']['counts'] == {'tp': 1, 'fn': 0, 'tn': 0, 'fp': 0, 'missing': 1}


def test_eval_with_empty_manifest(config_file, tmp_path, capsys):
    manifest = tmp_path / 'empty.csv'
    manifest.write_text('case_id,binary_path,cwe_id,label\n', encoding='utf-8')
    assert main(['eval', str(tmp_path), str(manifest), '--config', config_file, '--output', str(tmp_path / 'eval')]) == EXIT_ERROR
    assert 'manifest contains no cases' in capsys.readouterr().err


@pytest.mark.parametrize('args', [
    ['analyze', 'does-not-exist.bin'],
    ['analyze', 'x', '--config', 'missing.json'],
])
def test_input_errors(args, config_file, tmp_path, capsys):
    if '--config' not in args:
        args = args + ['--config', config_file]
    args = args + ['--output', str(tmp_path / 'out')]
    assert main(args) == EXIT_ERROR
    assert 'error: ' in capsys.readouterr().err


def test_unknown_format(config_file, tmp_path):
    script = tmp_path / 'script.sh'
    script.write_text('#!/bin/sh\necho hi\n', encoding='utf-8')
    assert main(['analyze', str(script), '--config', config_file, '--output', str(tmp_path / 'out')]) == EXIT_ERROR


def test_queue_status(config_file, sample_binary, tmp_path, capsys):
    out = tmp_path / 'run'
    assert main(['analyze', sample_binary, '--config', config_file, '--output', str(out)]) == EXIT_OK
    capsys.readouterr()
    assert main(['queue', 'status', str(out / 'archive.sqlite')]) == EXIT_OK
    status = json.loads(capsys.readouterr().out)
    assert status['total']['done'] == 19
    assert status['total']['skipped'] == 1
    assert len(status['artifacts']) == 1
    assert main(['queue', 'status', str(tmp_path / 'nothing.sqlite')]) == EXIT_ERROR


def test_kb_build(tmp_path, capsys):
    assert main(['kb', 'build', DEFAULT_KB_DIR]) == EXIT_OK
    assert capsys.readouterr().out.startswith('8 knowledge documents: CWE-78, CWE-121, CWE-134')
    broken = tmp_path / 'kb'
    broken.mkdir()
    (broken / 'CWE-78.json').write_text('{"cwe_id": "CWE-78"}', encoding='utf-8')
    assert main(['kb', 'build', str(broken)]) == EXIT_ERROR
    assert 'field "name" is missing or empty' in capsys.readouterr().err
