#  Copyright (c) 2024. VulBin Authors
"""
Evaluation
----------

Scores binary verdicts against a labeled manifest and computes accuracy, precision, recall and F1 per CWE.

Manifest
========

A CSV file with the header :code:`case_id,binary_path,cwe_id,label`, label is :code:`bad` (vulnerability present) or
:code:`good`. Relative binary paths are resolved against the corpus directory.

.. code-block:: text

    case_id,binary_path,cwe_id,label
    CWE78_01,bin/CWE78_01_bad,CWE-78,bad
    CWE78_01g,bin/CWE78_01_good,CWE-78,good

Scoring
=======

Standard confusion matrix semantics per CWE: bad and flagged is a true positive, bad and clean a false negative, good
and flagged a false positive, good and clean a true negative. Cases without a verdict (missing binary, incomplete
analysis) are counted as :code:`missing` and left out of the four counts.

Metrics are kept as fractions, reports show them as percentages rounded half-up to two decimals.

Baseline
========

Another tool's counts can be shown side by side, the baseline file looks like

.. code-block:: json

    {"tool": "taint-tool", "counts": {"CWE-78": {"tp": 892, "fn": 68, "tn": 960, "fp": 0}}}

*******************
Class Documentation
*******************
"""
import csv
import json
import math
import os
import re
from collections import Counter
from enum import Enum
from logging import getLogger
from typing import List, Dict, Optional, Iterable, Mapping, Tuple, Union

from vulbin.helper import CWE_ID_PATTERN, cwe_sort_key
from vulbin.object.evaluation import GroundTruthEntry, ConfusionCounts, MetricsRow
from vulbin.type import CaseLabel, SimilarityResult, ManifestParseError, DuplicateCase, EmptyCounts, EmptyInput

__all__ = ['MANIFEST_HEADER', 'load_manifest', 'score', 'metrics', 'assembly_tokens', 'assembly_similarity', 'load_baseline',
           'build_eval_report', 'render_eval_markdown', 'write_eval_report']

MANIFEST_HEADER = ['case_id', 'binary_path', 'cwe_id', 'label']
_METRIC_ROWS = ('tp', 'fn', 'tn', 'fp', 'accuracy', 'precision', 'recall', 'f1')

_logger = getLogger('vulbin.eval')

_OBJDUMP_PREFIX = re.compile(r'^\s*[0-9a-f]+:\s+(?:[0-9a-f]{2} )+\s*', re.IGNORECASE)
_SYMBOL_HEADER = re.compile(r'^\s*[0-9a-f]+\s+<[^>]*>:\s*$', re.IGNORECASE)
_ASM_TOKEN = re.compile(r'[%$]?[\w.@]+|[\[\]()+\-*]')


def load_manifest(path: str) -> List[GroundTruthEntry]:
    """Reads and validates a manifest.

    :param path: the CSV file
    :raises ~vulbin.type.ManifestParseError: on a wrong header, a malformed row or if the manifest has no cases
    :raises ~vulbin.type.DuplicateCase: if a (case_id, cwe_id) pair repeats
    """
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            rows = list(csv.reader(f))
    except (OSError, UnicodeDecodeError) as e:
        raise ManifestParseError(f'could not read manifest {path}: {e}', 0) from e
    if not rows:
        raise ManifestParseError('manifest is empty', 1)
    header = [h.strip() for h in rows[0]]
    if header != MANIFEST_HEADER:
        raise ManifestParseError(f'expected header {",".join(MANIFEST_HEADER)}, got {",".join(header)}', 1)
    entries = []
    seen = set()
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestParseError(f'expected {len(MANIFEST_HEADER)} columns, got {len(row)}', line_no)
        case_id, binary_path, cwe_id, label = (c.strip() for c in row)
        if not case_id or not binary_path:
            raise ManifestParseError('case_id and binary_path must not be empty', line_no)
        if not CWE_ID_PATTERN.match(cwe_id):
            raise ManifestParseError(f'invalid CWE id "{cwe_id}"', line_no)
        if label.lower() not in ('bad', 'good'):
            raise ManifestParseError(f'label has to be bad or good, got "{label}"', line_no)
        if (case_id, cwe_id) in seen:
            raise DuplicateCase(f'line {line_no}: duplicate case {case_id} for {cwe_id}')
        seen.add((case_id, cwe_id))
        entries.append(GroundTruthEntry(case_id=case_id, binary_path=binary_path, cwe_id=cwe_id, label=CaseLabel(label.lower())))
    if not entries:
        raise ManifestParseError('manifest contains no cases', 2)
    return entries


def _as_flag(value) -> Optional[bool]:
    if isinstance(value, Enum):
        value = value.value
    if isinstance(value, bool):
        return value
    if value == 'yes':
        return True
    if value == 'no':
        return False
    return None


def score(verdicts: Mapping[str, Mapping[str, Union[str, Enum, bool]]], truth: Iterable[GroundTruthEntry]) -> Dict[str, ConfusionCounts]:
    """Confusion counts per CWE.

    :param verdicts: case id to (CWE id to yes/no), anything else counts as missing
    :param truth: the manifest entries
    """
    counts: Dict[str, ConfusionCounts] = {}
    for entry in truth:
        c = counts.setdefault(entry.cwe_id, ConfusionCounts())
        flag = _as_flag(verdicts.get(entry.case_id, {}).get(entry.cwe_id))
        if flag is None:
            c.missing += 1
        elif entry.label == CaseLabel.BAD:
            if flag:
                c.tp += 1
            else:
                c.fn += 1
        elif flag:
            c.fp += 1
        else:
            c.tn += 1
    return {k: counts[k] for k in sorted(counts, key=cwe_sort_key)}


def metrics(counts: ConfusionCounts, cwe_id: str = 'total') -> MetricsRow:
    """
    :param counts: the confusion counts
    :param cwe_id: label of the row |default| :code:`total`
    :raises ~vulbin.type.EmptyCounts: if all four counts are zero
    """
    if counts.total == 0:
        raise EmptyCounts(f'no scored case for {cwe_id}')
    accuracy = (counts.tp + counts.tn) / counts.total
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp > 0 else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsRow(cwe_id=cwe_id, accuracy=accuracy, precision=precision, recall=recall, f1=f1)


def assembly_tokens(text: str) -> List[str]:
    """Mnemonic and operand tokens of a disassembly listing.

    Address columns and raw instruction bytes of objdump style listings, symbol header lines and :code:`#`/:code:`;`
    comments are dropped, tokens are lower cased."""
    tokens = []
    for line in text.splitlines():
        if _SYMBOL_HEADER.match(line):
            continue
        line = _OBJDUMP_PREFIX.sub('', line)
        line = re.split(r'[#;]', line, maxsplit=1)[0]
        tokens.extend(_ASM_TOKEN.findall(line.lower()))
    return tokens


def _levenshtein(a: List[str], b: List[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def assembly_similarity(a: str, b: str) -> SimilarityResult:
    """Cosine similarity of the token frequency vectors and normalized token level edit similarity of two listings

    :raises ~vulbin.type.EmptyInput: if either listing has no tokens
    """
    ta, tb = assembly_tokens(a), assembly_tokens(b)
    if not ta or not tb:
        raise EmptyInput('assembly similarity needs two non-empty listings')
    ca, cb = Counter(ta), Counter(tb)
    dot = sum(v * cb[k] for k, v in ca.items())
    norm = math.sqrt(sum(v * v for v in ca.values()) * sum(v * v for v in cb.values()))
    cosine = min(1.0, dot / norm)
    lev = 1.0 - _levenshtein(ta, tb) / max(len(ta), len(tb))
    return SimilarityResult(cosine=cosine, levenshtein_norm=lev)


def load_baseline(path: str) -> Tuple[str, Dict[str, ConfusionCounts]]:
    """
    :return: tool name and counts per CWE
    :raises ~vulbin.type.ManifestParseError: if the file is not a valid baseline
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        counts = {cwe: ConfusionCounts(**{k: int(c[k]) for k in ('tp', 'fn', 'tn', 'fp')})
                  for cwe, c in data['counts'].items()}
        return str(data.get('tool', 'baseline')), counts
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as e:
        raise ManifestParseError(f'invalid baseline {path}: {e}', 0) from e


def _row(counts: ConfusionCounts, cwe_id: str) -> dict:
    row = {'counts': counts.to_dict()}
    try:
        m = metrics(counts, cwe_id)
    except EmptyCounts:
        row['metrics'] = None
        row['percent'] = None
    else:
        row['metrics'] = {k: getattr(m, k) for k in ('accuracy', 'precision', 'recall', 'f1')}
        row['percent'] = m.as_percent()
    return row


def _table(counts: Mapping[str, ConfusionCounts]) -> dict:
    rows = {cwe: _row(c, cwe) for cwe, c in counts.items()}
    total = ConfusionCounts()
    for c in counts.values():
        total = total + c
    rows['total'] = _row(total, 'total')
    return rows


def build_eval_report(counts: Mapping[str, ConfusionCounts],
                      tool: str = 'vulbin',
                      baseline: Optional[Tuple[str, Mapping[str, ConfusionCounts]]] = None,
                      by_strippedness: Optional[Mapping[str, Mapping[str, ConfusionCounts]]] = None,
                      config_fingerprint: Optional[str] = None,
                      seed: Optional[int] = None) -> dict:
    """The machine readable evaluation report

    :param counts: counts per CWE of this tool
    :param tool: name of this tool |default| :code:`vulbin`
    :param baseline: name and counts of a baseline tool |default| :code:`None`
    :param by_strippedness: counts per CWE for the keys :code:`stripped` and :code:`unstripped`, only reported if both
        subsets have cases |default| :code:`None`
    """
    report = {'tool': tool, 'cwes': _table(counts), 'missing': sum(c.missing for c in counts.values())}
    if baseline is not None:
        report['baseline'] = {'tool': baseline[0], 'cwes': _table(baseline[1])}
    if by_strippedness is not None and all(by_strippedness.get(k) for k in ('stripped', 'unstripped')):
        report['by_strippedness'] = {k: _table(v) for k, v in by_strippedness.items()}
    if config_fingerprint is not None:
        report['config_fingerprint'] = config_fingerprint
    if seed is not None:
        report['seed'] = seed
    return report


def _cell(row: dict, key: str) -> str:
    if key in ('tp', 'fn', 'tn', 'fp'):
        return str(row['counts'][key])
    if row['percent'] is None:
        return '-'
    return f'{row["percent"][key]:.2f}%'


def render_eval_markdown(report: dict) -> str:
    """Side by side table, one column per CWE and tool, rows as in the confusion counts followed by the metrics"""
    tools = [(report['tool'], report['cwes'])]
    if 'baseline' in report:
        tools.append((report['baseline']['tool'], report['baseline']['cwes']))
    cwes = sorted({c for _, table in tools for c in table if c != 'total'}, key=cwe_sort_key) + ['total']
    columns = [(cwe, name, table.get(cwe)) for cwe in cwes for name, table in tools]
    lines = ['# Evaluation', '',
             '| | ' + ' | '.join(f'{cwe} {name}' for cwe, name, _ in columns) + ' |',
             '|---|' + '|'.join('---' for _ in columns) + '|']
    for key in _METRIC_ROWS:
        label = key.upper() if len(key) == 2 else key.capitalize()
        lines.append(f'| {label} | ' + ' | '.join(_cell(row, key) if row is not None else '-' for _, _, row in columns) + ' |')
    lines.append('')
    if report.get('missing'):
        lines.extend([f'{report["missing"]} cases had no verdict and were not scored.', ''])
    return '\n'.join(lines)


def write_eval_report(output_dir: str, report: dict):
    """Writes :code:`report.json` and :code:`report.md`"""
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, 'report.json'), 'w', encoding='utf-8', newline='\n') as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write('\n')
    with open(os.path.join(output_dir, 'report.md'), 'w', encoding='utf-8', newline='\n') as f:
        f.write(render_eval_markdown(report))
    _logger.info(f'evaluation report written to {output_dir}')
