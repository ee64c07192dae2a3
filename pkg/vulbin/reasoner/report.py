#  Copyright (c) 2024. VulBin Authors
"""
Binary Report
-------------

Aggregates the verdicts of all functions of one artifact into the per CWE binary verdict:

* :code:`yes` if at least one function was flagged,
* :code:`incomplete` if none was flagged but at least one function failed, has an invalid verdict
  or has no verdict for the CWE although it is done,
* :code:`no` otherwise.

The report is written as :code:`report.json` (sorted keys, no timestamps) and :code:`report.md`. Two runs over the
same store state and configuration produce byte identical files.

*******************
Class Documentation
*******************
"""
import json
import os
from typing import Sequence, Optional, Dict, List

from vulbin.helper import cwe_sort_key
from vulbin.memory.queue import coverage_of
from vulbin.memory.store import ArchivalStore
from vulbin.object.analysis import BinaryReport, FunctionReportRow
from vulbin.object.binary import BinaryArtifact
from vulbin.type import QueueState, Verdict, BinaryVerdict, QueueNotTerminal

__all__ = ['aggregate', 'render_markdown', 'write_report']


def aggregate(store: ArchivalStore,
              artifact: BinaryArtifact,
              target_cwes: Sequence[str],
              config_fingerprint: str,
              seed: int = 0,
              model_tag: str = '',
              mock_rule_table_version: Optional[str] = None) -> BinaryReport:
    """Builds the report of one artifact from the store alone.

    :param store: the archival store
    :param artifact: the analyzed artifact
    :param target_cwes: the classified CWEs
    :param config_fingerprint: fingerprint of the run configuration
    :param seed: the run seed |default| :code:`0`
    :param model_tag: the model used |default| :code:`''`
    :param mock_rule_table_version: rule table version if the mock backend was used |default| :code:`None`
    :raises ~vulbin.type.QueueNotTerminal: if a function of the artifact is still pending or in flight
    """
    entries = store.load_entries(artifact.content_hash)
    open_entries = [e.function_id for e in entries if e.state in (QueueState.PENDING, QueueState.IN_FLIGHT)]
    if open_entries:
        raise QueueNotTerminal(f'{len(open_entries)} functions of {artifact.short_hash} are not analyzed yet, '
                               f'first is {open_entries[0]}')
    targets = sorted(set(target_cwes), key=cwe_sort_key)
    flagged = {c: False for c in targets}
    unsure = {c: False for c in targets}
    rows: List[FunctionReportRow] = []
    for entry in sorted(entries, key=lambda e: (store.entry_address(e.function_id), e.function_id)):
        verdicts: Dict[str, Verdict] = {}
        stored = store.get_verdicts(entry.function_id)
        for cwe in targets:
            if cwe in stored:
                verdicts[cwe] = stored[cwe].verdict
                if stored[cwe].verdict == Verdict.YES:
                    flagged[cwe] = True
                elif stored[cwe].verdict == Verdict.INVALID:
                    unsure[cwe] = True
            elif entry.state in (QueueState.FAILED, QueueState.DONE):
                # failed, or done before this CWE was a target
                unsure[cwe] = True
        rows.append(FunctionReportRow(function_id=entry.function_id,
                                      entry_address=f'{store.entry_address(entry.function_id):#x}',
                                      state=entry.state,
                                      verdicts=verdicts,
                                      last_error=entry.last_error if entry.state == QueueState.FAILED else None))
    cwe_verdicts = {}
    for cwe in targets:
        if flagged[cwe]:
            cwe_verdicts[cwe] = BinaryVerdict.YES
        elif unsure[cwe]:
            cwe_verdicts[cwe] = BinaryVerdict.INCOMPLETE
        else:
            cwe_verdicts[cwe] = BinaryVerdict.NO
    return BinaryReport(artifact_hash=artifact.content_hash,
                        binary_name=os.path.basename(artifact.path),
                        stripped=artifact.stripped,
                        cwe_verdicts=cwe_verdicts,
                        functions=rows,
                        coverage=dict(coverage_of(entries)),
                        config_fingerprint=config_fingerprint,
                        seed=seed,
                        model_tag=model_tag,
                        mock_rule_table_version=mock_rule_table_version)


def render_markdown(report: BinaryReport) -> str:
    cwes = sorted(report.cwe_verdicts.keys(), key=cwe_sort_key)
    cov = report.coverage
    lines = [f'# Vulnerability report: {report.binary_name}',
             '',
             f'* artifact: `{report.artifact_hash}`',
             f'* stripped: {"yes" if report.stripped else "no"}',
             f'* model: `{report.model_tag}`' + (f' (rule table v{report.mock_rule_table_version})'
                                                 if report.mock_rule_table_version is not None else ''),
             f'* seed: {report.seed}',
             f'* config fingerprint: `{report.config_fingerprint}`',
             '',
             '## Binary verdicts',
             '',
             '| CWE | verdict |',
             '|-----|---------|']
    lines.extend(f'| {c} | {report.cwe_verdicts[c].value} |' for c in cwes)
    lines.extend(['',
                  '## Coverage',
                  '',
                  f'{cov.get("done", 0)} done, {cov.get("failed", 0)} failed, {cov.get("skipped", 0)} skipped '
                  f'of {cov.get("total", 0)} functions',
                  ''])
    if cov.get('failed_functions'):
        lines.extend(['### Failed functions', ''])
        lines.extend(f'* `{f["function_id"]}` after {f["attempts"]} attempts: {f["reason"]}' for f in cov['failed_functions'])
        lines.append('')
    lines.extend(['## Functions',
                  '',
                  '| address | state | ' + ' | '.join(cwes) + ' |',
                  '|---------|-------|' + '|'.join('-' * (len(c) + 2) for c in cwes) + '|'])
    for row in report.functions:
        cells = [row.verdicts[c].value if c in row.verdicts else '-' for c in cwes]
        lines.append(f'| {row.entry_address} | {row.state.value} | ' + ' | '.join(cells) + ' |')
    return '\n'.join(lines) + '\n'


def write_report(output_dir: str, report: BinaryReport):
    """Writes :code:`report.json` and :code:`report.md` into the output directory"""
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, 'report.json'), 'w', encoding='utf-8', newline='\n') as f:
        json.dump(report.to_dict(include_none_values=True), f, indent=2, sort_keys=True)
        f.write('\n')
    with open(os.path.join(output_dir, 'report.md'), 'w', encoding='utf-8', newline='\n') as f:
        f.write(render_markdown(report))
