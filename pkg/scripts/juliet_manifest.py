#  Copyright (c) 2024. VulBin Authors
"""
Builds an evaluation corpus from a Juliet test suite checkout.

Every test case is compiled twice with a user provided compiler command, once with :code:`-DOMITGOOD` (bad variant,
label bad) and once with :code:`-DOMITBAD` (good variant, label good), optionally stripped, and listed in a manifest
CSV that :code:`vulbin eval` reads.

.. code-block:: text

    python scripts/juliet_manifest.py --juliet-dir C/ --cwe 78 --cwe 134 --out-dir corpus/ \\
        --compile "gcc -w -DINCLUDEMAIN {defines} -I{support} {sources} {support}/io.c -o {output}"

Test cases whose name contains one of the :code:`--exclude` patterns are skipped, by default the constant value data
source variants (:code:`_fixed_`, :code:`_max_`, :code:`_min_`).
"""
import argparse
import csv
import logging
import os
import re
import shlex
import subprocess
import sys
from typing import Dict, List, Iterable

DEFAULT_EXCLUDES = ['_fixed_', '_max_', '_min_']
DEFAULT_STRIP = 'strip --strip-all {binary}'
_CASE_FILE = re.compile(r'^(CWE(\d+)_\w+?_\d+)([a-z]?)\.c$')

logger = logging.getLogger('vulbin.scripts.juliet')


def find_cases(juliet_dir: str, cwe_numbers: Iterable[int], excludes: Iterable[str]) -> Dict[str, List[str]]:
    """Source files per test case, multi file cases (:code:`_01a.c`, :code:`_01b.c`) are grouped"""
    wanted = {str(n) for n in cwe_numbers}
    excludes = list(excludes)
    cases: Dict[str, List[str]] = {}
    for root, _, files in os.walk(os.path.join(juliet_dir, 'testcases')):
        for name in sorted(files):
            m = _CASE_FILE.match(name)
            if m is None or m.group(2) not in wanted:
                continue
            if any(pattern in name for pattern in excludes):
                continue
            cases.setdefault(m.group(1), []).append(os.path.join(root, name))
    return {k: sorted(v) for k, v in sorted(cases.items())}


def run(command: str, **fields) -> bool:
    args = [part.format(**fields) for part in shlex.split(command)]
    expanded = []
    for a in args:
        expanded.extend(a.split('\0') if '\0' in a else [a])
    result = subprocess.run(expanded, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    if result.returncode != 0:
        logger.warning(f'{" ".join(expanded[:3])} ... failed: {result.stderr.decode("utf-8", "replace").strip()[:300]}')
        return False
    return True


def build_corpus(juliet_dir: str, cwe_numbers: List[int], out_dir: str, compile_cmd: str, strip_cmd: str, excludes: List[str]) -> List[list]:
    support = os.path.join(juliet_dir, 'testcasesupport')
    bin_dir = os.path.join(out_dir, 'bin')
    os.makedirs(bin_dir, exist_ok=True)
    rows = []
    for case, sources in find_cases(juliet_dir, cwe_numbers, excludes).items():
        cwe_id = 'CWE-' + _CASE_FILE.match(os.path.basename(sources[0])).group(2)
        for label, define in (('bad', '-DOMITGOOD'), ('good', '-DOMITBAD')):
            output = os.path.join(bin_dir, f'{case}_{label}')
            if not run(compile_cmd, defines=define, support=support, sources='\0'.join(sources), output=output):
                continue
            if strip_cmd and not run(strip_cmd, binary=output):
                continue
            rows.append([f'{case}_{label}', os.path.relpath(output, out_dir), cwe_id, label])
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='Compile Juliet test cases and write a vulbin manifest')
    parser.add_argument('--juliet-dir', required=True, help='Juliet C checkout containing testcases/ and testcasesupport/')
    parser.add_argument('--cwe', type=int, action='append', required=True, help='CWE number, repeatable')
    parser.add_argument('--out-dir', required=True, help='corpus directory, the manifest is written as manifest.csv')
    parser.add_argument('--compile', required=True, dest='compile_cmd',
                        help='compiler command with {defines}, {support}, {sources} and {output}')
    parser.add_argument('--strip', default=DEFAULT_STRIP, dest='strip_cmd', help='strip command with {binary}, empty to keep symbols')
    parser.add_argument('--exclude', action='append', help='skip cases whose file name contains this, repeatable')
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format='%(levelname)s %(message)s')
    excludes = args.exclude if args.exclude is not None else DEFAULT_EXCLUDES
    rows = build_corpus(args.juliet_dir, args.cwe, args.out_dir, args.compile_cmd, args.strip_cmd, excludes)
    if not rows:
        logger.error('no test case could be built')
        return 2
    with open(os.path.join(args.out_dir, 'manifest.csv'), 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['case_id', 'binary_path', 'cwe_id', 'label'])
        writer.writerows(rows)
    logger.info(f'{len(rows)} binaries written to {args.out_dir}')
    return 0


if __name__ == '__main__':
    sys.exit(main())
