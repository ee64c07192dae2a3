#  Copyright (c) 2024. VulBin Authors
"""
Command Line Interface
----------------------

.. code-block:: text

    vulbin analyze BINARY [--config FILE] [--output DIR] [--workers N] [--seed N]
    vulbin enhance BINARY [--config FILE] [--output DIR] [--workers N] [--seed N]
    vulbin eval CORPUS_DIR MANIFEST [--baseline FILE] [--config FILE] [--output DIR] [--workers N] [--seed N]
    vulbin queue status STORE
    vulbin kb build KB_DIR

Without :code:`--config` all defaults apply. Flags override the configuration file.

Exit codes:

.. list-table::
   :header-rows: 1

   * - Code
     - Meaning
   * - 0
     - success
   * - 2
     - configuration, input, parse or IO error
   * - 3
     - the analysis finished but functions failed

*******************
Class Documentation
*******************
"""
import argparse
import asyncio
import json
import logging
import os
import sys
from logging import getLogger, Logger
from typing import Optional, List

from vulbin import __version__
from vulbin.config import load_config
from vulbin.helper import cwe_sort_key
from vulbin.memory.queue import coverage_of
from vulbin.memory.store import ArchivalStore
from vulbin.pipeline import AnalysisPipeline
from vulbin.reasoner.knowledge import load_knowledge_base
from vulbin.type import VulBinException

__all__ = ['EXIT_OK', 'EXIT_ERROR', 'EXIT_FAILED_FUNCTIONS', 'build_parser', 'cmd_analyze', 'cmd_enhance', 'cmd_eval',
           'cmd_queue_status', 'cmd_kb_build', 'main']

EXIT_OK: int = 0
EXIT_ERROR: int = 2
EXIT_FAILED_FUNCTIONS: int = 3

logger: Logger = getLogger('vulbin.cli')


def _run_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='JSON configuration file')
    parser.add_argument('--output', help='output directory, overrides output_dir')
    parser.add_argument('--workers', type=int, help='number of concurrent function analyses')
    parser.add_argument('--seed', type=int, help='seed for the distractor draw')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='vulbin', description='Detect CWE weaknesses in binaries')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='store_true', help='log progress to stderr')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    analyze = commands.add_parser('analyze', help='analyze one binary')
    analyze.add_argument('binary')
    _run_flags(analyze)

    enhance = commands.add_parser('enhance', help='only decompile and rewrite the functions of one binary')
    enhance.add_argument('binary')
    _run_flags(enhance)

    evaluate = commands.add_parser('eval', help='analyze and score a labeled corpus')
    evaluate.add_argument('corpus_dir')
    evaluate.add_argument('manifest')
    evaluate.add_argument('--baseline', help='baseline counts to compare with')
    _run_flags(evaluate)

    queue = commands.add_parser('queue', help='inspect an archival store')
    queue_commands = queue.add_subparsers(dest='queue_command', metavar='QUEUE_COMMAND')
    queue_commands.required = True
    status = queue_commands.add_parser('status', help='print the coverage report of a store')
    status.add_argument('store')

    kb = commands.add_parser('kb', help='manage knowledge documents')
    kb_commands = kb.add_subparsers(dest='kb_command', metavar='KB_COMMAND')
    kb_commands.required = True
    build = kb_commands.add_parser('build', help='validate a knowledge base directory')
    build.add_argument('kb_dir')
    return parser


def _config(args: argparse.Namespace):
    return load_config(args.config, output_dir=args.output, workers=args.workers, seed=args.seed)


async def _with_pipeline(args: argparse.Namespace, action):
    pipeline = AnalysisPipeline(_config(args))
    try:
        await pipeline
        return await action(pipeline)
    finally:
        await pipeline.close()


async def cmd_analyze(args: argparse.Namespace) -> int:
    report = await _with_pipeline(args, lambda p: p.analyze(args.binary))
    for cwe in sorted(report.cwe_verdicts, key=cwe_sort_key):
        print(f'{cwe}: {report.cwe_verdicts[cwe].value}')
    failed = report.coverage.get('failed', 0)
    if failed:
        print(f'{failed} functions failed, see report.md', file=sys.stderr)
        return EXIT_FAILED_FUNCTIONS
    return EXIT_OK


async def cmd_enhance(args: argparse.Namespace) -> int:
    enhanced = await _with_pipeline(args, lambda p: p.enhance(args.binary))
    rejected = sum(1 for e in enhanced if e.provenance.rejected)
    print(f'{len(enhanced)} functions enhanced, {rejected} rewrites rejected')
    return EXIT_OK


async def cmd_eval(args: argparse.Namespace) -> int:
    report = await _with_pipeline(args, lambda p: p.evaluate(args.corpus_dir, args.manifest, args.baseline))
    for cwe, row in report['cwes'].items():
        if row['percent'] is None:
            print(f'{cwe}: no scored case')
        else:
            pct = row['percent']
            print(f'{cwe}: accuracy {pct["accuracy"]:.2f}% precision {pct["precision"]:.2f}% F1 {pct["f1"]:.2f}%')
    return EXIT_OK


def cmd_queue_status(args: argparse.Namespace) -> int:
    if not os.path.isfile(args.store):
        print(f'store {args.store} does not exist', file=sys.stderr)
        return EXIT_ERROR
    store = ArchivalStore(args.store)
    try:
        entries = store.load_entries()
        per_artifact = {h: coverage_of(store.load_entries(h)) for h in store.artifact_hashes()}
    finally:
        store.close()
    print(json.dumps({'total': coverage_of(entries), 'artifacts': per_artifact}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_kb_build(args: argparse.Namespace) -> int:
    kb = load_knowledge_base(args.kb_dir)
    print(f'{len(kb)} knowledge documents: {", ".join(kb.cwe_ids)}')
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the :code:`vulbin` command, returns the exit code"""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        if args.command == 'analyze':
            return asyncio.run(cmd_analyze(args))
        if args.command == 'enhance':
            return asyncio.run(cmd_enhance(args))
        if args.command == 'eval':
            return asyncio.run(cmd_eval(args))
        if args.command == 'queue':
            return cmd_queue_status(args)
        return cmd_kb_build(args)
    except VulBinException as e:
        logger.error(f'{type(e).__name__}: {e}')
        print(f'error: {e}', file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_ERROR
