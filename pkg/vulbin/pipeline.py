#  Copyright (c) 2024. VulBin Authors
"""
Analysis Pipeline
-----------------

Wires the stages together:

#. load the binary (:doc:`vulbin.ingest`)
#. decompile it (:doc:`vulbin.decompiler`)
#. rewrite every function for vulnerability prominence (:doc:`vulbin.prominence`)
#. schedule the functions callee first (:doc:`vulbin.memory`)
#. classify every function with callee summaries as context and store its summary (:doc:`vulbin.reasoner`)
#. aggregate the binary report

.. code-block:: python

    from vulbin.config import load_config
    from vulbin.pipeline import AnalysisPipeline

    cfg = load_config('vulbin.json')
    pipeline = await AnalysisPipeline(cfg)
    report = await pipeline.analyze('a.out')
    await pipeline.close()

The pipeline keeps one model client, one knowledge base and one archival store for its lifetime, so several binaries
(for example all cases of an evaluation corpus) can be analyzed with the same instance.

*******************
Class Documentation
*******************
"""
import asyncio
import logging
import os
import re
from functools import partial
from logging import getLogger, Logger
from typing import Optional, Sequence, List, Dict, Tuple

from vulbin.config import RunConfig, config_fingerprint
from vulbin.decompiler import decompile
from vulbin.evaluation import load_manifest, score, load_baseline, build_eval_report, write_eval_report
from vulbin.helper import MOCK_RULE_TABLE_VERSION, cwe_sort_key, done_task_callback
from vulbin.ingest import load_binary
from vulbin.llm.base import LlmBackend
from vulbin.llm.client import LlmClient
from vulbin.memory.queue import VulBinQueue
from vulbin.memory.store import ArchivalStore
from vulbin.object.analysis import EnhancedFunction, BinaryReport
from vulbin.object.binary import BinaryArtifact, RawFunction, CallGraph
from vulbin.object.evaluation import GroundTruthEntry
from vulbin.prominence.agents import BaseActionAgent
from vulbin.prominence.engine import ProminenceEngine, write_enhanced
from vulbin.reasoner.classifier import CweClassifier
from vulbin.reasoner.knowledge import KnowledgeBase, load_knowledge_base
from vulbin.reasoner.report import aggregate, write_report
from vulbin.runlog import install_run_log, remove_run_log, stage_timer
from vulbin.type import FunctionStatus, LlmBackendKind, Verdict, VulBinException

__all__ = ['AnalysisPipeline']

_CASE_DIR_CHARS = re.compile(r'[^A-Za-z0-9_.-]')


class AnalysisPipeline:
    """End to end analysis of binaries with one configuration"""

    def __init__(self,
                 cfg: RunConfig,
                 backend: Optional[LlmBackend] = None,
                 agents: Optional[Dict[str, BaseActionAgent]] = None,
                 run_log: bool = True):
        """
        :param cfg: the run configuration
        :param backend: model backend replacing the configured one |default| :code:`None`
        :param agents: prominence agents replacing the defaults, keyed like the keyword arguments of
            :const:`~vulbin.prominence.engine.ProminenceEngine` (:code:`decision_agent`, :code:`rename_agent`, ...)
            |default| :code:`None`
        :param run_log: write the JSON-lines run log to :code:`<output_dir>/run.log` |default| :code:`True`
        """
        self.cfg: RunConfig = cfg
        self.logger: Logger = getLogger('vulbin.pipeline')
        """The logger used for pipeline related log messages"""
        self.client: LlmClient = LlmClient(cfg.llm, backend=backend)
        self.agents: Dict[str, BaseActionAgent] = dict(agents or {})
        self.fingerprint: str = config_fingerprint(cfg)
        self.kb: Optional[KnowledgeBase] = None
        self.store: Optional[ArchivalStore] = None
        self._run_log: bool = run_log
        self._log_handler: Optional[logging.Handler] = None

    def __await__(self):
        t = asyncio.create_task(self._open())
        yield from t
        return self

    async def _open(self):
        if self._run_log:
            self._log_handler = install_run_log(self.cfg.output_dir)
        self.kb = load_knowledge_base(self.cfg.reasoner.kb_dir)
        self.kb.require(list(self.cfg.reasoner.target_cwes) + list(self.cfg.reasoner.distractor_pool))
        await self.client
        self.store = ArchivalStore(self.cfg.store_path, self.client.count_tokens)
        self.logger.info(f'pipeline ready, config fingerprint {self.fingerprint}')

    async def close(self):
        """Closes the model client and the store and detaches the run log"""
        await self.client.close()
        if self.store is not None:
            self.store.close()
            self.store = None
        if self._log_handler is not None:
            remove_run_log(self._log_handler)
            self._log_handler = None

    def _engine(self, target_cwes: Sequence[str]) -> ProminenceEngine:
        return ProminenceEngine(self.client, self.kb, target_cwes, **self.agents)

    def _classifier(self) -> CweClassifier:
        r = self.cfg.reasoner
        return CweClassifier(self.client, self.kb, r.distractor_pool, k_distractors=r.k_distractors, seed=self.cfg.seed,
                             summary_token_cap=self.cfg.memory.summary_token_cap)

    async def _load(self, path: str, output_dir: str) -> Tuple[BinaryArtifact, List[RawFunction], CallGraph]:
        with stage_timer('ingest', self.logger):
            artifact = load_binary(path)
        with stage_timer('decompile', self.logger, artifact=artifact.short_hash):
            functions, graph = await decompile(artifact, self.cfg.decompiler, output_dir)
        self.logger.info(f'{os.path.basename(path)}: {len(functions)} functions, {len(graph.edges)} call edges',
                         extra={'artifact': artifact.short_hash})
        return artifact, functions, graph

    async def _enhance(self, artifact: BinaryArtifact, functions: List[RawFunction], output_dir: str,
                       target_cwes: Sequence[str]) -> List[Tuple[RawFunction, EnhancedFunction]]:
        ok = [f for f in functions if f.status == FunctionStatus.OK]
        with stage_timer('enhance', self.logger, artifact=artifact.short_hash):
            enhanced = await self._engine(target_cwes).enhance_all(ok)
        for raw, enh in zip(ok, enhanced):
            write_enhanced(output_dir, raw, enh)
        return list(zip(ok, enhanced))

    async def enhance(self, path: str, output_dir: Optional[str] = None) -> List[EnhancedFunction]:
        """Runs the pipeline up to the prominence stage and writes :code:`enhanced/*.c` with their sidecars.

        :param path: the binary
        :param output_dir: output directory |default| :code:`cfg.output_dir`
        """
        output_dir = output_dir or self.cfg.output_dir
        artifact, functions, _ = await self._load(path, output_dir)
        pairs = await self._enhance(artifact, functions, output_dir, self.cfg.reasoner.target_cwes)
        return [enh for _, enh in pairs]

    async def analyze(self, path: str, output_dir: Optional[str] = None, target_cwes: Optional[Sequence[str]] = None) -> BinaryReport:
        """Analyzes one binary and writes :code:`report.json` and :code:`report.md`.

        Functions already done in the store (an earlier, interrupted run) are not analyzed again, unless they have
        no verdict for one of the target CWEs yet. Those are classified for the missing CWEs only.

        :param path: the binary
        :param output_dir: output directory |default| :code:`cfg.output_dir`
        :param target_cwes: CWEs to classify |default| :code:`cfg.reasoner.target_cwes`
        :raises ~vulbin.type.FileNotReadable: if the binary can not be read
        :raises ~vulbin.type.UnknownFormat: if the binary is no supported executable
        :raises ~vulbin.type.DecompilerException: if the decompiler fails
        """
        output_dir = output_dir or self.cfg.output_dir
        targets = sorted(set(target_cwes or self.cfg.reasoner.target_cwes), key=cwe_sort_key)
        self.kb.require(targets)
        artifact, functions, graph = await self._load(path, output_dir)
        pairs = {raw.function_id: (raw, enh) for raw, enh in await self._enhance(artifact, functions, output_dir, targets)}
        skipped = [f.function_id for f in functions if f.status == FunctionStatus.SKIPPED]
        queue = VulBinQueue(self.store, max_retries=self.cfg.memory.max_retries, strict_order=self.cfg.memory.strict_order)
        queue.enqueue_all(graph, skip=skipped, targets=targets)
        classifier = self._classifier()
        with stage_timer('classify', self.logger, artifact=artifact.short_hash):
            workers = [asyncio.ensure_future(self._worker(queue, classifier, pairs, graph, targets)) for _ in range(self.cfg.workers)]
            for task in workers:
                task.add_done_callback(partial(done_task_callback, self.logger))
            await asyncio.gather(*workers)
        coverage = queue.coverage_report()
        self.logger.info(f'{artifact.short_hash}: {coverage["done"]} done, {coverage["failed"]} failed, '
                         f'{coverage["skipped"]} skipped', extra={'artifact': artifact.short_hash})
        with stage_timer('aggregate', self.logger, artifact=artifact.short_hash):
            report = aggregate(self.store, artifact, targets, self.fingerprint,
                               seed=self.cfg.seed,
                               model_tag=self.client.model_tag,
                               mock_rule_table_version=MOCK_RULE_TABLE_VERSION if self.cfg.llm.backend == LlmBackendKind.MOCK else None)
            write_report(output_dir, report)
        return report

    async def _worker(self, queue: VulBinQueue, classifier: CweClassifier, pairs: Dict[str, Tuple[RawFunction, EnhancedFunction]],
                      graph: CallGraph, targets: Sequence[str]):
        while True:
            entry = await queue.next()
            if entry is None:
                return
            fid = entry.function_id
            if fid not in pairs:
                await queue.fail(entry, 'no decompiled code for this function')
                continue
            raw, fn = pairs[fid]
            try:
                context = self.store.fetch_context(fid, self.cfg.memory.context_budget_tokens, self.cfg.memory.include_callers)
                stored = self.store.get_verdicts(fid)
                missing = [c for c in targets if c not in stored]
                verdicts = await classifier.classify(fn, missing, context) if missing else []
                invalid = [v for v in verdicts if v.verdict == Verdict.INVALID]
                if invalid:
                    await queue.fail(entry, '; '.join(f'{v.cwe_id}: {v.rationale}' for v in invalid))
                    continue
                # the record is rewritten, so it has to cover the verdicts of earlier runs too
                merged = dict(stored)
                merged.update((v.cwe_id, v) for v in verdicts)
                record = await classifier.summarize(fn, raw.synthetic_name, [merged[c] for c in sorted(merged, key=cwe_sort_key)],
                                                   graph.callees(fid))
            except VulBinException as e:
                await queue.fail(entry, f'{type(e).__name__}: {e}')
                continue
            await queue.complete(entry, record, verdicts)
            self.logger.debug(f'analyzed {fid}', extra={'function_id': fid})

    async def evaluate(self, corpus_dir: str, manifest_path: str, baseline_path: Optional[str] = None) -> dict:
        """Analyzes every binary of a manifest and scores the binary verdicts.

        Each binary is analyzed once for all CWEs the manifest lists for it, its report goes to
        :code:`<output_dir>/cases/<case_id>/`. Missing or unanalyzable binaries count as missing cases.

        :param corpus_dir: directory relative binary paths are resolved against
        :param manifest_path: the manifest CSV
        :param baseline_path: baseline counts to compare with |default| :code:`None`
        :raises ~vulbin.type.ManifestParseError: if the manifest or the baseline is invalid
        :raises ~vulbin.type.DuplicateCase: if the manifest repeats a case
        :raises ~vulbin.type.KnowledgeBaseError: if a manifest CWE has no knowledge document
        """
        truth = load_manifest(manifest_path)
        baseline = load_baseline(baseline_path) if baseline_path is not None else None
        self.kb.require({t.cwe_id for t in truth})
        by_binary: Dict[str, List[GroundTruthEntry]] = {}
        for t in truth:
            by_binary.setdefault(t.binary_path, []).append(t)
        verdicts: Dict[str, Dict[str, str]] = {}
        stripped: Dict[str, bool] = {}
        for rel, entries in by_binary.items():
            path = rel if os.path.isabs(rel) else os.path.join(corpus_dir, rel)
            if not os.path.isfile(path):
                self.logger.warning(f'binary {path} of case {entries[0].case_id} is missing')
                continue
            case_dir = os.path.join(self.cfg.output_dir, 'cases', _CASE_DIR_CHARS.sub('_', entries[0].case_id))
            try:
                report = await self.analyze(path, case_dir, [e.cwe_id for e in entries])
            except VulBinException as e:
                self.logger.warning(f'case {entries[0].case_id} could not be analyzed: {e}')
                continue
            for e in entries:
                verdicts.setdefault(e.case_id, {})[e.cwe_id] = report.cwe_verdicts[e.cwe_id].value
                stripped[e.case_id] = report.stripped
        counts = score(verdicts, truth)
        split = {'stripped': score(verdicts, [t for t in truth if stripped.get(t.case_id) is True]),
                 'unstripped': score(verdicts, [t for t in truth if stripped.get(t.case_id) is False])}
        result = build_eval_report(counts, baseline=baseline, by_strippedness=split, config_fingerprint=self.fingerprint,
                                   seed=self.cfg.seed)
        write_eval_report(self.cfg.output_dir, result)
        return result
