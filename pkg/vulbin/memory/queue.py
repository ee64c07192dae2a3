#  Copyright (c) 2024. VulBin Authors
"""
Analysis Queue
--------------

Schedules every function of a binary exactly once, callees before callers, so callee summaries exist in the archival
store by the time their callers are analyzed.

Dispatch order is reverse topological on the condensation of the call graph. Members of a strongly connected
component, and components without a mutual order, are ordered by ascending entry address.

With :code:`strict_order` enabled (the default) a function only becomes eligible once all its callees outside its own
component reached a terminal state, :const:`~vulbin.memory.queue.VulBinQueue.next()` waits until that happens.

.. code-block:: python

    queue = VulBinQueue(store, max_retries=2)
    queue.enqueue_all(graph, skip=skipped_ids)
    while True:
        entry = await queue.next()
        if entry is None:
            break
        try:
            record, verdicts = await analyze(entry)
        except LlmFailure as e:
            await queue.fail(entry, str(e))
        else:
            await queue.complete(entry, record, verdicts)

State transitions:

.. code-block:: text

    pending -> in_flight -> done
                         -> pending   (fail, attempts <= max_retries)
                         -> failed    (fail, attempts >  max_retries)
    skipped              (terminal, set at enqueue time only)

*******************
Class Documentation
*******************
"""
import asyncio
from logging import getLogger, Logger
from typing import List, Dict, Optional, Set, Iterable, Sequence

import networkx as nx

from vulbin.helper import address_of
from vulbin.memory.store import ArchivalStore
from vulbin.object.analysis import QueueEntry, AnalysisRecord, CweVerdict
from vulbin.object.binary import CallGraph
from vulbin.type import QueueState, IllegalTransition, UnknownFunction, CoverageReport

__all__ = ['TERMINAL_STATES', 'dispatch_order', 'coverage_of', 'VulBinQueue']

TERMINAL_STATES = frozenset({QueueState.DONE, QueueState.FAILED, QueueState.SKIPPED})


def dispatch_order(graph: CallGraph) -> List[str]:
    """Callee first order of all nodes of a call graph.

    :param graph: the call graph, edges point from caller to callee
    """
    g = graph.to_networkx()
    condensed = nx.condensation(g)
    members: Dict[int, List[str]] = {n: sorted(data['members'], key=address_of) for n, data in condensed.nodes(data=True)}
    order = []
    for component in nx.lexicographical_topological_sort(condensed.reverse(copy=True), key=lambda n: address_of(members[n][0])):
        order.extend(members[component])
    return order


def coverage_of(entries: Iterable[QueueEntry]) -> CoverageReport:
    """Counts per state and the failed functions with their reasons"""
    counts = {s: 0 for s in QueueState}
    failed = []
    total = 0
    for e in entries:
        total += 1
        counts[e.state] += 1
        if e.state == QueueState.FAILED:
            failed.append({'function_id': e.function_id, 'reason': e.last_error or '', 'attempts': e.attempts})
    return CoverageReport(total=total,
                          done=counts[QueueState.DONE],
                          failed=counts[QueueState.FAILED],
                          skipped=counts[QueueState.SKIPPED],
                          pending=counts[QueueState.PENDING],
                          in_flight=counts[QueueState.IN_FLIGHT],
                          failed_functions=failed)


class VulBinQueue:
    """Internally synchronized analysis queue backed by an :const:`~vulbin.memory.store.ArchivalStore`"""

    def __init__(self, store: ArchivalStore, max_retries: int = 2, strict_order: bool = True):
        """
        :param store: the archival store persisting every state change
        :param max_retries: failed attempts beyond the first before a function is given up |default| :code:`2`
        :param strict_order: only dispatch functions whose callees are terminal |default| :code:`True`
        """
        self.store: ArchivalStore = store
        self.max_retries: int = max_retries
        self.strict_order: bool = strict_order
        self.logger: Logger = getLogger('vulbin.memory')
        """The logger used for queue related log messages"""
        self._entries: Dict[str, QueueEntry] = {}
        self._order: List[str] = []
        self._blocking: Dict[str, Set[str]] = {}
        self._cond: asyncio.Condition = asyncio.Condition()

    @property
    def entries(self) -> List[QueueEntry]:
        """all entries in dispatch order"""
        return [self._entries[f] for f in self._order]

    def enqueue_all(self, graph: CallGraph, skip: Iterable[str] = (), targets: Sequence[str] = ()) -> List[QueueEntry]:
        """Creates one entry per node of the graph in callee first order.

        Functions already present in the store (an interrupted earlier run) keep their state and attempts.
        A known :code:`done` function that has no stored verdict for one of :code:`targets` is set back to
        :code:`pending` so it gets classified for the missing CWEs.

        :param graph: the call graph of one artifact
        :param skip: function ids entering as :code:`skipped`
        :param targets: CWEs every done function needs a verdict for |default| :code:`()`
        """
        skip = set(skip)
        order = dispatch_order(graph)
        known = {e.function_id: e for e in self.store.load_entries()}
        rows = []
        for position, fid in enumerate(order):
            entry = known.get(fid)
            if entry is None:
                entry = QueueEntry(function_id=fid, state=QueueState.SKIPPED if fid in skip else QueueState.PENDING)
            entry.position = position
            self._entries[fid] = entry
            rows.append((entry, address_of(fid)))
        self._order.extend(order)
        scc_of = {}
        for i, component in enumerate(nx.strongly_connected_components(graph.to_networkx())):
            for fid in component:
                scc_of[fid] = i
        for fid in order:
            self._blocking[fid] = {c for c in graph.callees(fid) if scc_of[c] != scc_of[fid]}
        if order:
            self.store.register(order[0].rsplit(':', 1)[0], rows, sorted(graph.edges))
        reopened = 0
        for fid in order:
            entry = self._entries[fid]
            if fid not in known or entry.state != QueueState.DONE or not targets:
                continue
            stored = self.store.get_verdicts(fid)
            if all(cwe in stored for cwe in targets):
                continue
            entry.state = QueueState.PENDING
            entry.attempts = 0
            entry.last_error = None
            self.store.update_entry(entry)
            reopened += 1
        resumed = sum(1 for fid in order if fid in known)
        self.logger.info(f'enqueued {len(order)} functions ({len(skip & set(order))} skipped, {resumed} resumed, '
                         f'{reopened} reopened for new targets)')
        return [self._entries[f] for f in order]

    def _eligible(self, entry: QueueEntry) -> bool:
        if entry.state != QueueState.PENDING:
            return False
        if not self.strict_order:
            return True
        return all(self._entries[c].state in TERMINAL_STATES for c in self._blocking.get(entry.function_id, ()))

    def _dispatch(self, entry: QueueEntry) -> QueueEntry:
        entry.state = QueueState.IN_FLIGHT
        self.store.update_entry(entry)
        self.logger.debug(f'dispatching {entry.function_id} (attempt {entry.attempts + 1})')
        return entry

    def next_nowait(self) -> Optional[QueueEntry]:
        """The first eligible pending entry, now in flight. None if no entry is eligible right now."""
        for fid in self._order:
            entry = self._entries[fid]
            if self._eligible(entry):
                return self._dispatch(entry)
        return None

    def has_pending(self) -> bool:
        return any(e.state == QueueState.PENDING for e in self._entries.values())

    def is_terminal(self) -> bool:
        return all(e.state in TERMINAL_STATES for e in self._entries.values())

    async def next(self) -> Optional[QueueEntry]:
        """Waits for the first eligible pending entry and marks it in flight. None once no pending entries remain."""
        async with self._cond:
            while True:
                entry = self.next_nowait()
                if entry is not None:
                    return entry
                if not self.has_pending():
                    return None
                if not any(e.state == QueueState.IN_FLIGHT for e in self._entries.values()):
                    # nothing in flight can unblock the rest
                    first = next(self._entries[f] for f in self._order if self._entries[f].state == QueueState.PENDING)
                    self.logger.warning(f'no eligible entry, dispatching {first.function_id} out of order')
                    return self._dispatch(first)
                await self._cond.wait()

    def _current(self, entry: QueueEntry) -> QueueEntry:
        current = self._entries.get(entry.function_id)
        if current is None:
            raise UnknownFunction(f'unknown function {entry.function_id}')
        if current.state != QueueState.IN_FLIGHT:
            raise IllegalTransition(f'{entry.function_id} is {current.state.value}, not in_flight')
        return current

    async def complete(self, entry: QueueEntry, record: AnalysisRecord, verdicts: Iterable[CweVerdict] = ()):
        """Stores the record and verdicts and marks the entry done in one transaction.

        :raises ~vulbin.type.IllegalTransition: if the entry is not in flight
        """
        async with self._cond:
            current = self._current(entry)
            current.state = QueueState.DONE
            current.last_error = None
            self.store.save_record(current, record, verdicts)
            self._cond.notify_all()

    async def fail(self, entry: QueueEntry, reason: str):
        """Counts a failed attempt, the entry is retried while attempts do not exceed :code:`max_retries`.

        :raises ~vulbin.type.IllegalTransition: if the entry is not in flight
        """
        async with self._cond:
            current = self._current(entry)
            current.attempts += 1
            current.last_error = reason
            current.state = QueueState.PENDING if current.attempts <= self.max_retries else QueueState.FAILED
            self.store.update_entry(current)
            self.logger.warning(f'{current.function_id} attempt {current.attempts} failed: {reason}'
                                f'{"" if current.state == QueueState.PENDING else " (giving up)"}')
            self._cond.notify_all()

    def coverage_report(self) -> CoverageReport:
        return coverage_of(self.entries)
