#  Copyright (c) 2024. VulBin Authors
"""
Archival Store
--------------

A single file SQLite database holding the queue state of every function, the archival summary of every analyzed
function, its suspected CWEs, its verdicts and the call edges of the binary.

.. code-block:: text

    meta(key PK, value)                       -- schema_version
    functions(function_id PK, artifact_hash, entry_address, position, state, attempts, last_error)
    records(function_id PK, summary, created_at, model_tag)
    suspected(function_id, cwe_id, confidence)   PK(function_id, cwe_id)
    verdicts(function_id, cwe_id, verdict, rationale, confidence)   PK(function_id, cwe_id)
    edges(caller, callee)                     PK(caller, callee)

Every multi row write runs in one transaction. Reopening a store moves functions that were in flight when the process
stopped back to pending, everything else is kept, so an interrupted run loses at most its in-flight functions.

A store stamped with a newer schema version than :const:`~vulbin.helper.STORE_SCHEMA_VERSION` is refused.

*******************
Class Documentation
*******************
"""
import os
import sqlite3
from logging import getLogger, Logger
from typing import List, Optional, Dict, Iterable, Tuple, Sequence, Set

from vulbin.helper import STORE_SCHEMA_VERSION, datetime_to_str
from vulbin.llm.base import count_tokens, TokenCounter
from vulbin.object.analysis import QueueEntry, AnalysisRecord, SuspectedCwe, CweVerdict, ContextBundle, ContextItem
from vulbin.type import QueueState, Verdict, StoreSchemaError, UnknownFunction

__all__ = ['ArchivalStore']

_SCHEMA = [
    'CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL)',
    '''CREATE TABLE IF NOT EXISTS functions (
        function_id TEXT PRIMARY KEY,
        artifact_hash TEXT NOT NULL,
        entry_address INTEGER NOT NULL,
        position INTEGER NOT NULL,
        state TEXT NOT NULL,
        attempts INTEGER NOT NULL DEFAULT 0,
        last_error TEXT)''',
    '''CREATE TABLE IF NOT EXISTS records (
        function_id TEXT PRIMARY KEY,
        summary TEXT NOT NULL,
        created_at TEXT NOT NULL,
        model_tag TEXT NOT NULL)''',
    '''CREATE TABLE IF NOT EXISTS suspected (
        function_id TEXT NOT NULL,
        cwe_id TEXT NOT NULL,
        confidence REAL NOT NULL,
        PRIMARY KEY (function_id, cwe_id))''',
    '''CREATE TABLE IF NOT EXISTS verdicts (
        function_id TEXT NOT NULL,
        cwe_id TEXT NOT NULL,
        verdict TEXT NOT NULL,
        rationale TEXT NOT NULL,
        confidence REAL NOT NULL,
        PRIMARY KEY (function_id, cwe_id))''',
    '''CREATE TABLE IF NOT EXISTS edges (
        caller TEXT NOT NULL,
        callee TEXT NOT NULL,
        PRIMARY KEY (caller, callee))''',
    'CREATE INDEX IF NOT EXISTS idx_functions_artifact ON functions(artifact_hash)',
    'CREATE INDEX IF NOT EXISTS idx_edges_callee ON edges(callee)',
]


class ArchivalStore:
    """Persistent queue state and analysis summaries"""

    def __init__(self, path: str, token_counter: TokenCounter = count_tokens):
        """
        :param path: the database file, created if missing. :code:`:memory:` opens a private in-memory store
        :param token_counter: counter used to size context items |default| :const:`~vulbin.llm.base.count_tokens()`
        :raises ~vulbin.type.StoreSchemaError: if the store was written by a newer version
        """
        self.path: str = path
        self.logger: Logger = getLogger('vulbin.memory')
        """The logger used for store related log messages"""
        self._counter: TokenCounter = token_counter
        if path != ':memory:':
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
        self._conn: sqlite3.Connection = sqlite3.connect(path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._init_db()

    def _init_db(self):
        with self._conn:
            for statement in _SCHEMA:
                self._conn.execute(statement)
            row = self._conn.execute("SELECT value FROM meta WHERE key = 'schema_version'").fetchone()
            if row is None:
                self._conn.execute("INSERT INTO meta (key, value) VALUES ('schema_version', ?)", (str(STORE_SCHEMA_VERSION),))
            elif int(row['value']) > STORE_SCHEMA_VERSION:
                raise StoreSchemaError(f'store {self.path} has schema version {row["value"]}, '
                                       f'this version supports up to {STORE_SCHEMA_VERSION}')
            reset = self._conn.execute('UPDATE functions SET state = ? WHERE state = ?',
                                       (QueueState.PENDING.value, QueueState.IN_FLIGHT.value)).rowcount
        if reset:
            self.logger.info(f'reset {reset} in-flight functions of {self.path} to pending')

    def close(self):
        self._conn.close()

    @property
    def schema_version(self) -> int:
        return int(self._conn.execute("SELECT value FROM meta WHERE key = 'schema_version'").fetchone()['value'])

    # functions and edges

    def register(self, artifact_hash: str, entries: Sequence[Tuple[QueueEntry, int]], edges: Iterable[Tuple[str, str]]):
        """Inserts functions and call edges of one artifact. Functions already known keep their state and attempts.

        :param artifact_hash: content hash of the artifact
        :param entries: queue entries with their entry address
        :param edges: (caller, callee) function id pairs
        """
        with self._conn:
            for entry, address in entries:
                self._conn.execute(
                    '''INSERT INTO functions (function_id, artifact_hash, entry_address, position, state, attempts, last_error)
                       VALUES (?, ?, ?, ?, ?, ?, ?)
                       ON CONFLICT(function_id) DO UPDATE SET position = excluded.position''',
                    (entry.function_id, artifact_hash, address, entry.position, entry.state.value, entry.attempts, entry.last_error))
            self._conn.executemany('INSERT OR IGNORE INTO edges (caller, callee) VALUES (?, ?)', list(edges))

    def load_entries(self, artifact_hash: Optional[str] = None) -> List[QueueEntry]:
        """Queue entries in dispatch order, of one artifact or of all"""
        if artifact_hash is None:
            rows = self._conn.execute('SELECT * FROM functions ORDER BY artifact_hash, position').fetchall()
        else:
            rows = self._conn.execute('SELECT * FROM functions WHERE artifact_hash = ? ORDER BY position', (artifact_hash,)).fetchall()
        return [QueueEntry(function_id=r['function_id'], state=QueueState(r['state']), attempts=r['attempts'],
                           last_error=r['last_error'], position=r['position']) for r in rows]

    def artifact_hashes(self) -> List[str]:
        return [r[0] for r in self._conn.execute('SELECT DISTINCT artifact_hash FROM functions ORDER BY artifact_hash')]

    def has_function(self, function_id: str) -> bool:
        return self._conn.execute('SELECT 1 FROM functions WHERE function_id = ?', (function_id,)).fetchone() is not None

    def entry_address(self, function_id: str) -> int:
        row = self._conn.execute('SELECT entry_address FROM functions WHERE function_id = ?', (function_id,)).fetchone()
        if row is None:
            raise UnknownFunction(f'unknown function {function_id}')
        return row['entry_address']

    def update_entry(self, entry: QueueEntry):
        with self._conn:
            self._conn.execute('UPDATE functions SET state = ?, attempts = ?, last_error = ? WHERE function_id = ?',
                               (entry.state.value, entry.attempts, entry.last_error, entry.function_id))

    def _ordered(self, sql: str, args: tuple) -> List[str]:
        return [r[0] for r in self._conn.execute(sql, args)]

    def callees(self, function_id: str) -> List[str]:
        """direct callees ordered by entry address"""
        return self._ordered('''SELECT e.callee FROM edges e JOIN functions f ON f.function_id = e.callee
                                WHERE e.caller = ? ORDER BY f.entry_address, e.callee''', (function_id,))

    def callers(self, function_id: str) -> List[str]:
        """direct callers ordered by entry address"""
        return self._ordered('''SELECT e.caller FROM edges e JOIN functions f ON f.function_id = e.caller
                                WHERE e.callee = ? ORDER BY f.entry_address, e.caller''', (function_id,))

    # records and verdicts

    def save_record(self, entry: QueueEntry, record: AnalysisRecord, verdicts: Iterable[CweVerdict] = ()):
        """Stores record, suspected CWEs and verdicts and sets the function done, all in one transaction"""
        with self._conn:
            self._conn.execute('INSERT OR REPLACE INTO records (function_id, summary, created_at, model_tag) VALUES (?, ?, ?, ?)',
                               (record.function_id, record.summary, datetime_to_str(record.created_at), record.model_tag))
            self._conn.execute('DELETE FROM suspected WHERE function_id = ?', (record.function_id,))
            seen: Set[str] = set()
            for s in record.suspected:
                if s.cwe_id in seen:
                    continue
                seen.add(s.cwe_id)
                self._conn.execute('INSERT INTO suspected (function_id, cwe_id, confidence) VALUES (?, ?, ?)',
                                   (record.function_id, s.cwe_id, s.confidence))
            for v in verdicts:
                self._conn.execute('''INSERT OR REPLACE INTO verdicts (function_id, cwe_id, verdict, rationale, confidence)
                                      VALUES (?, ?, ?, ?, ?)''',
                                   (v.function_id, v.cwe_id, v.verdict.value, v.rationale, v.confidence))
            self._conn.execute('UPDATE functions SET state = ?, attempts = ?, last_error = ? WHERE function_id = ?',
                               (entry.state.value, entry.attempts, entry.last_error, entry.function_id))

    def get_record(self, function_id: str) -> Optional[AnalysisRecord]:
        row = self._conn.execute('SELECT * FROM records WHERE function_id = ?', (function_id,)).fetchone()
        if row is None:
            return None
        suspected = [SuspectedCwe(cwe_id=r['cwe_id'], confidence=r['confidence']) for r in self._conn.execute(
            'SELECT cwe_id, confidence FROM suspected WHERE function_id = ? ORDER BY cwe_id', (function_id,))]
        return AnalysisRecord(function_id=function_id, summary=row['summary'], suspected=suspected, callees=self.callees(function_id),
                              created_at=row['created_at'], model_tag=row['model_tag'])

    def get_verdicts(self, function_id: str) -> Dict[str, CweVerdict]:
        return {r['cwe_id']: CweVerdict(function_id=function_id, cwe_id=r['cwe_id'], verdict=Verdict(r['verdict']),
                                        rationale=r['rationale'], confidence=r['confidence'])
                for r in self._conn.execute('SELECT * FROM verdicts WHERE function_id = ?', (function_id,))}

    def _done_summaries(self, function_ids: Iterable[str]) -> Dict[str, str]:
        ids = list(function_ids)
        if not ids:
            return {}
        marks = ','.join('?' * len(ids))
        rows = self._conn.execute(f'''SELECT r.function_id, r.summary FROM records r JOIN functions f ON f.function_id = r.function_id
                                      WHERE f.state = ? AND r.function_id IN ({marks})''', (QueueState.DONE.value, *ids))
        return {r['function_id']: r['summary'] for r in rows}

    def _flagged_others(self, function_id: str) -> List[str]:
        return self._ordered('''SELECT DISTINCT f.function_id FROM functions f JOIN suspected s ON s.function_id = f.function_id
                                WHERE f.artifact_hash = (SELECT artifact_hash FROM functions WHERE function_id = ?)
                                ORDER BY f.entry_address, f.function_id''', (function_id,))

    def context_order(self, function_id: str, include_callers: bool = False) -> List[str]:
        """Retrieval priority: direct callees, callees of callees (breadth first), callers if enabled, then other functions
        of the artifact with suspected CWEs"""
        order: List[str] = []
        seen = {function_id}
        level = self.callees(function_id)
        while level:
            nxt = []
            for fid in level:
                if fid in seen:
                    continue
                seen.add(fid)
                order.append(fid)
                nxt.extend(self.callees(fid))
            level = sorted(set(nxt) - seen, key=lambda f: (self.entry_address(f), f))
        if include_callers:
            for fid in self.callers(function_id):
                if fid not in seen:
                    seen.add(fid)
                    order.append(fid)
        for fid in self._flagged_others(function_id):
            if fid not in seen:
                seen.add(fid)
                order.append(fid)
        return order

    def fetch_context(self, function_id: str, budget_tokens: int, include_callers: bool = False) -> ContextBundle:
        """Packs summaries of done functions in priority order until the next one would exceed the budget.

        :param function_id: the function about to be analyzed
        :param budget_tokens: maximum total tokens of the bundle
        :param include_callers: also offer caller summaries |default| :code:`False`
        :raises ~vulbin.type.UnknownFunction: if the function is not in the store
        """
        if not self.has_function(function_id):
            raise UnknownFunction(f'unknown function {function_id}')
        order = self.context_order(function_id, include_callers)
        summaries = self._done_summaries(order)
        items, total = [], 0
        for fid in order:
            if fid not in summaries:
                continue
            tokens = self._counter(summaries[fid])
            if total + tokens > budget_tokens:
                break
            items.append(ContextItem(function_id=fid, summary=summaries[fid], tokens=tokens))
            total += tokens
        return ContextBundle(items=items, total_tokens=total, budget=budget_tokens)
