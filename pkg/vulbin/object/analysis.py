#  Copyright (c) 2024. VulBin Authors
"""
Analysis Objects
----------------

Objects produced while enhancing, scheduling and classifying functions.
"""
from datetime import datetime
from typing import List, Optional, Dict, Any

from vulbin.object.base import VulBinObject, IterVulBinObject
from vulbin.type import ChatRole, OptimizationAction, QueueState, Verdict, BinaryVerdict

__all__ = ['ChatMessage', 'OptimizationPlan', 'VulnComment', 'EnhancedFunction', 'QueueEntry', 'SuspectedCwe', 'AnalysisRecord',
           'ContextItem', 'ContextBundle', 'KnowledgeDoc', 'IclShot', 'CweQuery', 'CweVerdict', 'FunctionReportRow', 'BinaryReport']

_ACTION_ORDER = list(OptimizationAction)


class ChatMessage(VulBinObject):
    role: ChatRole
    content: str

    def __init__(self, **kwargs):
        super(ChatMessage, self).__init__(**kwargs)
        if not getattr(self, 'content', None):
            raise ValueError('chat message content must not be empty')


class OptimizationPlan(VulBinObject):
    """Actions the decision agent selected for one function.

    Actions are deduplicated and kept in canonical application order."""

    actions: List[OptimizationAction] = []
    rationale: str = ''
    rejected: bool = False
    """set when the composed rewrite failed validation and the raw code was passed through"""

    def __init__(self, **kwargs):
        super(OptimizationPlan, self).__init__(**kwargs)
        self.actions = sorted(set(self.actions), key=_ACTION_ORDER.index)

    def __contains__(self, item: OptimizationAction) -> bool:
        return item in self.actions


class VulnComment(VulBinObject):
    line_no: int
    """1-based line of the raw pseudo-code the comment refers to"""
    text: str
    cwe_hint: Optional[str] = None


class EnhancedFunction(VulBinObject):
    """A function after prominence rewriting"""

    function_id: str
    code: str
    rename_map: Dict[str, str] = {}
    struct_defs: List[str] = []
    vuln_comments: List[VulnComment] = []
    provenance: OptimizationPlan


class QueueEntry(VulBinObject):
    function_id: str
    state: QueueState = QueueState.PENDING
    attempts: int = 0
    """number of failed analysis attempts"""
    last_error: Optional[str] = None
    position: int = 0
    """dispatch position inside the artifact"""


class SuspectedCwe(VulBinObject):
    cwe_id: str
    confidence: float = 1.0


class AnalysisRecord(VulBinObject):
    """Archival summary of one analyzed function"""

    function_id: str
    summary: str
    suspected: List[SuspectedCwe] = []
    callees: List[str] = []
    created_at: datetime
    model_tag: str


class ContextItem(VulBinObject):
    function_id: str
    summary: str
    tokens: int


class ContextBundle(IterVulBinObject):
    """Summaries of already analyzed functions, packed into a token budget

    Iterating over it yields :const:`~vulbin.object.analysis.ContextItem`"""

    _iter_field = 'items'
    items: List[ContextItem] = []
    total_tokens: int = 0
    budget: int


class KnowledgeDoc(VulBinObject):
    cwe_id: str
    name: str
    description: str
    vulnerable_example: str
    patched_example: str


class IclShot(VulBinObject):
    """Worked example shown to the model before the real question"""

    cwe_id: str
    code: str
    expected: Verdict
    explanation: str


class CweQuery(VulBinObject):
    """One classification question: a target CWE plus distractors for one function"""

    function_id: str
    code: str
    target_cwe: str
    distractors: List[str] = []
    context: ContextBundle
    icl_shots: List[IclShot] = []
    chunk_label: Optional[str] = None
    """set for chunked analysis, e.g. :code:`chunk 2 of 3`"""

    def __init__(self, **kwargs):
        super(CweQuery, self).__init__(**kwargs)
        if self.target_cwe in self.distractors:
            raise ValueError(f'target {self.target_cwe} must not be a distractor')
        if len(set(self.distractors)) != len(self.distractors):
            raise ValueError('distractors must be unique')

    @property
    def cwe_ids(self) -> List[str]:
        return [self.target_cwe] + list(self.distractors)


class CweVerdict(VulBinObject):
    function_id: str
    cwe_id: str
    verdict: Verdict
    rationale: str = ''
    confidence: float = 1.0


class FunctionReportRow(VulBinObject):
    function_id: str
    entry_address: str
    state: QueueState
    verdicts: Dict[str, Verdict] = {}
    last_error: Optional[str] = None


class BinaryReport(VulBinObject):
    """Aggregated result for one artifact"""

    artifact_hash: str
    binary_name: str
    stripped: bool
    cwe_verdicts: Dict[str, BinaryVerdict] = {}
    functions: List[FunctionReportRow] = []
    coverage: Dict[str, Any] = {}
    config_fingerprint: str
    seed: int
    model_tag: str
    mock_rule_table_version: Optional[str] = None
