#  Copyright (c) 2024. VulBin Authors
"""
Type Definitions
----------------"""
from enum import Enum
from typing import List, Optional, TYPE_CHECKING

from typing_extensions import TypedDict

if TYPE_CHECKING:
    from vulbin.object.binary import BinaryArtifact
    from vulbin.object.analysis import EnhancedFunction

__all__ = ['BinaryFormat', 'Architecture', 'FunctionStatus', 'DecompilerKind', 'OptimizationAction', 'QueueState', 'Verdict',
           'BinaryVerdict', 'LlmBackendKind', 'ChatRole', 'PromptTask', 'CaseLabel', 'TokenKind',
           'FailedFunction', 'CoverageReport', 'SimilarityResult',
           'VulBinException', 'ConfigError',
           'FileNotReadable', 'UnknownFormat', 'UnsupportedFormat',
           'DecompilerException', 'BackendLaunchFailure', 'BackendTimeout', 'EmptyOutput',
           'TokenizeError', 'InvalidMap', 'PreservationViolation',
           'LlmFailure', 'TransportFailure', 'ReplayMiss', 'BudgetOverflow',
           'IllegalTransition', 'UnknownFunction', 'QueueNotTerminal', 'StoreSchemaError',
           'ParseFailure', 'KnowledgeBaseError',
           'ManifestParseError', 'DuplicateCase', 'EmptyCounts', 'EmptyInput']


class BinaryFormat(Enum):
    """Executable container formats recognized by their magic bytes
    """
    ELF = 'ELF'
    PE = 'PE'
    MACHO = 'MachO'
    UNKNOWN = 'Unknown'


class Architecture(Enum):
    """Instruction set architectures read from the container header.

    Anything not listed maps to :const:`~vulbin.type.Architecture.OTHER`, the original label is kept in
    :const:`~vulbin.object.binary.BinaryArtifact.arch_label`
    """
    X86 = 'x86'
    X86_64 = 'x86_64'
    ARM = 'arm'
    AARCH64 = 'aarch64'
    OTHER = 'other'


class FunctionStatus(Enum):
    """
    """
    OK = 'ok'
    SKIPPED = 'skipped'


class DecompilerKind(Enum):
    """Available decompiler backends
    """
    EXTERNAL_TOOL = 'external_tool'
    FIXTURE = 'fixture'


class OptimizationAction(Enum):
    """Rewrites the prominence stage can apply to a function.

    Declaration order is the canonical application order."""
    RENAME_VARIABLES = 'RenameVariables'
    """Give generic decompiler identifiers descriptive names"""
    RECOVER_STRUCTS = 'RecoverStructs'
    """Prepend recovered type definitions for fixed-offset pointer accesses"""
    ANNOTATE_VULNERABILITIES = 'AnnotateVulnerabilities'
    """Insert comments about potential weaknesses and functionality"""


class QueueState(Enum):
    """States of a :const:`~vulbin.object.analysis.QueueEntry`
    """
    PENDING = 'pending'
    IN_FLIGHT = 'in_flight'
    DONE = 'done'
    FAILED = 'failed'
    SKIPPED = 'skipped'


class Verdict(Enum):
    """Per function and CWE classification result
    """
    YES = 'yes'
    NO = 'no'
    INVALID = 'invalid'


class BinaryVerdict(Enum):
    """Per binary and CWE result, the disjunction over all function verdicts
    """
    YES = 'yes'
    NO = 'no'
    INCOMPLETE = 'incomplete'
    """no function was flagged but at least one function could not be analyzed"""


class LlmBackendKind(Enum):
    """
    """
    HTTP_API = 'http_api'
    MOCK = 'mock'
    REPLAY = 'replay'


class ChatRole(Enum):
    """
    """
    SYSTEM = 'system'
    USER = 'user'
    ASSISTANT = 'assistant'


class PromptTask(Enum):
    """Task named on the first line of every system prompt
    """
    DECIDE = 'decide'
    RENAME = 'rename'
    STRUCTS = 'structs'
    ANNOTATE = 'annotate'
    CLASSIFY = 'classify'
    SUMMARIZE = 'summarize'


class CaseLabel(Enum):
    """Ground truth label of an evaluation case
    """
    BAD = 'bad'
    """the vulnerability is present"""
    GOOD = 'good'


class TokenKind(Enum):
    """Token classes of the C-like pseudo-code lexer
    """
    IDENTIFIER = 'identifier'
    KEYWORD = 'keyword'
    NUMBER = 'number'
    STRING = 'string'
    CHAR = 'char'
    PUNCT = 'punct'
    COMMENT = 'comment'


class FailedFunction(TypedDict):
    function_id: str
    reason: Optional[str]
    """last error recorded for this function"""
    attempts: int


class CoverageReport(TypedDict):
    total: int
    done: int
    failed: int
    skipped: int
    pending: int
    in_flight: int
    failed_functions: List[FailedFunction]


class SimilarityResult(TypedDict):
    cosine: float
    levenshtein_norm: float


# EXCEPTIONS


class VulBinException(Exception):
    """Base vulbin Exception"""
    pass


class ConfigError(VulBinException):
    """The run configuration is missing, malformed or contains invalid values"""
    pass


class FileNotReadable(VulBinException):
    """The input path does not exist, is not a regular file or can not be read"""
    pass


class UnknownFormat(VulBinException):
    """The magic bytes match no supported container format.

    The loaded artifact is still available as :code:`artifact`"""

    def __init__(self, msg: str, artifact: 'BinaryArtifact'):
        super(UnknownFormat, self).__init__(msg)
        self.artifact: 'BinaryArtifact' = artifact


class UnsupportedFormat(VulBinException):
    """The operation is not available for the container format of the artifact"""
    pass


class DecompilerException(VulBinException):
    """Base for all decompiler backend errors"""
    pass


class BackendLaunchFailure(DecompilerException):
    """The decompiler backend could not be started or exited with an error"""
    pass


class BackendTimeout(DecompilerException):
    """The decompiler backend did not finish in time"""
    pass


class EmptyOutput(DecompilerException):
    """The backend produced zero functions, the binary can not be analyzed"""
    pass


class TokenizeError(VulBinException):
    """The pseudo-code could not be tokenized"""
    pass


class InvalidMap(VulBinException):
    """A proposed rename entry collides or is not a valid identifier"""
    pass


class PreservationViolation(VulBinException):
    """The composed rewrite changed the statement token stream.

    :code:`passthrough` holds the raw code wrapped as an enhanced function with the plan marked rejected"""

    def __init__(self, msg: str, passthrough: 'EnhancedFunction'):
        super(PreservationViolation, self).__init__(msg)
        self.passthrough: 'EnhancedFunction' = passthrough


class LlmFailure(VulBinException):
    """The language model backend could not produce a reply"""
    pass


class TransportFailure(LlmFailure):
    """The backend could not be reached or kept failing until all retries were used up"""
    pass


class ReplayMiss(LlmFailure):
    """No recorded reply exists for this request"""
    pass


class BudgetOverflow(VulBinException):
    """The request does not fit into the configured context window"""
    pass


class IllegalTransition(VulBinException):
    """The queue entry is not in a state that allows this transition"""
    pass


class UnknownFunction(VulBinException):
    """The function id is not known to the store"""
    pass


class QueueNotTerminal(VulBinException):
    """There are still pending or in flight functions for this artifact"""
    pass


class StoreSchemaError(VulBinException):
    """The store was written with a newer or unknown schema version"""
    pass


class ParseFailure(VulBinException):
    """A model reply did not contain the expected structured answer"""
    pass


class KnowledgeBaseError(VulBinException):
    """A knowledge document is missing or malformed"""
    pass


class ManifestParseError(VulBinException):
    """The evaluation manifest could not be parsed, :code:`line_no` names the offending line"""

    def __init__(self, msg: str, line_no: int):
        super(ManifestParseError, self).__init__(f'line {line_no}: {msg}')
        self.line_no: int = line_no


class DuplicateCase(VulBinException):
    """A (case_id, cwe_id) pair appears more than once in the manifest"""
    pass


class EmptyCounts(VulBinException):
    """Metrics were requested for a confusion matrix without any counted case"""
    pass


class EmptyInput(VulBinException):
    """An empty input was given where content is required"""
    pass
