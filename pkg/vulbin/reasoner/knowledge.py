#  Copyright (c) 2024. VulBin Authors
"""
Knowledge Documents
-------------------

One JSON file per CWE, stored in a knowledge base directory (:code:`reasoner.kb_dir`, by default the documents shipped
with the package).

.. code-block:: json

    {
        "cwe_id": "CWE-78",
        "name": "Improper Neutralization of Special Elements used in an OS Command",
        "description": "The product constructs all or part of an OS command using externally-influenced input ...",
        "vulnerable_example": "void run(char *host) { char cmd[64]; sprintf(cmd, \\"ping %s\\", host); system(cmd); }",
        "patched_example": "void run(char *host) { execl(\\"/bin/ping\\", \\"ping\\", host, (char *)0); }"
    }

All five fields are required, must be non-empty strings and :code:`cwe_id` has to match :code:`CWE-[0-9]+`.
Every knowledge base has to provide :const:`~vulbin.helper.REQUIRED_CWES`.

*******************
Class Documentation
*******************
"""
import json
import os
from logging import getLogger, Logger
from typing import Dict, List, Iterable, Optional

from vulbin.helper import REQUIRED_CWES, CWE_ID_PATTERN, cwe_sort_key
from vulbin.object.analysis import KnowledgeDoc, IclShot
from vulbin.type import KnowledgeBaseError, Verdict

__all__ = ['DOC_FIELDS', 'parse_doc', 'KnowledgeBase', 'load_knowledge_base']

DOC_FIELDS = ('cwe_id', 'name', 'description', 'vulnerable_example', 'patched_example')
"""fields every knowledge document has to provide"""


def parse_doc(data: dict, source: str = '<memory>') -> KnowledgeDoc:
    """Validates one decoded knowledge document.

    :param data: the decoded JSON object
    :param source: file name used in error messages |default| :code:`<memory>`
    :raises ~vulbin.type.KnowledgeBaseError: naming the file and the offending field
    """
    if not isinstance(data, dict):
        raise KnowledgeBaseError(f'{source}: document has to be a JSON object')
    for field in DOC_FIELDS:
        value = data.get(field)
        if not isinstance(value, str) or not value.strip():
            raise KnowledgeBaseError(f'{source}: field "{field}" is missing or empty')
    if not CWE_ID_PATTERN.match(data['cwe_id']):
        raise KnowledgeBaseError(f'{source}: field "cwe_id" has to match CWE-[0-9]+, got "{data["cwe_id"]}"')
    unknown = sorted(set(data.keys()) - set(DOC_FIELDS))
    if unknown:
        raise KnowledgeBaseError(f'{source}: unknown field(s) {", ".join(unknown)}')
    return KnowledgeDoc(**{f: data[f] for f in DOC_FIELDS})


class KnowledgeBase:
    """CWE knowledge documents by CWE id"""

    def __init__(self, docs: Iterable[KnowledgeDoc] = ()):
        self.docs: Dict[str, KnowledgeDoc] = {}
        for doc in docs:
            if doc.cwe_id in self.docs:
                raise KnowledgeBaseError(f'duplicate knowledge document for {doc.cwe_id}')
            self.docs[doc.cwe_id] = doc

    def __contains__(self, cwe_id: str) -> bool:
        return cwe_id in self.docs

    def __len__(self) -> int:
        return len(self.docs)

    def __getitem__(self, cwe_id: str) -> KnowledgeDoc:
        return self.get(cwe_id)

    @property
    def cwe_ids(self) -> List[str]:
        return sorted(self.docs.keys(), key=cwe_sort_key)

    def get(self, cwe_id: str) -> KnowledgeDoc:
        """
        :raises ~vulbin.type.KnowledgeBaseError: if there is no document for this CWE
        """
        doc = self.docs.get(cwe_id)
        if doc is None:
            raise KnowledgeBaseError(f'no knowledge document for {cwe_id}')
        return doc

    def require(self, cwe_ids: Iterable[str]):
        """
        :raises ~vulbin.type.KnowledgeBaseError: listing every CWE without a document
        """
        missing = sorted(set(cwe_ids) - set(self.docs.keys()), key=cwe_sort_key)
        if missing:
            raise KnowledgeBaseError(f'missing knowledge document(s) for {", ".join(missing)}')

    def icl_shots(self, cwe_id: str) -> List[IclShot]:
        """The vulnerable example (expected yes) and the patched example (expected no) of a CWE as worked examples"""
        doc = self.get(cwe_id)
        return [
            IclShot(cwe_id=cwe_id, code=doc.vulnerable_example, expected=Verdict.YES,
                    explanation=f'functionality: the example is a minimal instance of {doc.name}; '
                                f'root cause: {_first_sentence(doc.description)}; impact: the weakness is reachable'),
            IclShot(cwe_id=cwe_id, code=doc.patched_example, expected=Verdict.NO,
                    explanation=f'functionality: same behaviour as the vulnerable example; '
                                f'root cause: the input is validated or bounded before use; impact: none'),
        ]


def _first_sentence(text: str) -> str:
    text = ' '.join(text.split())
    idx = text.find('. ')
    sentence = text if idx < 0 else text[:idx]
    return sentence.rstrip('.')


def load_knowledge_base(kb_dir: str, required: Optional[Iterable[str]] = REQUIRED_CWES) -> KnowledgeBase:
    """Loads and validates every :code:`*.json` document of a directory.

    :param kb_dir: the knowledge base directory
    :param required: CWEs that must be present, None to skip the check |default| :const:`~vulbin.helper.REQUIRED_CWES`
    :raises ~vulbin.type.KnowledgeBaseError: if the directory, a document or a required CWE is missing or invalid
    """
    logger: Logger = getLogger('vulbin.reasoner')
    if not os.path.isdir(kb_dir):
        raise KnowledgeBaseError(f'knowledge base directory {kb_dir} does not exist')
    docs = []
    for name in sorted(os.listdir(kb_dir)):
        if not name.endswith('.json'):
            continue
        path = os.path.join(kb_dir, name)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except ValueError as e:
            raise KnowledgeBaseError(f'{name}: not valid JSON: {e}') from e
        docs.append(parse_doc(data, name))
    kb = KnowledgeBase(docs)
    if required is not None:
        kb.require(required)
    logger.debug(f'loaded {len(kb)} knowledge documents from {kb_dir}')
    return kb
