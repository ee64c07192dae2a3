#  Copyright (c) 2024. VulBin Authors
"""
Binary Objects
--------------

Objects describing a loaded executable and what the decompiler extracted from it.
"""
from typing import List, Optional, Set, Tuple, Iterable, Dict

import networkx as nx

from vulbin.helper import address_of
from vulbin.object.base import VulBinObject
from vulbin.type import BinaryFormat, Architecture, FunctionStatus

__all__ = ['BinaryArtifact', 'RawFunction', 'CallGraph']


class BinaryArtifact(VulBinObject):
    """A loaded executable"""

    path: str
    format: BinaryFormat
    arch: Architecture
    arch_label: str
    """architecture as named by the container header, also set for known architectures"""
    stripped: bool
    content_hash: str
    """hex SHA-256 of the full file content"""
    size_bytes: int
    imports: List[str] = []
    """names of imported functions, sorted"""
    header_error: Optional[str] = None
    """set when the magic bytes matched but the header could not be parsed"""

    @property
    def short_hash(self) -> str:
        return self.content_hash[:12]


class RawFunction(VulBinObject):
    """One decompiled function as emitted by the backend, after normalization"""

    function_id: str
    synthetic_name: str
    entry_address: int
    pseudo_code: str
    callee_addresses: List[int] = []
    """entry addresses of resolved, in-binary call targets"""
    token_estimate: int = 0
    status: FunctionStatus = FunctionStatus.OK
    size_bytes: Optional[int] = None
    unresolved_calls: int = 0
    """number of call sites whose target could not be resolved"""
    external_callees: List[int] = []
    """call targets outside the discovered function set"""


class CallGraph:
    """Direct call relation between the functions of one artifact.

    Self edges are kept, duplicate edges collapse."""

    def __init__(self,
                 nodes: Optional[Iterable[str]] = None,
                 edges: Optional[Iterable[Tuple[str, str]]] = None):
        """
        :param nodes: function ids
        :param edges: (caller_id, callee_id) pairs, both ends have to be in nodes
        :raises ValueError: if an edge references an unknown node
        """
        self.nodes: Set[str] = set(nodes) if nodes is not None else set()
        self.edges: Set[Tuple[str, str]] = set()
        for caller, callee in (edges or []):
            self.add_edge(caller, callee)

    def add_node(self, function_id: str):
        self.nodes.add(function_id)

    def add_edge(self, caller: str, callee: str):
        if caller not in self.nodes or callee not in self.nodes:
            raise ValueError(f'edge ({caller}, {callee}) references an unknown function')
        self.edges.add((caller, callee))

    def callees(self, function_id: str) -> List[str]:
        """direct callees in ascending entry address order"""
        return sorted({e for s, e in self.edges if s == function_id}, key=address_of)

    def callers(self, function_id: str) -> List[str]:
        """direct callers in ascending entry address order"""
        return sorted({s for s, e in self.edges if e == function_id}, key=address_of)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def to_dict(self) -> Dict[str, list]:
        return {'nodes': sorted(self.nodes, key=address_of),
                'edges': sorted(([s, e] for s, e in self.edges), key=lambda x: (address_of(x[0]), address_of(x[1])))}

    def __len__(self):
        return len(self.nodes)
