#  Copyright (c) 2024. VulBin Authors
"""
Prominence Engine
-----------------

Rewrites decompiled functions so that vulnerability relevant features stand out, without changing what the code does.

A decision agent selects the actions for a function, the action agents then produce a rename map, recovered structure
definitions and comments. The engine composes them in canonical order:

#. identifiers are renamed token by token,
#. comments are inserted as whole lines :code:`// [CWE-121] text` above the line they refer to,
#. recovered structures are prepended as a preamble followed by one blank line.

Every composed rewrite is checked with :const:`~vulbin.prominence.engine.validate_preservation()`. A rewrite that fails
the check is never returned, the raw code is passed through instead and the plan is marked as rejected.

.. code-block:: python

    engine = ProminenceEngine(client, kb=kb, target_cwes=['CWE-78'])
    engine.register_functions(functions)
    enhanced = await engine.enhance_all(functions)

*******************
Class Documentation
*******************
"""
import asyncio
import json
import os
from logging import getLogger, Logger
from typing import List, Dict, Optional, Sequence, Iterable, Set

from vulbin.llm.client import LlmClient
from vulbin.object.analysis import OptimizationPlan, EnhancedFunction, VulnComment
from vulbin.object.binary import RawFunction
from vulbin.prominence.agents import DecisionAgent, RenameAgent, StructAgent, AnnotateAgent, BaseActionAgent
from vulbin.prominence.tokenizer import code_tokens, identifiers, braces_balanced, called_names, is_identifier, is_reserved, rename_identifiers
from vulbin.reasoner.knowledge import KnowledgeBase
from vulbin.type import (OptimizationAction, TokenKind, TokenizeError, InvalidMap, PreservationViolation, LlmFailure, ParseFailure,
                         BudgetOverflow)

__all__ = ['DEFAULT_PLAN', 'compose', 'validate_preservation', 'write_enhanced', 'ProminenceEngine']

DEFAULT_PLAN = [OptimizationAction.RENAME_VARIABLES, OptimizationAction.RECOVER_STRUCTS, OptimizationAction.ANNOTATE_VULNERABILITIES]
"""plan used when the decision agent fails"""

_GENERATED_FUNCTION_PREFIXES = ('FUN_', 'sub_', 'thunk_FUN_')
_AGENT_ERRORS = (LlmFailure, ParseFailure, BudgetOverflow)


def _preamble(struct_defs: Sequence[str]) -> str:
    return '\n'.join(struct_defs) + '\n\n' if struct_defs else ''


def _comment_line(indent: str, comment: VulnComment) -> str:
    hint = f'[{comment.cwe_hint}] ' if comment.cwe_hint else ''
    return f'{indent}// {hint}{comment.text}'


def compose(raw_code: str, rename_map: Dict[str, str], struct_defs: Sequence[str], comments: Sequence[VulnComment]) -> str:
    """Builds the enhanced code text from the raw code and the action results.

    :param raw_code: the raw pseudo-code
    :param rename_map: identifier renames
    :param struct_defs: recovered definitions for the preamble
    :param comments: comments, :code:`line_no` refers to the raw code
    """
    lines = rename_identifiers(raw_code, rename_map).split('\n')
    by_line: Dict[int, List[VulnComment]] = {}
    for c in comments:
        by_line.setdefault(c.line_no, []).append(c)
    out = []
    for i, line in enumerate(lines, start=1):
        indent = line[:len(line) - len(line.lstrip())]
        out.extend(_comment_line(indent, c) for c in by_line.get(i, []))
        out.append(line)
    return _preamble(struct_defs) + '\n'.join(out)


def validate_preservation(raw: RawFunction, enhanced: EnhancedFunction) -> bool:
    """True if the enhanced code has the raw statement token stream.

    Comments and the struct preamble are removed from the enhanced code and renamed identifiers are mapped back with the
    inverse rename map before the token streams are compared. Code that does not tokenize counts as not preserved.

    :param raw: the raw function
    :param enhanced: the rewrite to check
    """
    code = enhanced.code
    preamble = _preamble(enhanced.struct_defs)
    if not code.startswith(preamble):
        return False
    code = code[len(preamble):]
    inverse = {new: old for old, new in enhanced.rename_map.items()}
    if len(inverse) != len(enhanced.rename_map):
        return False
    try:
        raw_tokens = code_tokens(raw.pseudo_code)
        if set(inverse.keys()) & {t.text for t in raw_tokens if t.kind == TokenKind.IDENTIFIER}:
            return False
        ours = [inverse.get(t.text, t.text) if t.kind == TokenKind.IDENTIFIER else t.text for t in code_tokens(code)]
    except TokenizeError:
        return False
    return ours == [t.text for t in raw_tokens]


def write_enhanced(output_dir: str, raw: RawFunction, enhanced: EnhancedFunction):
    """Writes :code:`<output_dir>/enhanced/<function_id>.c` and the sidecar :code:`<function_id>.meta.json`

    :param output_dir: the run output directory
    :param raw: the raw function
    :param enhanced: its rewrite
    """
    directory = os.path.join(output_dir, 'enhanced')
    os.makedirs(directory, exist_ok=True)
    stem = os.path.join(directory, enhanced.function_id)
    with open(stem + '.c', 'w', encoding='utf-8', newline='\n') as f:
        f.write(enhanced.code)
    meta = {
        'function_id': enhanced.function_id,
        'synthetic_name': raw.synthetic_name,
        'entry_address': f'{raw.entry_address:#x}',
        'rename_map': enhanced.rename_map,
        'struct_defs': enhanced.struct_defs,
        'vuln_comments': [c.to_dict() for c in enhanced.vuln_comments],
        'provenance': enhanced.provenance.to_dict(include_none_values=True),
    }
    with open(stem + '.meta.json', 'w', encoding='utf-8', newline='\n') as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write('\n')


class ProminenceEngine:
    """Decides and applies prominence rewrites for the functions of one binary"""

    def __init__(self,
                 client: LlmClient,
                 kb: Optional[KnowledgeBase] = None,
                 target_cwes: Sequence[str] = (),
                 decision_agent: Optional[BaseActionAgent] = None,
                 rename_agent: Optional[BaseActionAgent] = None,
                 struct_agent: Optional[BaseActionAgent] = None,
                 annotate_agent: Optional[BaseActionAgent] = None):
        """
        :param client: the shared model client
        :param kb: knowledge base for in-context examples of the annotation agent |default| :code:`None`
        :param target_cwes: CWEs whose examples are shown to the annotation agent |default| :code:`()`
        :param decision_agent: replaces :const:`~vulbin.prominence.agents.DecisionAgent` |default| :code:`None`
        :param rename_agent: replaces :const:`~vulbin.prominence.agents.RenameAgent` |default| :code:`None`
        :param struct_agent: replaces :const:`~vulbin.prominence.agents.StructAgent` |default| :code:`None`
        :param annotate_agent: replaces :const:`~vulbin.prominence.agents.AnnotateAgent` |default| :code:`None`
        """
        self.client: LlmClient = client
        self.logger: Logger = getLogger('vulbin.prominence')
        """The logger used for prominence related log messages"""
        self.decision_agent: BaseActionAgent = decision_agent or DecisionAgent(client)
        self.rename_agent: BaseActionAgent = rename_agent or RenameAgent(client)
        self.struct_agent: BaseActionAgent = struct_agent or StructAgent(client)
        self.annotate_agent: BaseActionAgent = annotate_agent or AnnotateAgent(client, kb, target_cwes)
        self.function_names: Dict[str, str] = {}
        """binary wide renames of function names, every function keeps the same new name in all callers"""
        self.known_functions: Set[str] = set()
        """names of the functions defined in the binary"""
        self.invalid_map_events: List[InvalidMap] = []
        """every rejected rename proposal"""

    def register_functions(self, functions: Iterable[RawFunction]):
        """Registers the names of all functions of the binary, those may be renamed where they are called"""
        self.known_functions.update(f.synthetic_name for f in functions)

    def _is_generated_function(self, name: str) -> bool:
        return name in self.known_functions or name.startswith(_GENERATED_FUNCTION_PREFIXES)

    def _reject(self, raw: RawFunction, old: str, new: str, reason: str):
        event = InvalidMap(f'{raw.function_id}: {old} -> {new}: {reason}')
        self.invalid_map_events.append(event)
        self.logger.warning(f'InvalidMap {event}')

    async def decide_optimizations(self, raw: RawFunction) -> OptimizationPlan:
        """Selects the actions for a function.

        Empty bodies get an empty plan without a model request, code with unbalanced braces is restricted to
        annotation. If the decision agent fails the full default plan is used with rationale :code:`fallback`.
        """
        try:
            tokens = code_tokens(raw.pseudo_code)
        except TokenizeError:
            return OptimizationPlan(actions=[], rationale='code does not tokenize')
        start = next((i for i, t in enumerate(tokens) if t.text == '{'), None)
        if not tokens or (start is not None and all(t.text in ('{', '}', ';') for t in tokens[start:])):
            return OptimizationPlan(actions=[], rationale='empty body')
        if not braces_balanced(tokens):
            return OptimizationPlan(actions=[OptimizationAction.ANNOTATE_VULNERABILITIES], rationale='unbalanced braces')
        try:
            plan = await self.decision_agent.run(raw)
        except _AGENT_ERRORS as e:
            self.logger.warning(f'decision for {raw.function_id} failed, using default plan: {e}')
            return OptimizationPlan(actions=DEFAULT_PLAN, rationale='fallback')
        self.logger.debug(f'plan for {raw.function_id}: {[a.value for a in plan.actions]}')
        return plan

    async def rename_variables(self, raw: RawFunction) -> Dict[str, str]:
        """Asks for renames and keeps only valid ones.

        Entries are dropped (and recorded as :const:`~vulbin.type.InvalidMap`) if the old name is not in the code, if
        either name is reserved or not an identifier, if the old name is a library function, if the new name already
        exists in the code or if it was already given to another identifier.

        :raises ~vulbin.type.LlmFailure: if the model could not be reached
        """
        proposals = await self.rename_agent.run(raw)
        code = raw.pseudo_code
        present = identifiers(code)
        calls = called_names(code_tokens(code))
        library = {c for c in calls if not self._is_generated_function(c)}
        mapping: Dict[str, str] = {}
        used: Set[str] = set()
        for old, new in proposals:
            if old == new or old in mapping:
                continue
            if old in self.function_names and self.function_names[old] != new:
                new = self.function_names[old]
            if not is_identifier(old) or not is_identifier(new):
                self._reject(raw, old, new, 'not an identifier')
            elif is_reserved(old) or is_reserved(new):
                self._reject(raw, old, new, 'reserved name')
            elif old not in present:
                self._reject(raw, old, new, 'identifier does not occur in the code')
            elif old in library:
                self._reject(raw, old, new, 'library function')
            elif new in present:
                self._reject(raw, old, new, 'collides with an existing identifier')
            elif new in used or (old not in self.function_names and new in self.function_names.values()):
                self._reject(raw, old, new, 'new name already taken')
            else:
                mapping[old] = new
                used.add(new)
        for old in calls:
            if old in self.function_names and old not in mapping:
                new = self.function_names[old]
                if new not in present and new not in used:
                    mapping[old] = new
                    used.add(new)
        for old, new in mapping.items():
            if (self._is_generated_function(old) and old in calls) or old == raw.synthetic_name:
                self.function_names.setdefault(old, new)
        return mapping

    async def recover_structs(self, raw: RawFunction) -> List[str]:
        """Recovered definitions, an empty list if the model fails"""
        try:
            return await self.struct_agent.run(raw)
        except _AGENT_ERRORS as e:
            self.logger.warning(f'struct recovery for {raw.function_id} failed: {e}')
            return []

    async def annotate_vulnerabilities(self, raw: RawFunction) -> List[VulnComment]:
        """Comments for the raw code, an empty list if the model fails"""
        try:
            return await self.annotate_agent.run(raw)
        except _AGENT_ERRORS as e:
            self.logger.warning(f'annotation of {raw.function_id} failed: {e}')
            return []

    async def apply_plan(self, raw: RawFunction, plan: OptimizationPlan) -> EnhancedFunction:
        """Applies the actions of a plan in canonical order.

        :raises ~vulbin.type.PreservationViolation: if the composed rewrite fails validation, the exception carries the
            raw code as :code:`passthrough` with the plan marked rejected
        """
        if not plan.actions:
            return EnhancedFunction(function_id=raw.function_id, code=raw.pseudo_code, provenance=plan)
        rename_map: Dict[str, str] = {}
        if OptimizationAction.RENAME_VARIABLES in plan:
            try:
                rename_map = await self.rename_variables(raw)
            except _AGENT_ERRORS as e:
                self.logger.warning(f'renaming {raw.function_id} failed: {e}')
        struct_defs = await self.recover_structs(raw) if OptimizationAction.RECOVER_STRUCTS in plan else []
        comments = await self.annotate_vulnerabilities(raw) if OptimizationAction.ANNOTATE_VULNERABILITIES in plan else []
        enhanced = EnhancedFunction(function_id=raw.function_id,
                                    code=compose(raw.pseudo_code, rename_map, struct_defs, comments),
                                    rename_map=rename_map,
                                    struct_defs=struct_defs,
                                    vuln_comments=comments,
                                    provenance=plan)
        if not validate_preservation(raw, enhanced):
            rejected = OptimizationPlan(actions=plan.actions, rationale=plan.rationale, rejected=True)
            passthrough = EnhancedFunction(function_id=raw.function_id, code=raw.pseudo_code, provenance=rejected)
            raise PreservationViolation(f'rewrite of {raw.function_id} changes the statement stream', passthrough)
        return enhanced

    async def enhance(self, raw: RawFunction) -> EnhancedFunction:
        """Decides and applies the plan for one function, a rejected rewrite yields the raw code"""
        plan = await self.decide_optimizations(raw)
        try:
            return await self.apply_plan(raw, plan)
        except PreservationViolation as e:
            self.logger.warning(str(e))
            return e.passthrough

    async def enhance_all(self, functions: Sequence[RawFunction]) -> List[EnhancedFunction]:
        """Enhances functions concurrently, the result keeps the input order"""
        self.register_functions(functions)
        return list(await asyncio.gather(*(self.enhance(f) for f in functions)))
