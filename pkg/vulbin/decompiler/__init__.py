#  Copyright (c) 2024. VulBin Authors
"""
Decompiler Adapter
------------------

Produces per function pseudo-code and a call graph through a pluggable backend.

.. code-block:: python

    from vulbin.config import DecompilerBackendConfig
    from vulbin.decompiler import decompile
    from vulbin.ingest import load_binary

    artifact = load_binary('a.out')
    functions, graph = await decompile(artifact, DecompilerBackendConfig(kind='fixture', fixture_dir='recorded/'))

Available Backends
==================

.. list-table::
   :header-rows: 1

   * - Backend
     - Description
   * - :const:`~vulbin.decompiler.external.ExternalToolBackend`
     - Runs an installed decompiler through a command template.
   * - :const:`~vulbin.decompiler.fixture.FixtureBackend`
     - Replays recorded output, the default in tests.

.. toctree::
   :hidden:
   :maxdepth: 1

   vulbin.decompiler.base
   vulbin.decompiler.external
   vulbin.decompiler.fixture

"""
from typing import List, Tuple

from vulbin.config import DecompilerBackendConfig
from vulbin.decompiler.base import DecompilerBackend, normalize_pseudo_code
from vulbin.decompiler.external import ExternalToolBackend
from vulbin.decompiler.fixture import FixtureBackend
from vulbin.object.binary import BinaryArtifact, RawFunction, CallGraph
from vulbin.type import DecompilerKind

__all__ = ['create_backend', 'decompile', 'normalize_pseudo_code']


def create_backend(cfg: DecompilerBackendConfig, output_dir: str = '.') -> DecompilerBackend:
    """Instantiates the backend selected by :code:`cfg.kind`

    :param cfg: the decompiler configuration
    :param output_dir: run output directory, used by the external backend |default| :code:`.`
    """
    if cfg.kind == DecompilerKind.EXTERNAL_TOOL:
        return ExternalToolBackend(cfg, output_dir)
    return FixtureBackend(cfg)


async def decompile(artifact: BinaryArtifact, cfg: DecompilerBackendConfig, output_dir: str = '.') -> Tuple[List[RawFunction], CallGraph]:
    """Decompiles an artifact with the configured backend.

    :param artifact: a loaded artifact
    :param cfg: the decompiler configuration
    :param output_dir: run output directory |default| :code:`.`
    :raises ~vulbin.type.UnsupportedFormat: for artifacts of format Unknown
    :raises ~vulbin.type.DecompilerException: see :const:`~vulbin.decompiler.base.DecompilerBackend.decompile()`
    """
    return await create_backend(cfg, output_dir).decompile(artifact)
