#  Copyright (c) 2024. VulBin Authors
"""
Fixture Decompiler
------------------

Replays recorded decompiler output, so tests and demos never need an installed decompiler.

For an artifact the first existing directory of

#. :code:`<fixture_dir>/<content_hash>/`
#. :code:`<fixture_dir>/<binary file name without extension>/`
#. :code:`<fixture_dir>/`

is read following the output contract described in :doc:`vulbin.decompiler.base`.

*******************
Class Documentation
*******************
"""
import os
from typing import List, Tuple

from vulbin.config import DecompilerBackendConfig
from vulbin.decompiler.base import DecompilerBackend, read_output_dir
from vulbin.object.binary import BinaryArtifact, RawFunction, CallGraph

__all__ = ['FixtureBackend']


class FixtureBackend(DecompilerBackend):
    """Reads pre-recorded output from :code:`fixture_dir`"""

    def __init__(self, cfg: DecompilerBackendConfig):
        super(FixtureBackend, self).__init__()
        self.cfg: DecompilerBackendConfig = cfg

    def resolve_dir(self, artifact: BinaryArtifact) -> str:
        root = self.cfg.fixture_dir
        stem = os.path.splitext(os.path.basename(artifact.path))[0]
        for candidate in (os.path.join(root, artifact.content_hash), os.path.join(root, stem)):
            if os.path.isdir(candidate):
                return candidate
        return root

    async def decompile(self, artifact: BinaryArtifact) -> Tuple[List[RawFunction], CallGraph]:
        self.check_supported(artifact)
        directory = self.resolve_dir(artifact)
        self.logger.debug(f'replaying fixture {directory} for {artifact.short_hash}')
        return read_output_dir(artifact, directory, self.logger)
