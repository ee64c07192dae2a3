#  Copyright (c) 2024. VulBin Authors
"""
External Decompiler
-------------------

Runs a user configured decompiler (for example a Ghidra headless export script or RetDec) once per artifact.

The command template receives :code:`{input_path}` and :code:`{output_dir}`; the tool has to leave its results in
:code:`{output_dir}` following the output contract described in :doc:`vulbin.decompiler.base`.
The environment variable :code:`VULBIN_DECOMPILER` overrides the configured template.

.. code-block:: json

    {"decompiler": {"kind": "external_tool",
                    "command_template": "retdec-export {input_path} {output_dir}",
                    "timeout_seconds": 900}}

*******************
Class Documentation
*******************
"""
import asyncio
import os
import shlex
import shutil
from typing import List, Tuple

from vulbin.config import DecompilerBackendConfig
from vulbin.decompiler.base import DecompilerBackend, read_output_dir
from vulbin.object.binary import BinaryArtifact, RawFunction, CallGraph
from vulbin.type import BackendLaunchFailure, BackendTimeout

__all__ = ['ExternalToolBackend']


class ExternalToolBackend(DecompilerBackend):
    """Spawns the configured decompiler as a subprocess"""

    def __init__(self, cfg: DecompilerBackendConfig, output_dir: str):
        """
        :param cfg: decompiler configuration of kind :const:`~vulbin.type.DecompilerKind.EXTERNAL_TOOL`
        :param output_dir: run output directory, tool output goes to :code:`<output_dir>/decompiled/<content_hash>`
        """
        super(ExternalToolBackend, self).__init__()
        self.cfg: DecompilerBackendConfig = cfg
        self.output_dir: str = output_dir

    def build_command(self, artifact: BinaryArtifact, tool_dir: str) -> List[str]:
        template = self.cfg.effective_command()
        if not template:
            raise BackendLaunchFailure('no decompiler command configured')
        return [arg.replace('{input_path}', os.path.abspath(artifact.path)).replace('{output_dir}', tool_dir)
                for arg in shlex.split(template)]

    async def decompile(self, artifact: BinaryArtifact) -> Tuple[List[RawFunction], CallGraph]:
        self.check_supported(artifact)
        tool_dir = os.path.abspath(os.path.join(self.output_dir, 'decompiled', artifact.content_hash))
        if os.path.isdir(tool_dir):
            shutil.rmtree(tool_dir)
        os.makedirs(tool_dir)
        argv = self.build_command(artifact, tool_dir)
        self.logger.info(f'running decompiler for {artifact.short_hash}: {argv[0]}')
        try:
            proc = await asyncio.create_subprocess_exec(*argv, stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.PIPE)
        except OSError as e:
            raise BackendLaunchFailure(f'could not start {argv[0]}: {e}') from e
        try:
            _, stderr = await asyncio.wait_for(proc.communicate(), timeout=self.cfg.timeout_seconds)
        except asyncio.TimeoutError:
            proc.kill()
            await proc.wait()
            raise BackendTimeout(f'decompiler did not finish within {self.cfg.timeout_seconds}s')
        if proc.returncode != 0:
            tail = stderr.decode('utf-8', errors='replace').strip().splitlines()[-5:]
            raise BackendLaunchFailure(f'decompiler exited with code {proc.returncode}: {" | ".join(tail)}')
        return read_output_dir(artifact, tool_dir, self.logger)
