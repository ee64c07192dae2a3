#  Copyright (c) 2024. VulBin Authors
"""
vulbin
------

Detect CWE-class weaknesses in stripped binaries: decompile, make vulnerability features
prominent in the pseudo-code, analyze every function callee-first through a persistent
queue and classify each one against CWE knowledge documents with a language-model backend.

.. code-block:: python

    import asyncio
    from vulbin.config import load_config
    from vulbin.pipeline import AnalysisPipeline

    async def run():
        pipeline = await AnalysisPipeline(load_config('vulbin.json'))
        report = await pipeline.analyze('a.out')
        print(report.cwe_verdicts)
        await pipeline.close()

    asyncio.run(run())
"""

VERSION = (1, 0, 0, '')

__version__ = '1.0.0'
