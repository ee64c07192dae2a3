#  Copyright (c) 2024. VulBin Authors
"""
Prominence
----------

Makes vulnerability features of decompiled functions prominent: an optimization decision agent picks actions per
function and three action agents rename identifiers, recover structure definitions and append vulnerability and
functionality comments. Every rewrite is machine checked to keep the statement token stream of the raw code.

Enhanced functions are written to :code:`<output_dir>/enhanced/<function_id>.c` with the rename map, comments and plan
in a sidecar :code:`<function_id>.meta.json`.

.. toctree::
   :hidden:
   :maxdepth: 1

   vulbin.prominence.tokenizer
   vulbin.prominence.agents
   vulbin.prominence.engine

"""

__all__ = []
